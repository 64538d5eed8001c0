"""Held-out R@1 of a growing final Top-k schedule against a fixed Top-k.

    python3 scripts/progressive.py --seeds 0 1 2 3 4
"""

import argparse

from cpr.experiments import ProgressiveSetup, progressive_vs_fixed


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--epochs-per-cycle", type=int, default=4)
    ap.add_argument("--stages", type=int, default=3)
    ap.add_argument("--topk", type=int, nargs="+", default=[1, 2, 3, 4, 5], help="progressive schedule")
    ap.add_argument("--fixed", type=int, default=5)
    args = ap.parse_args()

    setup = ProgressiveSetup(
        seeds=tuple(args.seeds), epochs_per_cycle=args.epochs_per_cycle, num_stages=args.stages,
        progressive_topk=tuple(args.topk), fixed_topk=args.fixed,
    )
    res = progressive_vs_fixed(setup)
    print("seed,progressive_r1,fixed_r1")
    for s, p, f in zip(setup.seeds, res["progressive"], res["fixed"]):
        print(f"{s},{p:.4f},{f:.4f}")
    wins = sum(p >= f for p, f in zip(res["progressive"], res["fixed"]))
    print(f"# progressive >= fixed in {wins}/{len(setup.seeds)} seeds")


if __name__ == "__main__":
    main()
