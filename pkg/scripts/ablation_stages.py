"""Mean last-epoch PMR against the number of cascade stages, over several seeds.

    python3 scripts/ablation_stages.py --stages 1 3 5 7 --seeds 0 1 2 3 4
"""

import argparse

import numpy as np

from cpr.experiments import StageAblation, stage_ablation


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--stages", type=int, nargs="+", default=[1, 3, 7])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--ratio", type=float, default=0.5)
    ap.add_argument("--topk", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=3)
    args = ap.parse_args()

    setup = StageAblation(
        stages=tuple(args.stages), seeds=tuple(args.seeds), selection_ratio=args.ratio,
        final_topk=args.topk, epochs=args.epochs,
    )
    res = stage_ablation(setup)
    print("stages," + ",".join(f"seed{s}" for s in setup.seeds) + ",mean")
    for n, vals in res.items():
        print(f"{n}," + ",".join(f"{v:.4f}" for v in vals) + f",{np.mean(vals):.4f}")


if __name__ == "__main__":
    main()
