"""Mean last-epoch PMR against the selection ratio at a fixed number of stages.

    python3 scripts/ablation_ratio.py --stages 3 --ratios 0.3 0.5 0.8
"""

import argparse

import numpy as np

from cpr.experiments import StageAblation, stage_ablation


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--stages", type=int, default=3)
    ap.add_argument("--ratios", type=float, nargs="+", default=[0.3, 0.5, 0.8])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--topk", type=int, default=5)
    args = ap.parse_args()

    print("ratio," + ",".join(f"seed{s}" for s in args.seeds) + ",mean")
    for r in args.ratios:
        setup = StageAblation(stages=(args.stages,), seeds=tuple(args.seeds), selection_ratio=r, final_topk=args.topk)
        vals = stage_ablation(setup)[args.stages]
        print(f"{r}," + ",".join(f"{v:.4f}" for v in vals) + f",{np.mean(vals):.4f}")


if __name__ == "__main__":
    main()
