"""Accuracy and TPR gaps for every lambda in a grid, per seed (JSON lines on stdout).

Used to pick the default lambda grid and the validation accuracy budget.

    python3 scripts/lambda_table.py --seeds 0 1 2 --shift 2.75 --lambdas 0 100 200 400 800 1600
"""

import argparse
import json

from w2fair.data import ClassBias, SyntheticSpec, generate
from w2fair.trainer import TrainConfig, evaluate, make_splits, train_baseline, train_regularized


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--shift", type=float, default=2.75)
    ap.add_argument("--lambdas", type=float, nargs="+", default=[0, 100, 200, 400, 800, 1600])
    ap.add_argument("--grid-steps", type=int, default=20)
    ap.add_argument("--cls", type=int, default=2)
    ap.add_argument("--toward", type=int, default=3)
    args = ap.parse_args()
    for seed in args.seeds:
        ds = generate(SyntheticSpec(bias={args.cls: ClassBias(toward=args.toward, shift=args.shift)}, seed=seed))
        cfg = TrainConfig(seed=seed, grid_steps=args.grid_steps)
        splits = make_splits(ds, cfg)
        for lam in args.lambdas:
            if lam == 0:
                params, _ = train_baseline(splits, cfg)
            else:
                params, _ = train_regularized(splits, cfg, [args.cls], lam=lam)
            v, t = evaluate(params, splits.val), evaluate(params, splits.test)
            print(json.dumps({"seed": seed, "lambda": lam, "val_acc": v.accuracy, "test_acc": t.accuracy,
                              "val_gap": v.tpr_gap.tolist(), "test_gap": t.tpr_gap.tolist()}), flush=True)


if __name__ == "__main__":
    main()
