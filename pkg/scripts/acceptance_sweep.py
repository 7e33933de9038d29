"""Run the full pipeline on the synthetic acceptance dataset for several seeds.

Writes one run directory per seed plus the four export tables, and prints a
one-line summary per seed.

    python3 scripts/acceptance_sweep.py --out runs/acceptance --seeds 0 1 2 3 4
"""

import argparse
from pathlib import Path

from w2fair.cli import build_exports
from w2fair.data import acceptance_spec, generate
from w2fair.trainer import TrainConfig, run_pipeline


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/acceptance")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    args = ap.parse_args()
    out = Path(args.out)
    for seed in args.seeds:
        arts = run_pipeline(generate(acceptance_spec(seed)), TrainConfig(seed=seed), out / f"seed{seed}")
        b, t = arts.reports["baseline/test"], arts.reports["regularized/test"]
        print(f"seed {seed}: selected {list(arts.selection.classes)} lambda {arts.chosen_lambda} "
              f"acc {b.accuracy:.4f}->{t.accuracy:.4f} "
              f"|gap| {[round(abs(g), 3) for g in b.tpr_gap]} -> {[round(abs(g), 3) for g in t.tpr_gap]}")
    for name, text in build_exports([str(out)]).items():
        (out / name).write_text(text)
    print(f"exports written to {out}")


if __name__ == "__main__":
    main()
