"""Train the desk model once, then sweep z-translations and Gaussian noise.

    python3 scripts/run_robustness.py --config configs/desk.json --out results/robustness

Writes the training run under OUT/run and one CSV per perturbation mode.
Pass --grid-zshift / --grid-noise to override the default grids.
"""

import argparse
import logging
from pathlib import Path

from ctssg import runner
from ctssg.config import ExperimentConfig


def parse(text):
    return None if text is None else [float(x) for x in text.split(",")]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/desk.json")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/robustness")
    ap.add_argument("--grid-zshift")
    ap.add_argument("--grid-noise")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = ExperimentConfig.load(args.config)
    out = Path(args.out)
    run = out / "run"
    if not (run / "checkpoint").exists():
        runner.run_train(cfg, run, args.seed)
    for mode, grid in (("zshift", parse(args.grid_zshift)), ("noise", parse(args.grid_noise))):
        rows, clean = runner.run_robustness(run, mode, grid)
        (out / f"robustness_{mode}.csv").write_text(runner.rows_csv(rows, runner.ROBUSTNESS_COLUMNS))
        print(f"\n[{mode}] unperturbed macro-F1 {clean.macro_f1:.4f}")
        for r in rows:
            print(f"  {r['perturbation']:>6g}  macro-F1 {r['macro_f1']:.4f}  AUROC {r['auroc']:.4f}")


if __name__ == "__main__":
    main()
