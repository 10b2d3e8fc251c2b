"""Run every ablation axis on one config and print per-value summaries.

    python3 scripts/run_ablations.py --config configs/desk.json --seeds 0,1,2 --out results/ablations

Each axis writes ``ablate_<axis>.csv`` with one row per (value, seed). The
summary prints mean +/- std of macro-F1 per value next to the raw per-seed
array, so orderings can be compared without reading anything into them.
"""

import argparse
import logging
from pathlib import Path

import numpy as np

from ctssg import runner
from ctssg.config import ExperimentConfig


def summarize(axis, rows):
    print(f"\n[{axis}]")
    for v in dict.fromkeys(r["axis_value"] for r in rows):
        f1 = np.array([r["macro_f1"] for r in rows if r["axis_value"] == v])
        extra = rows[[r["axis_value"] for r in rows].index(v)]
        print(f"  {v:>16}  macro-F1 {np.nanmean(f1):.4f} +/- {np.nanstd(f1):.4f}  per-seed {np.round(f1, 4).tolist()}  params {extra['n_params']}  edges {extra['n_edges']}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/desk.json")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--axes", default=",".join(runner.ABLATION_AXES))
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", default="results/ablations")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = ExperimentConfig.load(args.config)
    seeds = [int(s) for s in args.seeds.split(",")]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())
    for axis in args.axes.split(","):
        rows = runner.run_ablate(cfg, axis, seeds=seeds, threads=args.threads)
        (out / f"ablate_{axis}.csv").write_text(runner.rows_csv(rows, runner.ABLATION_COLUMNS))
        summarize(axis, rows)


if __name__ == "__main__":
    main()
