"""ctssg command line: gen-data, train, eval, ablate, robustness, oracle-check.

Exit status is 0 only when every requested run completed (and, for
oracle-check, every suite passed). Invalid configs exit 2 with a message
naming the failed check.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

from . import runner
from .checks import SUITES, run_suite
from .config import ExperimentConfig
from .errors import CheckpointError, DimensionError, NumericError, ValidationError
from .synth import generate, save_dataset

log = logging.getLogger("ctssg")


def _seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--seeds expects comma-separated integers, got {text!r}") from None


def _list(text: str) -> list[str]:
    return [s.strip() for s in text.split(",") if s.strip()]


def _load_config(path: str | None) -> ExperimentConfig:
    return ExperimentConfig.load(path) if path else ExperimentConfig()


def _prepare_out(out: Path, force: bool) -> None:
    if out.exists() and any(out.iterdir()):
        if not force:
            raise ValidationError(f"{out} already exists and is not empty; pass --force to overwrite")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)


def cmd_gen_data(args) -> int:
    cfg = _load_config(args.config)
    d = cfg.data
    count = d.n_train + d.n_val + d.n_test if args.count is None else args.count
    out = Path(args.out)
    _prepare_out(out, args.force)
    save_dataset(generate(cfg.synth, count), out, cfg.synth)
    print(f"wrote {count} volumes to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = runner.replace_seeds(_load_config(args.config), args.seeds)
    out = Path(args.out)
    if args.force and not args.resume:
        _prepare_out(out, True)
    splits = None
    for seed in cfg.seeds:
        if splits is None:
            splits = runner.make_splits(cfg, args.data)
        rep = runner.run_train(cfg, runner.seed_dir(out, seed, len(cfg.seeds)), seed, resume=args.resume, data_dir=args.data, splits=splits)
        print(f"seed {seed}: best step {rep['best_step']}, val macro-F1 {rep['val']['macro_f1']:.4f}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args.config) if args.config else None
    rep = runner.run_eval(args.checkpoint, cfg, args.data, args.split)
    text = json.dumps(rep.to_dict(), indent=1, sort_keys=True) + "\n"
    if args.out:
        out = Path(args.out)
        if out.exists() and not args.force:
            raise ValidationError(f"{out} exists; pass --force to overwrite")
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
    print(text, end="")
    return 0


def _write_csv(out: Path, name: str, text: str, force: bool) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    if path.exists() and not force:
        raise ValidationError(f"{path} exists; pass --force to overwrite")
    path.write_text(text)
    return path


def cmd_ablate(args) -> int:
    cfg = runner.replace_seeds(_load_config(args.config), args.seeds)
    rows = runner.run_ablate(cfg, args.axis, args.values, cfg.seeds, args.threads, args.data)
    out = Path(args.out)
    path = _write_csv(out, f"ablate_{args.axis}.csv", runner.rows_csv(rows, runner.ABLATION_COLUMNS), args.force)
    (out / "config.json").write_text(cfg.to_json())
    print(f"wrote {len(rows)} rows to {path}")
    return 0


def cmd_robustness(args) -> int:
    cfg = _load_config(args.config) if args.config else None
    rows, clean = runner.run_robustness(args.checkpoint, args.mode, args.grid, cfg, args.data, args.noise_seed)
    out = Path(args.out)
    path = _write_csv(out, f"robustness_{args.mode}.csv", runner.rows_csv(rows, runner.ROBUSTNESS_COLUMNS), args.force)
    print(f"unperturbed macro-F1 {clean.macro_f1:.4f}; wrote {len(rows)} rows to {path}")
    return 0


def cmd_oracle_check(args) -> int:
    names = SUITES if args.suite == "all" else (args.suite,)
    ok = True
    for name in names:
        res = run_suite(name)
        print(res.line())
        ok &= res.passed
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctssg", description="Slice-graph spectral encoder experiments on synthetic volumes.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="experiment JSON (defaults to the built-in desk config)")
        sp.add_argument("--out", required=out_required, help="output directory")
        sp.add_argument("--force", action="store_true", help="overwrite existing outputs")

    g = sub.add_parser("gen-data", help="write a synthetic dataset to disk")
    common(g)
    g.add_argument("--count", type=int, help="number of volumes (default: train+val+test)")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one model per seed")
    common(t)
    t.add_argument("--seeds", type=_seeds, help="comma-separated seeds, overriding the config")
    t.add_argument("--resume", action="store_true", help="continue from OUT/last if present")
    t.add_argument("--data", help="dataset directory from gen-data (default: generate in memory)")
    t.add_argument("--threads", type=int, default=1, help="accepted for symmetry; training is single-process")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a trained checkpoint")
    common(e, out_required=False)
    e.add_argument("--checkpoint", required=True, help="run directory or its checkpoint/ subdirectory")
    e.add_argument("--split", choices=("train", "val", "test"), default="test")
    e.add_argument("--data")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="sweep one ablation axis")
    common(a)
    a.add_argument("--axis", required=True, choices=runner.ABLATION_AXES)
    a.add_argument("--values", type=_list, help="comma-separated axis values (default: the standard grid)")
    a.add_argument("--seeds", type=_seeds)
    a.add_argument("--threads", type=int, default=1, help="worker processes for independent runs")
    a.add_argument("--data")
    a.set_defaults(func=cmd_ablate)

    r = sub.add_parser("robustness", help="evaluate a checkpoint under z-shifts or noise")
    common(r)
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--mode", required=True, choices=("zshift", "noise"))
    r.add_argument("--grid", type=lambda s: [float(x) for x in _list(s)], help="comma-separated shifts (slices) or sigmas; write --grid=-3,0,3 when the first value is negative")
    r.add_argument("--noise-seed", type=int, default=0)
    r.add_argument("--data")
    r.set_defaults(func=cmd_robustness)

    o = sub.add_parser("oracle-check", help="run the standalone oracle suites")
    o.add_argument("--suite", choices=(*SUITES, "all"), default="all")
    o.set_defaults(func=cmd_oracle_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (ValidationError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
