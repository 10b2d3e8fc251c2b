"""Experiment runs behind the CLI: train, eval, ablation and robustness sweeps.

Every function here is deterministic in its config and seeds and writes
only CSV/JSON next to a copy of the resolved config.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, load_train_state, save_checkpoint, save_train_state
from .config import ExperimentConfig, scaled_q
from .errors import ValidationError
from .graph import build_edges
from .metrics import MetricsReport, evaluate
from .model import CTSSG, count_parameters
from .synth import Dataset, add_noise, generate, load_dataset, z_translate
from .train import evaluate_model, history_csv, read_history_csv, train

log = logging.getLogger(__name__)

ABLATION_AXES = ("K", "q", "L", "operator", "topology", "components")
COMPONENTS = ("full", "no_positional", "unit_weights", "no_residual", "no_layernorm", "fully_connected")
ABLATION_COLUMNS = ("axis_value", "seed", "macro_f1", "auroc", "map", "accuracy", "n_params", "n_edges")
ROBUSTNESS_COLUMNS = ("perturbation", "macro_f1", "auroc")

# full-depth protocol grids; shifts are rescaled to shallower volumes (see default_grid)
FULL_SHIFTS = (-30, -15, 0, 15, 30)
FULL_DEPTH = 240
MAX_SHIFT = 30
NOISE_RANGE = (0.01, 0.07)
NOISE_GRID = (0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07)


@dataclass
class Splits:
    train: Dataset
    val: Dataset
    test: Dataset


def _subset(ds: Dataset, lo: int, hi: int) -> Dataset:
    return Dataset(ds.volumes[lo:hi], ds.labels[lo:hi], ds.indices[lo:hi], ds.seed)


def make_splits(cfg: ExperimentConfig, data_dir: str | Path | None = None) -> Splits:
    """Contiguous train/val/test index ranges, generated or read from disk."""
    d = cfg.data
    total = d.n_train + d.n_val + d.n_test
    if data_dir is None:
        ds = generate(cfg.synth, total)
    else:
        ds = load_dataset(data_dir)
        if len(ds) < total:
            raise ValidationError(f"{data_dir} holds {len(ds)} volumes, config needs {total}")
        want = (cfg.synth.n_slices, cfg.synth.height, cfg.synth.width)
        if ds.volumes.shape[1:] != want or ds.labels.shape[1] != cfg.synth.n_labels:
            raise ValidationError(f"{data_dir}: volumes {ds.volumes.shape[1:]} / {ds.labels.shape[1]} labels do not match config {want}")
    a, b = d.n_train, d.n_train + d.n_val
    return Splits(_subset(ds, 0, a), _subset(ds, a, b), _subset(ds, b, total))


def build_model(cfg: ExperimentConfig, seed: int) -> CTSSG:
    return CTSSG(cfg.encoder, cfg.graph_configs(), seed=seed)


def _write(path: Path, text: str) -> None:
    path.write_text(text)


def _report_json(doc: dict) -> str:
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def _eval_split(splits: Splits) -> tuple[str, Dataset]:
    # test when present, otherwise validation
    return ("test", splits.test) if len(splits.test) else ("val", splits.val)


# -- train / eval ----------------------------------------------------------


def run_train(
    cfg: ExperimentConfig,
    out: str | Path,
    seed: int,
    resume: bool = False,
    force: bool = False,
    data_dir: str | Path | None = None,
    splits: Splits | None = None,
) -> dict:
    """Train one seed into ``out``; returns the report dict.

    ``out`` receives config.json, history.csv, report.json, ``checkpoint/``
    (best validation parameters) and ``last/`` (optimizer state for resume).
    """
    out = Path(out)
    if out.exists() and any(out.iterdir()) and not (resume or force):
        raise ValidationError(f"{out} is not empty; pass --force to overwrite or --resume to continue")
    if force and not resume and out.exists():
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)

    cfg = cfg.with_updates(train={"seed": seed})
    splits = splits or make_splits(cfg, data_dir)
    model = build_model(cfg, seed)
    state = None
    if resume and (out / "last" / "state.json").exists():
        prev = read_history_csv((out / "history.csv").read_text()) if (out / "history.csv").exists() else []
        state = load_train_state(out / "last", model, prev)
        log.info("resuming %s at step %d", out, state.step)
    _write(out / "config.json", cfg.to_json())

    state = train(model, splits.train, splits.val, cfg.train, state)
    save_train_state(out / "last", model, state)
    _write(out / "history.csv", history_csv(state.history))

    model.load_arrays(state.best_params)
    val = evaluate_model(model, splits.val, cfg.train.threshold)
    test = evaluate_model(model, splits.test, cfg.train.threshold) if len(splits.test) else None
    save_checkpoint(out / "checkpoint", model, step=state.best_step, metric=_finite(state.best_metric))
    report = {
        "name": cfg.name,
        "seed": seed,
        "config_hash": model.hash,
        "n_params": model.n_parameters(),
        "steps": state.step,
        "best_step": state.best_step,
        "val": val.to_dict(),
        "test": test.to_dict() if test else None,
    }
    _write(out / "report.json", _report_json(report))
    return report


def _finite(x: float):
    return x if math.isfinite(x) else None


def load_run(run_dir: str | Path, cfg: ExperimentConfig | None = None) -> tuple[ExperimentConfig, CTSSG]:
    """Rebuild the model from ``run_dir/checkpoint``; hash must match ``cfg``."""
    run_dir = Path(run_dir)
    ckpt = run_dir / "checkpoint" if (run_dir / "checkpoint").is_dir() else run_dir
    if cfg is None:
        for cand in (ckpt / "config.json", ckpt.parent / "config.json"):
            if cand.exists():
                cfg = ExperimentConfig.load(cand)
                break
        else:
            raise ValidationError(f"no config.json next to {ckpt}; pass --config")
    model = build_model(cfg, cfg.train.seed)
    load_checkpoint(ckpt, model)
    return cfg, model


def run_eval(run_dir: str | Path, cfg: ExperimentConfig | None = None, data_dir=None, split: str = "test") -> MetricsReport:
    cfg, model = load_run(run_dir, cfg)
    splits = make_splits(cfg, data_dir)
    ds = getattr(splits, split)
    if len(ds) == 0:
        raise ValidationError(f"{split} split is empty")
    return evaluate_model(model, ds, cfg.train.threshold)


# -- ablation --------------------------------------------------------------


def default_values(axis: str, cfg: ExperimentConfig) -> list[str]:
    n = cfg.encoder.n_nodes
    return {
        "K": ["1", "3", "5"],
        "L": ["1", "3", "5"],
        "q": sorted({"1", str(scaled_q(n)), str(n - 1)}, key=int),
        "operator": ["chebyshev", "graph_conv"],
        "topology": ["sparse", "fully_connected"],
        "components": list(COMPONENTS),
    }[axis]


def ablation_config(cfg: ExperimentConfig, axis: str, value: str) -> ExperimentConfig:
    """Apply one ablation setting as an independent toggle on ``cfg``."""
    try:
        if axis == "K":
            return cfg.with_updates(encoder={"cheb_order": int(value)})
        if axis == "L":
            return cfg.with_updates(encoder={"depth": int(value)}, graph={"q_per_layer": None})
        if axis == "q":
            return cfg.with_updates(graph={"q": int(value), "q_per_layer": None})
        if axis == "operator":
            return cfg.with_updates(encoder={"operator": value})
        if axis == "topology":
            return cfg.with_updates(graph={"topology": value})
    except ValueError as exc:
        raise ValidationError(f"ablation value {value!r} for axis {axis}: {exc}") from exc
    if axis == "components":
        toggles = {
            "full": {},
            "no_positional": {"encoder": {"use_positional": False}},
            "unit_weights": {"graph": {"weighted": False}},
            "no_residual": {"encoder": {"use_residual": False}},
            "no_layernorm": {"encoder": {"use_layernorm": False}},
            "fully_connected": {"graph": {"topology": "fully_connected"}},
        }
        if value not in toggles:
            raise ValidationError(f"unknown component toggle {value!r}; choose from {', '.join(COMPONENTS)}")
        return cfg.with_updates(**toggles[value])
    raise ValidationError(f"unknown ablation axis {axis!r}; choose from {', '.join(ABLATION_AXES)}")


def _fmt(x) -> str:
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


def _ablation_job(job: tuple) -> dict:
    cfg_doc, axis, value, seed, data_dir = job
    cfg = ExperimentConfig.from_dict(cfg_doc).with_updates(train={"seed": seed})
    splits = make_splits(cfg, data_dir)
    model = build_model(cfg, seed)
    state = train(model, splits.train, splits.val, cfg.train)
    model.load_arrays(state.best_params)
    _, ds = _eval_split(splits)
    rep = evaluate_model(model, ds, cfg.train.threshold)
    n_edges = sum(len(build_edges(g)) for g in cfg.graph_configs())
    return {
        "axis_value": value,
        "seed": seed,
        "macro_f1": rep.macro_f1,
        "auroc": rep.auroc,
        "map": rep.map,
        "accuracy": rep.accuracy,
        "n_params": count_parameters(cfg.encoder),
        "n_edges": n_edges,
    }


def run_ablate(
    cfg: ExperimentConfig,
    axis: str,
    values: list[str] | None = None,
    seeds=None,
    threads: int = 1,
    data_dir=None,
) -> list[dict]:
    """One trained run per (value, seed), rows in (value, seed) order."""
    if axis not in ABLATION_AXES:
        raise ValidationError(f"unknown ablation axis {axis!r}; choose from {', '.join(ABLATION_AXES)}")
    values = list(values) if values else default_values(axis, cfg)
    seeds = list(seeds) if seeds is not None else list(cfg.seeds)
    jobs = []
    for v in values:
        sub = ablation_config(cfg, axis, v)  # validate before launching anything
        for s in seeds:
            jobs.append((sub.to_dict(), axis, v, s, None if data_dir is None else str(data_dir)))
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_ablation_job, jobs))  # map keeps submission order
    else:
        rows = [_ablation_job(j) for j in jobs]
    for r in rows:
        log.info("%s=%s seed=%d macro_f1=%.4f n_params=%d n_edges=%d", axis, r["axis_value"], r["seed"], r["macro_f1"], r["n_params"], r["n_edges"])
    return rows


def rows_csv(rows: list[dict], columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


# -- robustness ------------------------------------------------------------


def default_grid(mode: str, n_slices: int) -> list[float]:
    if mode == "noise":
        return [0.0, *NOISE_GRID]
    if mode != "zshift":
        raise ValidationError(f"unknown robustness mode {mode!r}")
    if n_slices > MAX_SHIFT:
        return list(FULL_SHIFTS)
    # keep the relative displacement of the full-depth protocol
    return sorted({int(round(s * n_slices / FULL_DEPTH)) for s in FULL_SHIFTS})


def check_grid(mode: str, grid, n_slices: int) -> list:
    out = []
    for g in grid:
        if mode == "zshift":
            if float(g) != int(g):
                raise ValidationError(f"z-shift {g} is not a whole number of slices")
            g = int(g)
            if abs(g) > MAX_SHIFT:
                raise ValidationError(f"z-shift {g} outside [-{MAX_SHIFT}, {MAX_SHIFT}]")
            if abs(g) >= n_slices:
                raise ValidationError(f"z-shift {g} must be smaller than the volume depth {n_slices}")
        else:
            g = float(g)
            if g != 0 and not NOISE_RANGE[0] <= g <= NOISE_RANGE[1]:
                raise ValidationError(f"noise sigma {g} outside {{0}} U [{NOISE_RANGE[0]}, {NOISE_RANGE[1]}]")
        out.append(g)
    return out


def perturb(volumes: np.ndarray, indices, mode: str, value, noise_seed: int = 0) -> np.ndarray:
    if mode == "zshift":
        return np.stack([z_translate(v, value) for v in volumes]) if len(volumes) else volumes.copy()
    return np.stack([add_noise(v, value, [noise_seed, int(i)]) for v, i in zip(volumes, indices)]) if len(volumes) else volumes.copy()


def run_robustness(
    run_dir,
    mode: str,
    grid=None,
    cfg: ExperimentConfig | None = None,
    data_dir=None,
    noise_seed: int = 0,
) -> tuple[list[dict], MetricsReport]:
    """Evaluate a frozen checkpoint on perturbed copies of the evaluation split.

    Returns the per-grid rows and the unperturbed report.
    """
    cfg, model = load_run(run_dir, cfg)
    S = cfg.encoder.n_slices
    grid = check_grid(mode, default_grid(mode, S) if grid is None else grid, S)
    _, ds = _eval_split(make_splits(cfg, data_dir))
    thr = cfg.train.threshold
    clean = evaluate(model.predict_proba(ds.volumes), ds.labels, thr)
    rows = []
    for g in grid:
        vols = perturb(ds.volumes, ds.indices, mode, g, noise_seed)
        rep = evaluate(model.predict_proba(vols), ds.labels, thr)
        rows.append({"perturbation": g, "macro_f1": rep.macro_f1, "auroc": rep.auroc})
    return rows, clean


def seed_dir(out: Path, seed: int, n_seeds: int) -> Path:
    return out if n_seeds == 1 else out / f"seed_{seed}"


def replace_seeds(cfg: ExperimentConfig, seeds) -> ExperimentConfig:
    return replace(cfg, seeds=tuple(seeds)) if seeds is not None else cfg
