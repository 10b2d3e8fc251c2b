"""Model checkpoints and resumable training state on disk.

A checkpoint directory holds ``params.bin``/``params.json`` (the flat
container) and ``model.json`` echoing the encoder and graph configs plus
their hash. Loading refuses a checkpoint whose hash differs from the
requesting configuration.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .model import CTSSG
from .serialize import load_arrays, save_arrays
from .train import AdamState, TrainState


def save_checkpoint(path: str | Path, model: CTSSG, arrays: dict[str, np.ndarray] | None = None, **meta) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    save_arrays(path / "params", arrays if arrays is not None else model.arrays())
    doc = {
        "config_hash": model.hash,
        "encoder": asdict(model.cfg),
        "graphs": [asdict(g) for g in model.graph_cfgs],
        **meta,
    }
    (path / "model.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_checkpoint(path: str | Path, model: CTSSG) -> dict:
    """Load parameters into ``model``; returns the checkpoint's metadata."""
    path = Path(path)
    try:
        doc = json.loads((path / "model.json").read_text())
    except FileNotFoundError as exc:
        raise CheckpointError(f"no checkpoint at {path}") from exc
    if doc.get("config_hash") != model.hash:
        raise CheckpointError(
            f"checkpoint {path} was written for config hash {doc.get('config_hash')}, current config hashes to {model.hash}"
        )
    model.load_arrays(load_arrays(path / "params"))
    return doc


def save_train_state(path: str | Path, model: CTSSG, state: TrainState) -> None:
    path = Path(path)
    save_checkpoint(path, model)
    opt = {}
    for k in model.params:
        if k in state.adam.m:
            opt["m/" + k] = state.adam.m[k]
            opt["v/" + k] = state.adam.v[k]
    save_arrays(path / "optim", opt)
    save_arrays(path / "best", state.best_params)
    doc = {
        "step": state.step,
        "best_metric": state.best_metric,
        "best_step": state.best_step,
        "loss_sum": state.loss_sum,
        "loss_count": state.loss_count,
    }
    (path / "state.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_train_state(path: str | Path, model: CTSSG, history: list[dict]) -> TrainState:
    path = Path(path)
    load_checkpoint(path, model)
    doc = json.loads((path / "state.json").read_text())
    opt = load_arrays(path / "optim")
    adam = AdamState(
        m={k[2:]: v for k, v in opt.items() if k.startswith("m/")},
        v={k[2:]: v for k, v in opt.items() if k.startswith("v/")},
    )
    return TrainState(
        step=doc["step"],
        adam=adam,
        best_metric=doc["best_metric"],
        best_step=doc["best_step"],
        best_params=load_arrays(path / "best"),
        history=list(history),
        loss_sum=doc["loss_sum"],
        loss_count=doc["loss_count"],
    )
