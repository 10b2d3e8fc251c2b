"""Adam with linear warmup and a deterministic training loop.

Sample order is a pure function of ``(seed, position in the sample stream)``:
epoch ``e`` uses the permutation drawn from ``default_rng([seed, e])``, and
step ``t`` consumes stream positions ``[(t-1)*B, t*B)``. A run resumed at any
step therefore sees exactly the batches an uninterrupted run would.
"""

from __future__ import annotations

import copy
import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import NumericError, ValidationError
from .metrics import MetricsReport, evaluate
from .model import CTSSG
from .synth import Dataset

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("step", "train_loss", "val_macro_f1", "val_auroc", "val_map", "val_accuracy", "lr")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.99)
    eps: float = 1e-8
    batch_size: int = 4
    grad_accum: int = 1
    warmup_steps: int = 100
    max_steps: int = 2000
    eval_every: int = 100
    early_stop_metric: str = "macro_f1"
    seed: int = 0
    threshold: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(self.betas))
        if not self.lr >= 0:
            raise ValidationError("TrainConfig: lr must be >= 0")
        if not all(0 <= b < 1 for b in self.betas):
            raise ValidationError("TrainConfig: betas must lie in [0, 1)")
        if self.batch_size < 1 or self.grad_accum < 1 or self.eval_every < 1 or self.max_steps < 1:
            raise ValidationError("TrainConfig: batch_size, grad_accum, eval_every, max_steps must be >= 1")
        if not 0 <= self.warmup_steps <= self.max_steps:
            raise ValidationError("TrainConfig: need 0 <= warmup_steps <= max_steps")
        if self.early_stop_metric not in ("macro_f1", "auroc", "map", "accuracy"):
            raise ValidationError(f"TrainConfig: unknown early_stop_metric {self.early_stop_metric!r}")


def warmup_factor(step: int, warmup_steps: int) -> float:
    if warmup_steps <= 0:
        return 1.0
    return min(1.0, step / warmup_steps)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, T.Tensor], grads: dict[str, np.ndarray], state: AdamState, step: int, cfg: TrainConfig) -> float:
    """One bias-corrected Adam update in place; returns the effective learning rate."""
    if step < 1:
        raise ValidationError("adam_step: step counts from 1")
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"adam_step: non-finite gradient for {k} at step {step}")
    b1, b2 = cfg.betas
    lr = cfg.lr * warmup_factor(step, cfg.warmup_steps)
    c1, c2 = 1.0 - b1**step, 1.0 - b2**step
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValidationError(f"adam_step: grad {g.shape} vs param {p.shape} for {k}")
        m = state.m.get(k)
        v = state.v.get(k)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[k], state.v[k] = m, v
        p.data = p.data - (lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)).astype(p.dtype)
    return lr


class BatchStream:
    def __init__(self, n: int, seed: int):
        if n < 1:
            raise ValidationError("training split is empty")
        self.n, self.seed = n, seed
        self._perms: dict[int, np.ndarray] = {}

    def _perm(self, epoch: int) -> np.ndarray:
        if epoch not in self._perms:
            self._perms = {epoch: np.random.default_rng([self.seed, epoch]).permutation(self.n)}
        return self._perms[epoch]

    def take(self, start: int, count: int) -> np.ndarray:
        pos = np.arange(start, start + count)
        return np.array([self._perm(p // self.n)[p % self.n] for p in pos])


@dataclass
class TrainState:
    step: int = 0
    adam: AdamState = field(default_factory=AdamState)
    best_metric: float = -math.inf
    best_step: int = 0
    best_params: dict[str, np.ndarray] | None = None
    history: list[dict] = field(default_factory=list)
    loss_sum: float = 0.0
    loss_count: int = 0


def evaluate_model(model: CTSSG, ds: Dataset, threshold: float = 0.5) -> MetricsReport:
    return evaluate(model.predict_proba(ds.volumes), ds.labels, threshold)


def _score(rep: MetricsReport, metric: str) -> float:
    v = getattr(rep, metric)
    return -math.inf if math.isnan(v) else v


def train(
    model: CTSSG,
    train_ds: Dataset,
    val_ds: Dataset,
    cfg: TrainConfig,
    state: TrainState | None = None,
) -> TrainState:
    """Minimize mean BCE; keep the parameters with the best validation score.

    Pass a previously returned ``state`` to continue a run.
    """
    if len(val_ds) == 0:
        raise ValidationError("validation split is empty")
    stream = BatchStream(len(train_ds), cfg.seed)
    state = state or TrainState()
    if state.best_params is None:
        state.best_params = copy.deepcopy(model.arrays())
    names = list(model.params)
    per_step = cfg.batch_size * cfg.grad_accum
    while state.step < cfg.max_steps:
        step = state.step + 1
        idx = stream.take(state.step * per_step, per_step)
        grads = {k: np.zeros_like(model.params[k].data) for k in names}
        loss_val = 0.0
        for a in range(cfg.grad_accum):
            sl = idx[a * cfg.batch_size : (a + 1) * cfg.batch_size]
            with T.Tape() as tape:
                loss = T.bce_with_logits(model(train_ds.volumes[sl]), train_ds.labels[sl])
                if not math.isfinite(loss.item()):
                    raise NumericError(f"training diverged: non-finite loss at step {step}")
                tape.backward(loss)
            for k in names:
                grads[k] += tape.grad(model.params[k]) / cfg.grad_accum
            loss_val += loss.item() / cfg.grad_accum
        lr = adam_step(model.params, grads, state.adam, step, cfg)
        state.step = step
        state.loss_sum += loss_val
        state.loss_count += 1
        if step % cfg.eval_every == 0 or step == cfg.max_steps:
            rep = evaluate_model(model, val_ds, cfg.threshold)
            row = {
                "step": step,
                "train_loss": state.loss_sum / state.loss_count,
                "val_macro_f1": rep.macro_f1,
                "val_auroc": rep.auroc,
                "val_map": rep.map,
                "val_accuracy": rep.accuracy,
                "lr": lr,
            }
            state.history.append(row)
            state.loss_sum, state.loss_count = 0.0, 0
            score = _score(rep, cfg.early_stop_metric)
            if score > state.best_metric:
                state.best_metric, state.best_step = score, step
                state.best_params = copy.deepcopy(model.arrays())
            log.info("step %d loss %.4f val_f1 %.4f", step, row["train_loss"], rep.macro_f1)
    return state


def history_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_COLUMNS)
    for r in rows:
        w.writerow([r["step"]] + [_fmt(r[c]) for c in HISTORY_COLUMNS[1:]])
    return buf.getvalue()


def read_history_csv(text: str) -> list[dict]:
    rows = []
    for r in csv.DictReader(io.StringIO(text)):
        rows.append({k: (int(v) if k == "step" else float(v)) for k, v in r.items()})
    return rows


def _fmt(x: float) -> str:
    return "nan" if isinstance(x, float) and math.isnan(x) else repr(float(x))
