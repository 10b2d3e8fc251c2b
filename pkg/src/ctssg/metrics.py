"""Multi-label evaluation: macro F1, AUROC, average precision, accuracy.

Per-label values that are undefined (F1 with no predicted and no actual
positives, AUROC without both classes, AP without positives) are NaN and are
left out of the macro averages; the report counts how many were skipped.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DimensionError, ValidationError


def _check(probs, targets, unit_interval: bool = True) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(probs, dtype=np.float64)
    t = np.asarray(targets)
    if p.shape != t.shape:
        raise DimensionError(f"scores {p.shape} vs targets {t.shape}")
    if not np.all((t == 0) | (t == 1)):
        raise ValidationError("targets must be binary")
    if unit_interval and p.size and (p.min() < 0 or p.max() > 1):
        raise ValidationError("probabilities must lie in [0, 1]")
    return p, t.astype(bool)


def _as_2d(p: np.ndarray, t: np.ndarray):
    return (p[:, None], t[:, None]) if p.ndim == 1 else (p, t)


def per_label_f1(probs, targets, threshold: float = 0.5) -> np.ndarray:
    p, t = _as_2d(*_check(probs, targets))
    pred = p >= threshold
    tp = (pred & t).sum(axis=0)
    fp = (pred & ~t).sum(axis=0)
    fn = (~pred & t).sum(axis=0)
    denom = 2 * tp + fp + fn
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, 2 * tp / np.maximum(denom, 1), np.nan)


def _nanmean(x: np.ndarray) -> float:
    x = x[~np.isnan(x)]
    return float(x.mean()) if x.size else math.nan


def macro_f1(probs, targets, threshold: float = 0.5) -> float:
    return _nanmean(per_label_f1(probs, targets, threshold))


def auroc(scores, targets) -> float:
    """Mann-Whitney AUROC for one label; ties count one half. NaN if degenerate."""
    s, t = _check(scores, targets, unit_interval=False)
    s, t = s.ravel(), t.ravel()
    n_pos = int(t.sum())
    n_neg = t.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return math.nan
    ranks = rankdata(s, method="average")
    return float((ranks[t].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def average_precision(scores, targets) -> float:
    """Step-wise AP: mean precision at each positive's rank (stable descending sort)."""
    s, t = _check(scores, targets, unit_interval=False)
    s, t = s.ravel(), t.ravel()
    if not t.any():
        return math.nan
    order = np.argsort(-s, kind="stable")
    hits = t[order]
    tp = np.cumsum(hits)
    ranks = np.arange(1, s.size + 1)
    return float((tp[hits] / ranks[hits]).mean())


def per_label_accuracy(probs, targets, threshold: float = 0.5) -> np.ndarray:
    p, t = _as_2d(*_check(probs, targets))
    return ((p >= threshold) == t).mean(axis=0)


def accuracy(probs, targets, threshold: float = 0.5) -> float:
    return float(per_label_accuracy(probs, targets, threshold).mean())


def _columns(fn, scores, targets) -> np.ndarray:
    s, t = _as_2d(*_check(scores, targets, unit_interval=False))
    return np.array([fn(s[:, m], t[:, m]) for m in range(s.shape[1])])


@dataclass
class MetricsReport:
    macro_f1: float
    auroc: float
    map: float
    accuracy: float
    per_label: dict = field(default_factory=dict)
    skipped: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def clean(x):
            if isinstance(x, float) and math.isnan(x):
                return None
            if isinstance(x, list):
                return [clean(v) for v in x]
            if isinstance(x, dict):
                return {k: clean(v) for k, v in x.items()}
            return x

        return clean(asdict(self))


def evaluate(probs, targets, threshold: float = 0.5) -> MetricsReport:
    f1 = per_label_f1(probs, targets, threshold)
    au = _columns(auroc, probs, targets)
    ap = _columns(average_precision, probs, targets)
    acc = per_label_accuracy(probs, targets, threshold)
    return MetricsReport(
        macro_f1=_nanmean(f1),
        auroc=_nanmean(au),
        map=_nanmean(ap),
        accuracy=float(acc.mean()),
        per_label={
            "f1": [float(x) for x in f1],
            "auroc": [float(x) for x in au],
            "ap": [float(x) for x in ap],
            "accuracy": [float(x) for x in acc],
        },
        skipped={"f1": int(np.isnan(f1).sum()), "auroc": int(np.isnan(au).sum()), "ap": int(np.isnan(ap).sum())},
    )
