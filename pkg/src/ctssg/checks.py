"""Standalone oracle suites: each compares a production path to an independent reference.

Used by ``ctssg oracle-check`` as a gate; the pytest suite covers the same
ground in finer pieces.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .graph import GraphConfig, build_graph, edge_count
from .metrics import accuracy, auroc, average_precision, macro_f1
from .model import CTSSG, EncoderConfig, cheb_conv, encode

SUITES = ("cheb", "laplacian", "grad", "metrics")


@dataclass
class SuiteResult:
    name: str
    passed: bool
    cases: int
    worst: float
    tolerance: float
    seconds: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        msg = f"{status} {self.name}: {self.cases} cases, worst {self.worst:.3e} (tol {self.tolerance:.0e}), {self.seconds:.2f}s"
        return msg + (f" -- {self.detail}" if self.detail else "")


def eigen_filter(X: np.ndarray, L_hat: np.ndarray, theta) -> np.ndarray:
    """Apply sum_k T_k(L_hat) X theta_k in the eigenbasis with T_k(x) = cos(k arccos x)."""
    lam, U = np.linalg.eigh(L_hat)
    ang = np.arccos(np.clip(lam, -1.0, 1.0))
    Y = U.T @ X
    out = np.zeros((X.shape[0], theta[0].shape[1]))
    for k, th in enumerate(theta):
        out += U @ (np.cos(k * ang)[:, None] * Y) @ th
    return out


def random_graph_config(rng: np.random.Generator, n_max: int = 16) -> GraphConfig:
    n = int(rng.integers(2, n_max + 1))
    return GraphConfig(
        n=n,
        q=int(rng.integers(1, n)),
        s_z=float(10 ** rng.uniform(-3, -1)),
        include_self_loops=bool(rng.integers(2)),
    )


def check_cheb(cases: int = 100, seed: int = 0, tol: float = 1e-10) -> SuiteResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        g = build_graph(random_graph_config(rng))
        K = int(rng.integers(1, 6))
        d_in, d_out = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        X = rng.normal(size=(g.n, d_in))
        theta = [rng.normal(size=(d_in, d_out)) for _ in range(K)]
        got = cheb_conv(X, g.L_hat, theta).data
        ref = eigen_filter(X, g.L_hat, theta)
        worst = max(worst, float(np.max(np.abs(got - ref)) / max(np.max(np.abs(ref)), 1e-300)))
    return SuiteResult("cheb", worst < tol, cases, worst, tol, time.perf_counter() - t0)


def check_laplacian(cases: int = 50, seed: int = 1, n_max: int = 64) -> SuiteResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    failures = []
    for c in range(cases):
        cfg = random_graph_config(rng, n_max)
        g = build_graph(cfg)
        twin = build_graph(GraphConfig(cfg.n, cfg.q, cfg.s_z, include_self_loops=not cfg.include_self_loops))
        ev = np.linalg.eigvalsh(g.L)
        evh = np.linalg.eigvalsh(g.L_hat)
        rowsum = float(np.max(np.abs(g.L.sum(axis=1))))
        loops = float(np.max(np.abs(g.L - twin.L)))
        n_pairs = int(np.count_nonzero(np.triu(g.A, 1)))
        checks = {
            "A symmetric": np.array_equal(g.A, g.A.T),
            "row sums": rowsum < 1e-12,
            "PSD": ev[0] >= -1e-10,
            "scaled spectrum": evh[0] >= -1 - 1e-9 and evh[-1] <= 1 + 1e-9,
            "self-loop invariance": loops < 1e-12,
            "edge count": n_pairs == edge_count(cfg.n, cfg.q),
        }
        worst = max(worst, rowsum, loops)
        failures += [f"case {c} ({cfg.n=}, {cfg.q=}): {k}" for k, ok in checks.items() if not ok]
    return SuiteResult("laplacian", not failures, cases, worst, 1e-12, time.perf_counter() - t0, "; ".join(failures[:3]))


def _op_cases(rng: np.random.Generator):
    """(name, f, params) triples covering every differentiable op."""
    P = lambda *s: T.Tensor(rng.normal(size=s), requires_grad=True)  # noqa: E731
    y = rng.integers(0, 2, size=(3, 4))
    a, b = P(5, 4), P(4, 3)
    x, gam, bet = P(4, 6), P(6), P(6)
    W, bias = P(6, 3), P(3)
    u, v = P(3, 4), P(3, 4)
    img, k, kb = P(2, 3, 6, 6), P(4, 3, 3, 3), P(4)
    return [
        ("matmul", lambda p: T.tensor_sum(T.matmul(*p)), [a, b]),
        ("add/mul", lambda p: T.tensor_sum(T.mul(T.add(p[0], p[1]), p[1])), [u, v]),
        ("gelu", lambda p: T.tensor_sum(T.gelu(p[0])), [u]),
        ("layer_norm", lambda p: T.tensor_sum(T.mul(T.layer_norm(*p), T.Tensor(np.arange(24.0).reshape(4, 6)))), [x, gam, bet]),
        ("linear", lambda p: T.tensor_sum(T.gelu(T.linear(*p))), [x, W, bias]),
        ("mean_over_axis", lambda p: T.tensor_sum(T.mul(T.mean_over_axis(p[0], 0), T.mean_over_axis(p[0], 0))), [u]),
        ("bce_with_logits", lambda p: T.bce_with_logits(p[0], y), [u]),
        ("conv2d", lambda p: T.tensor_sum(T.gelu(T.conv2d(p[0], p[1], p[2], stride=2, padding=1))), [img, k, kb]),
    ]


GRAD_CONFIG = dict(n_slices=12, height=8, width=8, dim=8, cheb_order=3, depth=1, n_labels=4)


def check_grad(seed: int = 0, op_tol: float = 1e-6, model_tol: float = 1e-4) -> SuiteResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    errs = {}
    for name, f, params in _op_cases(rng):
        errs[name] = T.grad_check(f, params, h=1e-5)
    op_worst = max(errs.values())
    model_errs = {}
    for init in ("tiny_cnn", "flatten_linear"):
        cfg = EncoderConfig(**GRAD_CONFIG, feature_init=init)
        model = CTSSG(cfg, GraphConfig(n=cfg.n_nodes, q=1), seed=seed)
        # non-zero biases so every path carries gradient
        for k, p in model.params.items():
            if k.endswith(".b") or k.endswith("beta"):
                p.data = rng.normal(size=p.shape) * 0.1
        vols = rng.uniform(size=(2, cfg.n_slices, cfg.height, cfg.width))
        y = rng.integers(0, 2, size=(2, cfg.n_labels))
        names = list(model.params)
        f = lambda p: T.bce_with_logits(encode(vols, dict(zip(names, p)), model.graphs, cfg), y)  # noqa: E731
        model_errs[init] = T.grad_check(f, list(model.params.values()), h=1e-5)
    model_worst = max(model_errs.values())
    bad = [f"{k}={v:.2e}" for k, v in errs.items() if v >= op_tol] + [f"model[{k}]={v:.2e}" for k, v in model_errs.items() if v >= model_tol]
    detail = f"ops worst {op_worst:.2e}, model worst {model_worst:.2e}" + (f"; failing: {', '.join(bad)}" if bad else "")
    return SuiteResult("grad", not bad, len(errs) + len(model_errs), max(op_worst, model_worst), model_tol, time.perf_counter() - t0, detail)


# brute-force metric references, written independently of metrics.py


def brute_f1(pred: np.ndarray, t: np.ndarray) -> float:
    tp = sum(1 for p, y in zip(pred, t) if p and y)
    fp = sum(1 for p, y in zip(pred, t) if p and not y)
    fn = sum(1 for p, y in zip(pred, t) if not p and y)
    if tp + fp + fn == 0:
        return float("nan")
    return 2 * tp / (2 * tp + fp + fn)


def brute_auroc(s: np.ndarray, t: np.ndarray) -> float:
    pos = [a for a, y in zip(s, t) if y]
    neg = [a for a, y in zip(s, t) if not y]
    if not pos or not neg:
        return float("nan")
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


def brute_ap(s: np.ndarray, t: np.ndarray) -> float:
    order = sorted(range(len(s)), key=lambda i: -s[i])  # sorted() is stable
    ranked = [t[i] for i in order]
    if not any(ranked):
        return float("nan")
    precs = [sum(ranked[: r + 1]) / (r + 1) for r in range(len(ranked)) if ranked[r]]
    return sum(precs) / len(precs)


def _macro(vals) -> float:
    vals = [v for v in vals if v == v]
    return sum(vals) / len(vals) if vals else float("nan")


def _close(a: float, b: float, tol: float) -> bool:
    return (a != a and b != b) or abs(a - b) <= tol


def check_metrics(cases: int = 200, seed: int = 2, tol: float = 1e-12) -> SuiteResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    bad = 0
    for _ in range(cases):
        B, M = int(rng.integers(1, 12)), int(rng.integers(1, 5))
        probs = rng.integers(0, 5, size=(B, M)) / 4.0  # coarse grid forces ties
        t = rng.integers(0, 2, size=(B, M))
        pred = probs >= 0.5
        ref = {
            "f1": _macro([brute_f1(pred[:, m], t[:, m]) for m in range(M)]),
            "acc": _macro([float(np.mean(pred[:, m] == t[:, m])) for m in range(M)]),
            "auroc": [brute_auroc(probs[:, m], t[:, m]) for m in range(M)],
            "ap": [brute_ap(probs[:, m], t[:, m]) for m in range(M)],
        }
        got = {
            "f1": macro_f1(probs, t),
            "acc": accuracy(probs, t),
            "auroc": [auroc(probs[:, m], t[:, m]) for m in range(M)],
            "ap": [average_precision(probs[:, m], t[:, m]) for m in range(M)],
        }
        for k in ref:
            r, g = np.atleast_1d(ref[k]), np.atleast_1d(got[k])
            for a, b in zip(r, g):
                if not _close(a, b, tol):
                    bad += 1
                if a == a and b == b:
                    worst = max(worst, abs(a - b))
    fixed = auroc(np.array([0.1, 0.4, 0.35, 0.8]), np.array([0, 0, 1, 1]))
    ok = bad == 0 and fixed == 0.75
    return SuiteResult("metrics", ok, cases, worst, tol, time.perf_counter() - t0, f"fixed AUROC case = {fixed!r}" + (f"; {bad} mismatches" if bad else ""))


def run_suite(name: str) -> SuiteResult:
    return {"cheb": check_cheb, "laplacian": check_laplacian, "grad": check_grad, "metrics": check_metrics}[name]()
