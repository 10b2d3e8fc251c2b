"""Sequence graph over slice triplets.

Nodes are the N triplets of a volume, ordered along the z-axis. Two nodes at
most ``q`` steps apart are joined by an edge whose weight decays with their
physical separation::

    w_ij = 1 + 1 / (1 + C * |i - j| * s_z)

with ``s_z`` the slice spacing in decimeters and ``C`` slices per triplet.
The combinatorial Laplacian ``L = D - A`` is rescaled to
``L_hat = (2 / lambda_max) L - I`` so its spectrum lies in [-1, 1].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import NumericError, ValidationError

MM_PER_DM = 100.0
DENSE_EIG_LIMIT = 512


@dataclass(frozen=True)
class GraphConfig:
    """Graph topology and weighting.

    ``topology="fully_connected"`` is shorthand for ``q = n - 1``.
    ``weighted=False`` replaces every edge weight with 1 (ablation toggle).
    """

    n: int
    q: int = 1
    s_z: float = 0.0075
    include_self_loops: bool = False
    topology: str = "sparse"
    weighted: bool = True
    slices_per_node: int = 3

    def __post_init__(self):
        if self.n < 2:
            raise ValidationError(f"GraphConfig: n must be >= 2, got {self.n}")
        if self.q < 1:
            raise ValidationError(f"GraphConfig: q must be >= 1, got {self.q}")
        if not self.s_z > 0:
            raise ValidationError(f"GraphConfig: s_z must be > 0, got {self.s_z}")
        if self.topology not in ("sparse", "fully_connected"):
            raise ValidationError(f"GraphConfig: unknown topology {self.topology!r}")
        if self.slices_per_node < 1:
            raise ValidationError("GraphConfig: slices_per_node must be >= 1")

    @property
    def effective_q(self) -> int:
        if self.topology == "fully_connected":
            return self.n - 1
        return min(self.q, self.n - 1)

    @classmethod
    def from_mm(cls, n: int, spacing_mm: float, **kw) -> "GraphConfig":
        return cls(n=n, s_z=spacing_mm / MM_PER_DM, **kw)


def edge_weight(i: int, j: int, s_z: float, slices_per_node: int = 3) -> float:
    if not s_z > 0:
        raise ValidationError(f"edge_weight: s_z must be > 0, got {s_z}")
    return 1.0 + 1.0 / (1.0 + slices_per_node * abs(i - j) * s_z)


def build_edges(cfg: GraphConfig) -> list[tuple[int, int]]:
    """Undirected edges (i < j) with ``|i - j| <= q``; self-loops if configured."""
    q = cfg.effective_q
    edges = [(i, j) for i in range(cfg.n) for j in range(i + 1, min(cfg.n, i + q + 1))]
    if cfg.include_self_loops:
        edges = [(i, i) for i in range(cfg.n)] + edges
    return edges


def edge_count(n: int, q: int) -> int:
    q = min(q, n - 1)
    return q * n - q * (q + 1) // 2


def lambda_max(L: np.ndarray, method: str = "auto", tol: float = 1e-10, max_iter: int = 10000, shift: float = 0.0) -> float:
    """Largest eigenvalue of a symmetric PSD matrix.

    Dense ``eigvalsh`` up to ``DENSE_EIG_LIMIT`` nodes, power iteration on
    ``L + shift * I`` beyond (or when ``method="power"``).
    """
    L = np.asarray(L, dtype=np.float64)
    n = L.shape[0]
    if method == "auto":
        method = "dense" if n <= DENSE_EIG_LIMIT else "power"
    if method == "dense":
        lam = float(np.linalg.eigvalsh(L)[-1])
    elif method == "power":
        lam = _power_iteration(L, tol, max_iter, shift)
    else:
        raise ValidationError(f"lambda_max: unknown method {method!r}")
    if lam < 1e-12:
        raise NumericError(f"lambda_max: degenerate spectrum (largest eigenvalue {lam:.3e})")
    return lam


def _power_iteration(L: np.ndarray, tol: float, max_iter: int, shift: float) -> float:
    n = L.shape[0]
    M = L + shift * np.eye(n)
    # deterministic start with components along every eigenvector in practice
    v = np.linspace(1.0, 2.0, n) * np.where(np.arange(n) % 2, -1.0, 1.0)
    v /= np.linalg.norm(v)
    lam, resid = 0.0, np.inf
    for _ in range(max_iter):
        w = M @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        lam = float(v @ w)
        resid = float(np.linalg.norm(w - lam * v))
        v = w / norm
        if resid <= tol * max(abs(lam), 1.0):
            return lam - shift
    raise NumericError(f"lambda_max: power iteration did not converge in {max_iter} steps (residual {resid:.3e})")


@dataclass(frozen=True, eq=False)
class SliceGraph:
    config: GraphConfig
    edges: list[tuple[int, int]]
    weights: np.ndarray
    A: np.ndarray
    D: np.ndarray
    L: np.ndarray
    L_hat: np.ndarray
    lambda_max: float
    neighbors: list[list[tuple[int, float]]] = field(repr=False)

    @property
    def n(self) -> int:
        return self.config.n

    def hop_distances(self) -> np.ndarray:
        """All-pairs shortest path lengths in edge hops (BFS from each node)."""
        n = self.n
        dist = np.full((n, n), -1, dtype=int)
        for s in range(n):
            dist[s, s] = 0
            frontier = [s]
            while frontier:
                nxt = []
                for u in frontier:
                    for v, _ in self.neighbors[u]:
                        if dist[s, v] < 0:
                            dist[s, v] = dist[s, u] + 1
                            nxt.append(v)
                frontier = nxt
        return dist

    def to_json(self) -> dict:
        c = self.config
        return {
            "n": c.n,
            "q": c.effective_q,
            "s_z_dm": c.s_z,
            "edges": [[i, j, float(w)] for (i, j), w in zip(self.edges, self.weights)],
            "lambda_max": self.lambda_max,
        }

    def export(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")


def build_graph(cfg: GraphConfig, method: str = "auto") -> SliceGraph:
    edges = build_edges(cfg)
    if cfg.weighted:
        weights = np.array([edge_weight(i, j, cfg.s_z, cfg.slices_per_node) for i, j in edges])
    else:
        weights = np.ones(len(edges))
    n = cfg.n
    A = np.zeros((n, n))
    neighbors: list[list[tuple[int, float]]] = [[] for _ in range(n)]
    for (i, j), w in zip(edges, weights):
        A[i, j] = A[j, i] = w
        if i != j:
            neighbors[i].append((j, float(w)))
            neighbors[j].append((i, float(w)))
    D = np.diag(A.sum(axis=1))
    L = D - A
    lam = lambda_max(L, method=method)
    L_hat = (2.0 / lam) * L - np.eye(n)
    for arr in (A, D, L, L_hat, weights):
        arr.setflags(write=False)
    return SliceGraph(cfg, edges, weights, A, D, L, L_hat, lam, neighbors)


@lru_cache(maxsize=64)
def cached_graph(cfg: GraphConfig) -> SliceGraph:
    """One graph per distinct config; graphs are identical across samples."""
    return build_graph(cfg)
