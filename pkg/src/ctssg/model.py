"""Slice-graph spectral encoder.

Pipeline for a batch of volumes ``(B, S, H, W)``:

1. group slices into ``N = S / C`` non-overlapping triplets and embed each
   one independently with a small shared encoder -> ``(B, N, d)``
2. add a learnable per-node positional table
3. ``depth`` pre-norm residual blocks, each a graph convolution followed by
   a linear+GELU feed-forward layer
4. mean over nodes, then a linear head to ``n_labels`` logits
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import DimensionError, ValidationError
from .graph import GraphConfig, SliceGraph, cached_graph
from .tensor import Tensor

OPERATORS = ("chebyshev", "graph_conv")
FEATURE_INITS = ("flatten_linear", "tiny_cnn")


@dataclass(frozen=True)
class EncoderConfig:
    n_slices: int = 24
    height: int = 32
    width: int = 32
    slices_per_node: int = 3
    dim: int = 64
    depth: int = 1
    cheb_order: int = 3
    n_labels: int = 4
    operator: str = "chebyshev"
    feature_init: str = "tiny_cnn"
    cnn_width: int = 8
    use_positional: bool = True
    use_residual: bool = True
    use_layernorm: bool = True
    ln_eps: float = 1e-5
    input_mean: float = 0.5
    input_std: float = 0.05
    dtype: str = "float64"

    def __post_init__(self):
        if self.n_slices % self.slices_per_node:
            raise ValidationError(
                f"EncoderConfig: n_slices={self.n_slices} is not divisible by slices_per_node={self.slices_per_node}"
            )
        for name in ("cheb_order", "depth", "dim", "n_labels", "height", "width", "cnn_width"):
            if getattr(self, name) < 1:
                raise ValidationError(f"EncoderConfig: {name} must be >= 1")
        if self.n_nodes < 2:
            raise ValidationError("EncoderConfig: need at least two triplets")
        if self.operator not in OPERATORS:
            raise ValidationError(f"EncoderConfig: operator must be one of {OPERATORS}")
        if self.feature_init not in FEATURE_INITS:
            raise ValidationError(f"EncoderConfig: feature_init must be one of {FEATURE_INITS}")
        if not self.input_std > 0:
            raise ValidationError("EncoderConfig: input_std must be > 0")
        if self.dtype not in ("float64", "float32"):
            raise ValidationError("EncoderConfig: dtype must be float64 or float32")

    @property
    def n_nodes(self) -> int:
        return self.n_slices // self.slices_per_node

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)


def count_parameters(cfg: EncoderConfig) -> int:
    d, C = cfg.dim, cfg.slices_per_node
    if cfg.feature_init == "flatten_linear":
        n = C * cfg.height * cfg.width * d + d
    else:
        w = cfg.cnn_width
        n = w * C * 9 + w + d * w * 9 + d
    if cfg.use_positional:
        n += cfg.n_nodes * d
    conv = cfg.cheb_order * d * d if cfg.operator == "chebyshev" else 2 * d * d
    ln = 4 * d if cfg.use_layernorm else 0
    n += cfg.depth * (conv + ln + d * d + d)
    return n + d * cfg.n_labels + cfg.n_labels


def init_params(cfg: EncoderConfig, seed: int = 0) -> dict[str, Tensor]:
    """Uniform(+-1/sqrt(fan_in)) weights, N(0, 0.02) positions, unit LN gains, zero biases."""
    rng = np.random.default_rng(seed)
    dt = cfg.np_dtype
    params: dict[str, Tensor] = {}

    def uniform(name, shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        params[name] = Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, dtype=dt, name=name)

    def const(name, shape, value):
        params[name] = Tensor(np.full(shape, value), requires_grad=True, dtype=dt, name=name)

    d, C = cfg.dim, cfg.slices_per_node
    if cfg.feature_init == "flatten_linear":
        fan = C * cfg.height * cfg.width
        uniform("features.W", (fan, d), fan)
        const("features.b", (d,), 0.0)
    else:
        w = cfg.cnn_width
        uniform("features.conv1.W", (w, C, 3, 3), C * 9)
        const("features.conv1.b", (w,), 0.0)
        uniform("features.conv2.W", (d, w, 3, 3), w * 9)
        const("features.conv2.b", (d,), 0.0)
    if cfg.use_positional:
        params["pos"] = Tensor(rng.normal(0.0, 0.02, size=(cfg.n_nodes, d)), requires_grad=True, dtype=dt, name="pos")
    for l in range(cfg.depth):
        p = f"blocks.{l}."
        if cfg.use_layernorm:
            const(p + "ln1.gamma", (d,), 1.0)
            const(p + "ln1.beta", (d,), 0.0)
        if cfg.operator == "chebyshev":
            for k in range(cfg.cheb_order):
                uniform(p + f"theta.{k}", (d, d), d)
        else:
            uniform(p + "w_self", (d, d), d)
            uniform(p + "w_neigh", (d, d), d)
        if cfg.use_layernorm:
            const(p + "ln2.gamma", (d,), 1.0)
            const(p + "ln2.beta", (d,), 0.0)
        uniform(p + "ffn.W", (d, d), d)
        const(p + "ffn.b", (d,), 0.0)
    uniform("head.W", (d, cfg.n_labels), d)
    const("head.b", (cfg.n_labels,), 0.0)
    return params


def _as_batch(volume, cfg: EncoderConfig) -> tuple[np.ndarray, bool]:
    v = np.asarray(volume.data if isinstance(volume, Tensor) else volume, dtype=cfg.np_dtype)
    single = v.ndim == 3
    if single:
        v = v[None]
    expected = (cfg.n_slices, cfg.height, cfg.width)
    if v.ndim != 4 or v.shape[1:] != expected:
        raise DimensionError(f"volume extents {v.shape} do not match config {expected}")
    return (v - cfg.input_mean) / cfg.input_std, single


def init_features(volume, params: dict[str, Tensor], cfg: EncoderConfig) -> Tensor:
    """Triplet embeddings ``(B, N, d)`` (or ``(N, d)`` for a single volume).

    Voxels are standardized with the configured ``input_mean``/``input_std``
    before the triplet encoder sees them.
    """
    v, single = _as_batch(volume, cfg)
    B, N, C = v.shape[0], cfg.n_nodes, cfg.slices_per_node
    trip = v.reshape(B * N, C, cfg.height, cfg.width)
    if cfg.feature_init == "flatten_linear":
        h = T.linear(trip.reshape(B * N, -1), params["features.W"], params["features.b"])
    else:
        x = T.gelu(T.conv2d(trip, params["features.conv1.W"], params["features.conv1.b"], stride=2, padding=1))
        x = T.gelu(T.conv2d(x, params["features.conv2.W"], params["features.conv2.b"], stride=2, padding=1))
        # global average pooling over the spatial map
        x = T.reshape(x, (B * N, cfg.dim, -1))
        h = T.mean_over_axis(x, -1)
    return T.reshape(h, (N, cfg.dim) if single else (B, N, cfg.dim))


def add_positional(features, pos) -> Tensor:
    features, pos = T.as_tensor(features), T.as_tensor(pos)
    if features.shape[-2:] != pos.shape:
        raise DimensionError(f"add_positional: features {features.shape} vs table {pos.shape}")
    return T.add(features, pos)


def cheb_conv(X, L_hat, theta: Sequence) -> Tensor:
    """Sum over k of ``T_k(L_hat) X theta_k`` via the three-term recurrence."""
    if len(theta) < 1:
        raise ValidationError("cheb_conv: filter size K must be >= 1")
    X = T.as_tensor(X)
    n = X.shape[-2]
    L_hat = np.asarray(L_hat, dtype=X.dtype)
    if L_hat.shape != (n, n):
        raise DimensionError(f"cheb_conv: L_hat {L_hat.shape} vs {n} nodes")
    Lt, L2 = Tensor(L_hat), Tensor(2.0 * L_hat)
    prev, cur = None, X
    out = T.matmul(X, theta[0])
    for k in range(1, len(theta)):
        nxt = T.matmul(Lt, cur) if k == 1 else T.sub(T.matmul(L2, cur), prev)
        prev, cur = cur, nxt
        out = T.add(out, T.matmul(cur, theta[k]))
    return out


def graph_conv(X, A, W_self, W_neigh) -> Tensor:
    """Spatial baseline: ``X W_self + (A X) W_neigh``."""
    X = T.as_tensor(X)
    A = np.asarray(A, dtype=X.dtype)
    if A.shape != (X.shape[-2], X.shape[-2]):
        raise DimensionError(f"graph_conv: adjacency {A.shape} vs {X.shape[-2]} nodes")
    return T.add(T.matmul(X, W_self), T.matmul(T.matmul(Tensor(A), X), W_neigh))


def spectral_block(H, graph: SliceGraph, params: dict[str, Tensor], layer: int, cfg: EncoderConfig) -> Tensor:
    p = f"blocks.{layer}."
    ln = cfg.use_layernorm
    h = T.layer_norm(H, params[p + "ln1.gamma"], params[p + "ln1.beta"], cfg.ln_eps) if ln else H
    if cfg.operator == "chebyshev":
        c = cheb_conv(h, graph.L_hat, [params[p + f"theta.{k}"] for k in range(cfg.cheb_order)])
    else:
        c = graph_conv(h, graph.A, params[p + "w_self"], params[p + "w_neigh"])
    Z = T.add(H, c) if cfg.use_residual else c
    z = T.layer_norm(Z, params[p + "ln2.gamma"], params[p + "ln2.beta"], cfg.ln_eps) if ln else Z
    f = T.gelu(T.linear(z, params[p + "ffn.W"], params[p + "ffn.b"]))
    return T.add(Z, f) if cfg.use_residual else f


def _per_layer(graphs, depth: int) -> list[SliceGraph]:
    if isinstance(graphs, SliceGraph):
        return [graphs] * depth
    graphs = list(graphs)
    if len(graphs) != depth:
        raise ValidationError(f"expected {depth} per-layer graphs, got {len(graphs)}")
    return graphs


def spectral_module(H, params: dict[str, Tensor], graphs, cfg: EncoderConfig) -> Tensor:
    for l, g in enumerate(_per_layer(graphs, cfg.depth)):
        H = spectral_block(H, g, params, l, cfg)
    return H


def encode(volume, params: dict[str, Tensor], graphs, cfg: EncoderConfig) -> Tensor:
    """Logits ``(B, M)`` for a batch, or ``(M,)`` for a single volume."""
    H = init_features(volume, params, cfg)
    if cfg.use_positional:
        H = add_positional(H, params["pos"])
    Z = spectral_module(H, params, graphs, cfg)
    pooled = T.mean_over_axis(Z, -2)
    return T.linear(pooled, params["head.W"], params["head.b"])


def config_hash(enc: EncoderConfig, graphs: Sequence[GraphConfig]) -> str:
    doc = {"encoder": asdict(enc), "graphs": [asdict(g) for g in graphs]}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


class CTSSG:
    """Parameters plus graphs for one encoder configuration."""

    def __init__(self, cfg: EncoderConfig, graph_cfgs: GraphConfig | Sequence[GraphConfig], seed: int = 0):
        if isinstance(graph_cfgs, GraphConfig):
            graph_cfgs = [graph_cfgs] * cfg.depth
        self.graph_cfgs = list(graph_cfgs)
        for g in self.graph_cfgs:
            if g.n != cfg.n_nodes:
                raise ValidationError(f"graph has {g.n} nodes but the encoder produces {cfg.n_nodes}")
        self.cfg = cfg
        self.graphs = _per_layer([cached_graph(g) for g in self.graph_cfgs], cfg.depth)
        self.params = init_params(cfg, seed)

    @property
    def hash(self) -> str:
        return config_hash(self.cfg, self.graph_cfgs)

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def __call__(self, volumes) -> Tensor:
        return encode(volumes, self.params, self.graphs, self.cfg)

    def predict_proba(self, volumes, batch_size: int = 32) -> np.ndarray:
        v = np.asarray(volumes)
        out = []
        with T.no_grad():
            for s in range(0, len(v), batch_size):
                out.append(T.sigmoid(self(v[s : s + batch_size])))
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.cfg.n_labels))

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        if list(arrays) != list(self.params):
            raise ValidationError("parameter names do not match this configuration")
        for k, p in self.params.items():
            if arrays[k].shape != p.shape:
                raise DimensionError(f"parameter {k}: stored {arrays[k].shape} vs expected {p.shape}")
            p.data = np.array(arrays[k], dtype=self.cfg.np_dtype)
