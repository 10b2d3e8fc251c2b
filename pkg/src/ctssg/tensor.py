"""Dense tensors with tape-based reverse-mode differentiation.

Every op is a plain function that computes its result with numpy and, when a
:class:`Tape` is active and some input requires a gradient, appends a record
holding the inputs and a backward closure. ``Tape.backward`` replays those
records in reverse execution order and accumulates gradients.

Broadcasting is deliberately narrow: elementwise ops and ``matmul`` only
broadcast over *leading* extents (the smaller operand's shape must be a
suffix of the larger one's), which keeps every backward rule a plain sum over
the broadcast axes.
"""

from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy.special import erf, expit

from .errors import DimensionError, NumericError, ValidationError

DEFAULT_DTYPE = np.float64

_local = threading.local()


def _stack() -> list:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def current_tape() -> "Tape | None":
    stack = _stack()
    return stack[-1] if stack else None


@contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording on this thread, e.g. for evaluation passes."""
    stack = _stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


class Tensor:
    """An n-dimensional float array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64) else DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x), dtype=dtype)


class _Record:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered log of executed ops on one thread.

    Use as a context manager around the forward pass, then call
    :meth:`backward` on a scalar output. Leaf tensors with
    ``requires_grad`` receive their gradient in ``.grad`` (accumulated);
    every recorded gradient is also available through :meth:`grad`.
    """

    def __init__(self):
        self._records: list[_Record] = []
        self._grads: dict[int, np.ndarray] = {}
        self._tensors: dict[int, Tensor] = {}

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self._records)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable) -> None:
        self._records.append(_Record(out, inputs, backward))

    def backward(self, out: Tensor, grad=None) -> None:
        if grad is None:
            if out.size != 1:
                raise DimensionError(f"backward() without a seed gradient needs a scalar, got shape {out.shape}")
            grad = np.ones_like(out.data)
        grads = {id(out): np.asarray(grad, dtype=out.dtype)}
        tensors = {id(out): out}
        produced = set()
        for rec in reversed(self._records):
            produced.add(id(rec.out))
            g = grads.get(id(rec.out))
            if g is None:
                continue
            for t, gi in zip(rec.inputs, rec.backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                k = id(t)
                if k in grads:
                    grads[k] = grads[k] + gi
                else:
                    grads[k] = gi
                    tensors[k] = t
        for k, t in tensors.items():
            if k not in produced and t.requires_grad:
                t.grad = grads[k] if t.grad is None else t.grad + grads[k]
        self._grads = grads
        self._tensors = tensors

    def grad(self, t: Tensor) -> np.ndarray:
        """Gradient of the last backward output w.r.t. ``t`` (zeros if unreached)."""
        g = self._grads.get(id(t))
        return np.zeros_like(t.data) if g is None else g

    def clear(self) -> None:
        self._records.clear()
        self._grads = {}
        self._tensors = {}


def _result(data: np.ndarray, inputs: tuple[Tensor, ...], backward: Callable) -> Tensor:
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs), dtype=data.dtype)
    tape = current_tape()
    if tape is not None and out.requires_grad:
        tape.record(out, inputs, backward)
    return out


def _check_suffix(a: tuple, b: tuple, op: str) -> tuple:
    if a == b:
        return a
    long, short = (a, b) if len(a) >= len(b) else (b, a)
    if long[len(long) - len(short):] != short:
        raise DimensionError(f"{op}: shapes {a} and {b} only broadcast over leading extents")
    return long


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    return g


def _pair(a, b):
    a = as_tensor(a)
    b = as_tensor(b, dtype=a.dtype)
    return a, b


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_suffix(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_suffix(a.shape, b.shape, "sub")
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_suffix(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """Matrix product; at most one operand may carry leading batch extents."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or (a.ndim > 2 and b.ndim > 2):
        raise DimensionError(f"matmul: unsupported shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner extents differ for shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    if b.ndim == 2:
        def backward(g):
            ga = g @ bd.T
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return ga, gb
    else:
        def backward(g):
            n = g.shape[-1]
            ga = np.einsum("bmn,bkn->mk", g.reshape(-1, g.shape[-2], n), bd.reshape(-1, bd.shape[-2], n))
            gb = np.matmul(ad.T, g)
            return ga, gb

    return _result(ad @ bd, (a, b), backward)


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    try:
        data = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {old} as {tuple(shape)}") from exc
    return _result(data, (x,), lambda g: (g.reshape(old),))


def _norm_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise IndexError(f"axis {axis} out of range for a {ndim}-d tensor")
    return axis % ndim


def tensor_sum(x, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    if axis is None:
        return _result(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))
    ax = _norm_axis(axis, x.ndim)
    return _result(x.data.sum(axis=ax), (x,), lambda g: (np.broadcast_to(np.expand_dims(g, ax), shape).copy(),))


def mean_over_axis(x, axis: int) -> Tensor:
    """Arithmetic mean along ``axis`` (which is removed)."""
    x = as_tensor(x)
    ax = _norm_axis(axis, x.ndim)
    n = x.shape[ax]
    shape = x.shape
    return _result(
        x.data.mean(axis=ax),
        (x,),
        lambda g: (np.broadcast_to(np.expand_dims(g, ax) / n, shape).copy(),),
    )


def gelu(x) -> Tensor:
    """Gaussian-error linear unit, exact erf form."""
    x = as_tensor(x)
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * xd * xd) / math.sqrt(2.0 * math.pi)
    return _result(xd * cdf, (x,), lambda g: (g * (cdf + xd * pdf),))


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    x = as_tensor(x)
    gamma, beta = as_tensor(gamma, dtype=x.dtype), as_tensor(beta, dtype=x.dtype)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm: last extent {d} vs gamma {gamma.shape}, beta {beta.shape}")
    if not eps > 0:
        raise ValidationError("layer_norm: eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gamma.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        gx_hat = g * gd
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True) - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(xhat * gd + beta.data, (x, gamma, beta), backward)


def linear(x, W, b) -> Tensor:
    """Affine map ``x @ W + b`` broadcast over the leading extents of ``x``."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if b.shape != (W.shape[-1],):
        raise DimensionError(f"linear: bias shape {b.shape} does not match weight {W.shape}")
    if x.ndim == 1:
        return reshape(add(matmul(reshape(x, (1, -1)), W), b), (W.shape[-1],))
    return add(matmul(x, W), b)


def bce_with_logits(logits, targets) -> Tensor:
    """Mean binary cross-entropy over all entries, log-sum-exp stable."""
    logits = as_tensor(logits)
    y = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=logits.dtype)
    if y.shape != logits.shape:
        raise DimensionError(f"bce_with_logits: logits {logits.shape} vs targets {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValidationError("bce_with_logits: targets must be 0 or 1")
    z = logits.data
    n = z.size
    loss = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    return _result(np.asarray(loss.mean()), (logits,), lambda g: (g * (expit(z) - y) / n,))


def conv2d(x, W, b, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation. x: (B, C, H, W); W: (O, C, kh, kw); b: (O,)."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if x.ndim != 4 or W.ndim != 4 or x.shape[1] != W.shape[1] or b.shape != (W.shape[0],):
        raise DimensionError(f"conv2d: input {x.shape}, weight {W.shape}, bias {b.shape}")
    B, C, H, Wd = x.shape
    O, _, kh, kw = W.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (Wd + 2 * padding - kw) // stride + 1
    if Ho < 1 or Wo < 1:
        raise DimensionError(f"conv2d: kernel {(kh, kw)} larger than padded input {xp.shape[2:]}")
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (Ho - 1) * stride + 1 : stride, : (Wo - 1) * stride + 1 : stride]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(B * Ho * Wo, C * kh * kw)
    wmat = W.data.reshape(O, -1)
    out = (cols @ wmat.T + b.data).reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)

    def backward(g):
        gt = g.transpose(0, 2, 3, 1).reshape(-1, O)
        gw = (gt.T @ cols).reshape(W.shape)
        gcols = (gt @ wmat).reshape(B, Ho, Wo, C, kh, kw)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, padding : padding + H, padding : padding + Wd]
        return gx, gw, gt.sum(axis=0)

    return _result(np.ascontiguousarray(out), (x, W, b), backward)


def sigmoid(x) -> np.ndarray:
    """Logistic function on raw values; evaluation helper, not recorded."""
    return expit(x.data if isinstance(x, Tensor) else np.asarray(x))


def grad_check(f: Callable[[Sequence[Tensor]], Tensor], params: Sequence[Tensor], h: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    The per-coordinate error is ``|g_ad - g_fd| / max(1e-12, |g_ad| + |g_fd|)``.
    ``params`` are perturbed in place and restored.
    """
    if not h > 0:
        raise ValidationError("grad_check: h must be positive")
    with Tape() as tape:
        out = f(params)
        if out.size != 1:
            raise DimensionError(f"grad_check: f must return a scalar, got shape {out.shape}")
        if not np.isfinite(out.data).all():
            raise NumericError("grad_check: f is not finite at the base point")
        tape.backward(out)
    analytic = [tape.grad(p).reshape(-1) for p in params]
    tape.clear()
    worst = 0.0
    with no_grad():
        for p, g_ad in zip(params, analytic):
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = f(params).item()
                flat[i] = orig - h
                fm = f(params).item()
                flat[i] = orig
                if not (math.isfinite(fp) and math.isfinite(fm)):
                    raise NumericError(f"grad_check: f not finite near coordinate {i} of {p.name or p.shape}")
                g_fd = (fp - fm) / (2.0 * h)
                err = abs(g_ad[i] - g_fd) / max(1e-12, abs(g_ad[i]) + abs(g_fd))
                worst = max(worst, err)
    return worst
