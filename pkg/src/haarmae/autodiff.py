"""Minimal reverse-mode autodiff tape over float64 numpy arrays.

Each op returns a Tensor holding its parents and a VJP closure; backward()
topologically sorts the graph and accumulates gradients into leaves. Only
the ops this package needs are provided, several of them fused (layer
norm, softmax, losses, the multi-level inverse wavelet transform) so the
graph stays small and the arithmetic order is fixed.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .wavelet.filters import HAAR, WaveletFilter
from .wavelet.transform import analyze_level_f64, synthesize_level_f64


class Tensor:
    """Array node on the tape. Leaves carry requires_grad; interior nodes
    inherit it from their parents."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, parents=(), vjp=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = tuple(parents)
        self._vjp = vjp
        self.requires_grad = requires_grad or any(
            p.requires_grad for p in self._parents
        )

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient over the axes numpy broadcasting added or stretched."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Accumulate dloss/dleaf into .grad of every reachable leaf that
    requires grad. loss must be scalar."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if id(node) in seen:
            continue
        if expanded:
            seen.add(id(node))
            topo.append(node)
            continue
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._vjp is None or node.grad is None:
            continue
        grads = node._vjp(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = g.copy() if g.base is not None else g
            else:
                parent.grad = parent.grad + g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return Tensor(out, parents=(a, b), vjp=vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), -_unbroadcast(g, b.data.shape)

    return Tensor(out, parents=(a, b), vjp=vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return Tensor(out, parents=(a, b), vjp=vjp)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data @ b.data

    def vjp(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return Tensor(out, parents=(a, b), vjp=vjp)


def transpose(a: Tensor, axes: tuple) -> Tensor:
    inv = tuple(np.argsort(axes))

    def vjp(g):
        return (g.transpose(inv),)

    return Tensor(a.data.transpose(axes), parents=(a,), vjp=vjp)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    orig = a.data.shape

    def vjp(g):
        return (g.reshape(orig),)

    return Tensor(a.data.reshape(shape), parents=(a,), vjp=vjp)


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Select rows along the first axis."""
    idx = np.asarray(idx, dtype=np.int64)

    def vjp(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return Tensor(a.data[idx], parents=(a,), vjp=vjp)


def take_flat(a: Tensor, idx: np.ndarray) -> Tensor:
    """Select entries of the flattened array."""
    idx = np.asarray(idx, dtype=np.int64)

    def vjp(g):
        flat = np.zeros(a.data.size, dtype=np.float64)
        np.add.at(flat, idx, g)
        return (flat.reshape(a.data.shape),)

    return Tensor(a.data.reshape(-1)[idx], parents=(a,), vjp=vjp)


def concat_rows(parts) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.data.shape[0] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=0))

    return Tensor(
        np.concatenate([p.data for p in parts], axis=0), parents=parts, vjp=vjp
    )


def assemble_rows(visible: Tensor, fill: Tensor, visible_pos: np.ndarray,
                  fill_pos: np.ndarray, total: int) -> Tensor:
    """Build a (total, D) sequence with visible rows at visible_pos and a
    single fill row broadcast to every fill_pos slot."""
    visible_pos = np.asarray(visible_pos, dtype=np.int64)
    fill_pos = np.asarray(fill_pos, dtype=np.int64)
    if visible_pos.size + fill_pos.size != total:
        raise ValueError(
            f"positions cover {visible_pos.size + fill_pos.size} slots, "
            f"expected {total}"
        )
    out = np.empty((total, visible.data.shape[1]), dtype=np.float64)
    out[visible_pos] = visible.data
    out[fill_pos] = fill.data

    def vjp(g):
        return g[visible_pos], g[fill_pos].sum(axis=0)

    return Tensor(out, parents=(visible, fill), vjp=vjp)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization over the last axis with learnable scale/shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gamma.data + beta.data

    def vjp(g):
        dgamma = (g * xhat).sum(axis=tuple(range(g.ndim - 1)))
        dbeta = g.sum(axis=tuple(range(g.ndim - 1)))
        dxhat = g * gamma.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv_std * (dxhat - m1 - xhat * m2)
        return dx, dgamma, dbeta

    return Tensor(out, parents=(x, gamma, beta), vjp=vjp)


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = x.data * cdf

    def vjp(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        return (g * (cdf + x.data * pdf),)

    return Tensor(out, parents=(x,), vjp=vjp)


def softmax_last(x: Tensor) -> Tensor:
    """Numerically stable softmax over the last axis."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return Tensor(y, parents=(x,), vjp=vjp)


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size

    def vjp(g):
        return (np.full(x.data.shape, float(g) / n),)

    return Tensor(x.data.mean(), parents=(x,), vjp=vjp)


def mse_mean(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean squared error against a constant target."""
    target = np.asarray(target, dtype=np.float64)
    err = pred.data - target
    n = err.size
    out = np.mean(err * err)

    def vjp(g):
        return (float(g) * 2.0 * err / n,)

    return Tensor(out, parents=(pred,), vjp=vjp)


def smooth_l1_mean(pred: Tensor, target: np.ndarray, beta: float = 1.0) -> Tensor:
    """Smooth-L1 (Huber with transition beta) against a constant target,
    averaged over all elements."""
    target = np.asarray(target, dtype=np.float64)
    err = pred.data - target
    n = err.size
    abse = np.abs(err)
    quad = abse < beta
    vals = np.where(quad, 0.5 * err * err / beta, abse - 0.5 * beta)
    out = vals.mean()

    def vjp(g):
        d = np.where(quad, err / beta, np.sign(err))
        return (float(g) * d / n,)

    return Tensor(out, parents=(pred,), vjp=vjp)


def idwt_multi_op(components, depth: int, filt: WaveletFilter = HAAR) -> Tensor:
    """Multi-level inverse wavelet transform as one tape op. `components`
    are Tensors in the fixed order LH1, HL1, HH1, ..., LHN, HLN, HHN, LL.
    The VJP of the orthonormal synthesis is the analysis transform."""
    components = [as_tensor(c) for c in components]
    if len(components) != 3 * depth + 1:
        raise ValueError(
            f"expected {3 * depth + 1} components for depth {depth}, "
            f"got {len(components)}"
        )
    x = components[-1].data
    for j in range(depth, 0, -1):
        lh, hl, hh = (c.data for c in components[3 * (j - 1) : 3 * j])
        x = synthesize_level_f64(x, lh, hl, hh, filt)

    def vjp(g):
        grads = [None] * len(components)
        cur = g
        for j in range(1, depth + 1):
            cur, glh, ghl, ghh = analyze_level_f64(cur, filt)
            grads[3 * (j - 1) : 3 * j] = [glh, ghl, ghh]
        grads[-1] = cur
        return tuple(grads)

    return Tensor(x, parents=components, vjp=vjp)
