"""Dense float64 arrays with reverse-mode automatic differentiation.

Supplies exactly the operations the routing model needs: matmul with stacked
leading dimensions, elementwise arithmetic, activations, a numerically stable
softmax, batch normalization, reductions, and the gather/reshape plumbing used
by the decoder. Everything runs in 64-bit floats so analytic gradients can be
verified against central finite differences.
"""

from __future__ import annotations

import numpy as np

# Additive logit mask for infeasible actions. Kept finite so arithmetic stays
# finite; exp() underflows it to exactly 0 and entmax clamps it to exactly 0.
MASK_SENTINEL = -1e18
# Rows whose maximum falls below this are considered fully masked.
_FULLY_MASKED = -1e17

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class ShapeError(ValueError):
    """Operands with incompatible shapes."""


class InfeasibleActionError(RuntimeError):
    """A probability row had every position masked."""


class DegenerateBatchError(ValueError):
    """Batch statistics requested over fewer than two rows."""


class GraphError(RuntimeError):
    """Autodiff contract violation (e.g. backward from a non-scalar)."""


_grad_enabled = True


class no_grad:
    """Context manager that disables graph construction."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Value:
    """Node in the differentiation graph: a float64 array plus gradient slot.

    Leaves created with requires_grad=True receive accumulated gradients on
    backward(); interior nodes carry a closure that pushes their gradient to
    their parents.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Value(shape={self.shape}, requires_grad={self.requires_grad})"


def as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def _make(data, parents, backward_fn) -> Value:
    """Create a graph node; degrades to a constant when grads are off."""
    out = Value(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: Value, b: Value, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def _accum(v: Value, g: np.ndarray):
    if v.grad is None:
        v.grad = np.array(g, dtype=np.float64)
    else:
        v.grad += g


def add(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_broadcast(a, b, "add")
    out = _make(a.data + b.data, (a, b), None)

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.shape))

    out._backward = bw if out.requires_grad else None
    return out


def sub(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_broadcast(a, b, "sub")
    out = _make(a.data - b.data, (a, b), None)

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g, b.shape))

    out._backward = bw if out.requires_grad else None
    return out


def mul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_broadcast(a, b, "mul")
    out = _make(a.data * b.data, (a, b), None)

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    out._backward = bw if out.requires_grad else None
    return out


def scale(x, c: float) -> Value:
    x = as_value(x)
    c = float(c)
    out = _make(x.data * c, (x,), None)

    def bw(g):
        _accum(x, g * c)

    out._backward = bw if out.requires_grad else None
    return out


def relu(x) -> Value:
    x = as_value(x)
    out = _make(np.maximum(x.data, 0.0), (x,), None)

    def bw(g):
        _accum(x, g * (x.data > 0.0))

    out._backward = bw if out.requires_grad else None
    return out


def tanh(x) -> Value:
    x = as_value(x)
    t = np.tanh(x.data)
    out = _make(t, (x,), None)

    def bw(g):
        _accum(x, g * (1.0 - t * t))

    out._backward = bw if out.requires_grad else None
    return out


def log(x) -> Value:
    x = as_value(x)
    out = _make(np.log(x.data), (x,), None)

    def bw(g):
        _accum(x, g / x.data)

    out._backward = bw if out.requires_grad else None
    return out


def matmul(a, b) -> Value:
    """Matrix product; leading dimensions broadcast like numpy matmul."""
    a, b = as_value(a), as_value(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible") from None
    out = _make(data, (a, b), None)

    def bw(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accum(a, ga if ga.shape == a.shape else _unbroadcast(ga, a.shape))
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                # stacked operand against shared weights: one flat GEMM
                # instead of a batched product followed by a reduction
                k, n = b.shape
                _accum(b, a.data.reshape(-1, k).T @ g.reshape(-1, n))
            else:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
                _accum(b, gb if gb.shape == b.shape else _unbroadcast(gb, b.shape))

    out._backward = bw if out.requires_grad else None
    return out


def swapaxes(x, axis1: int, axis2: int) -> Value:
    x = as_value(x)
    out = _make(np.swapaxes(x.data, axis1, axis2), (x,), None)

    def bw(g):
        _accum(x, np.swapaxes(g, axis1, axis2))

    out._backward = bw if out.requires_grad else None
    return out


def reshape(x, shape) -> Value:
    x = as_value(x)
    out = _make(x.data.reshape(shape), (x,), None)

    def bw(g):
        _accum(x, g.reshape(x.shape))

    out._backward = bw if out.requires_grad else None
    return out


def concat(values, axis: int = -1) -> Value:
    values = [as_value(v) for v in values]
    out = _make(np.concatenate([v.data for v in values], axis=axis), tuple(values), None)
    sizes = [v.shape[axis] for v in values]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for v, lo, hi in zip(values, offsets[:-1], offsets[1:]):
            if not v.requires_grad:
                continue
            idx = [slice(None)] * g.ndim
            idx[axis if axis >= 0 else g.ndim + axis] = slice(lo, hi)
            _accum(v, g[tuple(idx)])

    out._backward = bw if out.requires_grad else None
    return out


def stack_scalars(values) -> Value:
    """Stack scalar Values into a 1-D vector."""
    values = [as_value(v) for v in values]
    out = _make(np.array([float(v.data) for v in values]), tuple(values), None)

    def bw(g):
        for i, v in enumerate(values):
            if v.requires_grad:
                _accum(v, np.asarray(g[i]))

    out._backward = bw if out.requires_grad else None
    return out


def sum_all(x) -> Value:
    x = as_value(x)
    out = _make(np.asarray(x.data.sum()), (x,), None)

    def bw(g):
        _accum(x, np.broadcast_to(g, x.shape).copy())

    out._backward = bw if out.requires_grad else None
    return out


def mean_all(x) -> Value:
    x = as_value(x)
    return scale(sum_all(x), 1.0 / x.data.size)


def sum_axis(x, axis: int, keepdims: bool = True) -> Value:
    x = as_value(x)
    out = _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), None)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g, x.shape).copy())

    out._backward = bw if out.requires_grad else None
    return out


def mean_axis(x, axis: int, keepdims: bool = True) -> Value:
    x = as_value(x)
    return scale(sum_axis(x, axis, keepdims), 1.0 / x.shape[axis])


def take_rows(x, idx) -> Value:
    """Select rows along the leading axis; duplicates accumulate on backward."""
    x = as_value(x)
    idx = np.asarray(idx, dtype=np.intp)
    unique = idx.size <= 1 or len(np.unique(idx)) == idx.size
    out = _make(x.data[idx], (x,), None)

    def bw(g):
        full = np.zeros_like(x.data)
        if unique:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        _accum(x, full)

    out._backward = bw if out.requires_grad else None
    return out


def gather_nodes(x, idx) -> Value:
    """x: [B, m, d], idx: [B] -> [B, 1, d] picking one row per batch entry."""
    x = as_value(x)
    idx = np.asarray(idx, dtype=np.intp)
    rows = np.arange(x.shape[0])
    out = _make(x.data[rows, idx][:, None, :], (x,), None)

    def bw(g):
        # (row, idx) pairs are distinct because every row appears once
        full = np.zeros_like(x.data)
        full[rows, idx] = g[:, 0, :]
        _accum(x, full)

    out._backward = bw if out.requires_grad else None
    return out


def pick(x, idx) -> Value:
    """x: [B, m], idx: [B] -> [B] picking one entry per row."""
    x = as_value(x)
    idx = np.asarray(idx, dtype=np.intp)
    rows = np.arange(x.shape[0])
    out = _make(x.data[rows, idx], (x,), None)

    def bw(g):
        full = np.zeros_like(x.data)
        full[rows, idx] = g
        _accum(x, full)

    out._backward = bw if out.requires_grad else None
    return out


def scatter_rows(x, idx, size: int) -> Value:
    """Place entries of x [A] at positions idx (distinct) of a zero vector [size]."""
    x = as_value(x)
    idx = np.asarray(idx, dtype=np.intp)
    data = np.zeros(size)
    data[idx] = x.data
    out = _make(data, (x,), None)

    def bw(g):
        _accum(x, g[idx])

    out._backward = bw if out.requires_grad else None
    return out


def check_masked_rows(data: np.ndarray, axis: int = -1):
    """Raise if any row along `axis` is entirely masked out."""
    if np.any(np.max(data, axis=axis) <= _FULLY_MASKED):
        raise InfeasibleActionError("all positions of a probability row are masked")


def softmax(z, axis: int = -1) -> Value:
    """Stable softmax; sentinel-masked positions come out exactly zero."""
    z = as_value(z)
    check_masked_rows(z.data, axis)
    shifted = z.data - np.max(z.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)
    out = _make(p, (z,), None)

    def bw(g):
        dot = np.sum(g * p, axis=axis, keepdims=True)
        _accum(z, p * (g - dot))

    out._backward = bw if out.requires_grad else None
    return out


class RunningStats:
    """Exponential-moving batch statistics for one normalization layer."""

    def __init__(self, dim: int, momentum: float = BN_MOMENTUM):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.momentum = momentum

    def copy(self) -> "RunningStats":
        c = RunningStats(len(self.mean), self.momentum)
        c.mean = self.mean.copy()
        c.var = self.var.copy()
        return c


def batch_norm(x, gamma, beta, stats: RunningStats, mode: str) -> Value:
    """Normalize rows of x [B, d] per feature.

    train: batch statistics (B >= 2), running stats updated in place.
    eval: running statistics, no mutation.
    """
    x, gamma, beta = as_value(x), as_value(gamma), as_value(beta)
    if x.ndim != 2:
        raise ShapeError(f"batch_norm expects 2-D input, got {x.shape}")
    if mode not in ("train", "eval"):
        raise ValueError(f"batch_norm mode must be train or eval, got {mode!r}")
    B = x.shape[0]
    if mode == "train":
        if B < 2:
            raise DegenerateBatchError(f"batch_norm in train mode needs >= 2 rows, got {B}")
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        m = stats.momentum
        stats.mean = (1.0 - m) * stats.mean + m * mu
        stats.var = (1.0 - m) * stats.var + m * var * B / (B - 1)
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x.data - mu) * inv
        out = _make(xhat * gamma.data + beta.data, (x, gamma, beta), None)

        def bw(g):
            if x.requires_grad:
                dxhat = g * gamma.data
                # standard batch-norm backward through batch mean and variance
                gx = (dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0)) * inv
                _accum(x, gx)
            if gamma.requires_grad:
                _accum(gamma, (g * xhat).sum(axis=0))
            if beta.requires_grad:
                _accum(beta, g.sum(axis=0))

    else:
        inv = 1.0 / np.sqrt(stats.var + BN_EPS)
        xhat = (x.data - stats.mean) * inv
        out = _make(xhat * gamma.data + beta.data, (x, gamma, beta), None)

        def bw(g):
            if x.requires_grad:
                _accum(x, g * gamma.data * inv)
            if gamma.requires_grad:
                _accum(gamma, (g * xhat).sum(axis=0))
            if beta.requires_grad:
                _accum(beta, g.sum(axis=0))

    out._backward = bw if out.requires_grad else None
    return out


def backward(loss: Value):
    """Reverse-mode sweep from a scalar loss.

    Gradients accumulate additively into every reachable Value with
    requires_grad; interior nodes get fresh gradients per call while leaves
    keep accumulating until zero_grad().
    """
    if loss.data.size != 1:
        raise GraphError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    # iterative topological order (graphs can exceed the recursion limit)
    order = []
    seen = {id(loss)}
    stack = [(loss, iter(loss._parents))]
    while stack:
        node, parents = stack[-1]
        advanced = False
        for p in parents:
            if id(p) not in seen and p.requires_grad and p._parents:
                seen.add(id(p))
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()

    # interior gradients are per-call scratch; reset them before the sweep
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
