"""Reverse-mode autodiff over dense numpy arrays.

Graphs are built eagerly: every op returns a ``Tensor`` that remembers its
parent tensors plus a closure mapping the output gradient to parent
gradients. ``backward`` walks the graph once in reverse topological order
and accumulates into ``.grad``. Values are float32 by default; float64
graphs (used by the finite-difference checker) work transparently because
ops inherit numpy's dtype promotion. Reduction ops accumulate in float64.

Gradient buffers are never mutated in place, so closures may hand the same
array to several parents without copying.
"""

from __future__ import annotations

import threading

import numpy as np

FLOAT = np.float32


class GraphError(Exception):
    """Malformed computation graph: non-scalar loss or a cycle."""


_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Disable graph construction inside the block (inference paths)."""

    def __enter__(self):
        self._prev = grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


class Tensor:
    """Dense array node; ``grad``, when set, has the same shape as ``data``."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backprop")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, np.ndarray):
            self.data = data
        elif isinstance(data, np.generic):  # 0-d numpy scalar: keep its dtype
            self.data = np.asarray(data)
        else:
            self.data = np.asarray(data, dtype=FLOAT)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backprop = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, dtype=FLOAT) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype))


def parameter(data, dtype=None) -> Tensor:
    """Leaf tensor with requires_grad; keeps an existing float dtype."""
    if dtype is None:
        dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64) else FLOAT
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


def constant(data, like: Tensor | None = None) -> Tensor:
    dtype = like.data.dtype if like is not None else FLOAT
    return Tensor(np.asarray(data, dtype=dtype))


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=FLOAT))


def _make(data, parents, backprop) -> Tensor:
    if getattr(_state, "grad_enabled", True) and any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True)
        out._parents = parents
        out._backprop = backprop
        return out
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _toposort(root: Tensor):
    order = []
    visited = set()
    onpath = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        nid = id(node)
        if expanded:
            onpath.discard(nid)
            order.append(node)
            continue
        if nid in visited:
            if nid in onpath:
                raise GraphError("cycle detected in computation graph")
            continue
        visited.add(nid)
        onpath.add(nid)
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor in the graph.

    ``loss`` must be a scalar. Repeated calls without clearing gradients add
    up, so callers reset via ``ParamSet.zero_grad`` between steps.
    """
    if loss.data.shape != ():
        raise GraphError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    order = _toposort(loss)
    local: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.data.dtype)}
    owned: dict[int, bool] = {}
    for node in reversed(order):
        g = local.get(id(node))
        if g is None or node._backprop is None:
            continue
        for p, pg in zip(node._parents, node._backprop(g)):
            if pg is None or not p.requires_grad:
                continue
            k = id(p)
            cur = local.get(k)
            if cur is None:
                local[k] = pg
            elif owned.get(k):
                cur += pg
            else:
                local[k] = cur + pg
                owned[k] = True
    for node in order:
        g = local.get(id(node))
        if g is not None and node.requires_grad:
            node.grad = g if node.grad is None else node.grad + g


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    def bp(g):
        return (
            _unbroadcast(g, a.data.shape) if a.requires_grad else None,
            _unbroadcast(g, b.data.shape) if b.requires_grad else None,
        )
    return _make(a.data + b.data, (a, b), bp)


def sub(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    def bp(g):
        return (
            _unbroadcast(g, a.data.shape) if a.requires_grad else None,
            _unbroadcast(-g, b.data.shape) if b.requires_grad else None,
        )
    return _make(a.data - b.data, (a, b), bp)


def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    def bp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None,
        )
    return _make(a.data * b.data, (a, b), bp)


def neg(a) -> Tensor:
    a = _t(a)
    def bp(g):
        return (-g,)
    return _make(-a.data, (a,), bp)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    def bp(g):
        return (g * s,)
    return _make(a.data * np.asarray(s, dtype=a.data.dtype), (a,), bp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    def bp(g):
        return (
            g @ b.data.T if a.requires_grad else None,
            a.data.T @ g if b.requires_grad else None,
        )
    return _make(a.data @ b.data, (a, b), bp)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul: (B,m,n) @ (B,n,p) -> (B,m,p)."""
    def bp(g):
        return (
            g @ b.data.transpose(0, 2, 1) if a.requires_grad else None,
            a.data.transpose(0, 2, 1) @ g if b.requires_grad else None,
        )
    return _make(a.data @ b.data, (a, b), bp)


def swap12(a: Tensor) -> Tensor:
    def bp(g):
        return (g.swapaxes(1, 2),)
    return _make(a.data.swapaxes(1, 2), (a,), bp)


# ---------------------------------------------------------------------------
# structure


def reshape(a: Tensor, shape) -> Tensor:
    src = a.data.shape
    def bp(g):
        return (g.reshape(src),)
    return _make(a.data.reshape(shape), (a,), bp)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    idx = tuple(
        slice(start, start + length) if i == axis else slice(None)
        for i in range(a.data.ndim)
    )
    def bp(g):
        out = np.zeros_like(a.data)
        out[idx] = g
        return (out,)
    return _make(a.data[idx], (a,), bp)


def concat(parts, axis: int = 0) -> Tensor:
    parts = tuple(parts)
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]
    def bp(g):
        pieces = np.split(g, bounds, axis=axis)
        return tuple(pc if p.requires_grad else None for p, pc in zip(parts, pieces))
    return _make(data, parts, bp)


# ---------------------------------------------------------------------------
# reductions (accumulate in float64, cast back)


def sum_all(a: Tensor) -> Tensor:
    data = np.asarray(a.data.sum(dtype=np.float64), dtype=a.data.dtype)
    def bp(g):
        return (np.broadcast_to(g, a.data.shape),)
    return _make(data, (a,), bp)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    data = np.asarray(a.data.sum(dtype=np.float64) / n, dtype=a.data.dtype)
    def bp(g):
        return (np.broadcast_to(g / n, a.data.shape),)
    return _make(data, (a,), bp)


def sum_axis(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, dtype=np.float64, keepdims=keepdims).astype(a.data.dtype)
    def bp(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape),)
    return _make(data, (a,), bp)


def mean_axis(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    n = a.data.shape[axis]
    data = (a.data.sum(axis=axis, dtype=np.float64, keepdims=keepdims) / n).astype(a.data.dtype)
    def bp(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / n, a.data.shape),)
    return _make(data, (a,), bp)


# ---------------------------------------------------------------------------
# pointwise nonlinearities


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    def bp(g):
        return (g * (1.0 - y * y),)
    return _make(y, (a,), bp)


def sigmoid(a: Tensor) -> Tensor:
    # clip keeps exp in range; saturation is exact at float precision anyway
    y = 1.0 / (1.0 + np.exp(-np.clip(a.data, -60.0, 60.0)))
    def bp(g):
        return (g * (y * (1.0 - y)),)
    return _make(y, (a,), bp)


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    def bp(g):
        return (g * y,)
    return _make(y, (a,), bp)


def log(a: Tensor, floor: float = 0.0) -> Tensor:
    """Natural log; with ``floor`` > 0, inputs are clamped below at ``floor``
    and the gradient is zero on the clamped region."""
    x = a.data
    if floor > 0.0:
        y = np.log(np.maximum(x, floor))
        def bp(g):
            return (np.where(x > floor, g / np.maximum(x, floor), 0.0).astype(x.dtype),)
    else:
        y = np.log(x)
        def bp(g):
            return (g / x,)
    return _make(y, (a,), bp)
