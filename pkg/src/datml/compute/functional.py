"""Neural-net ops on top of the tensor graph: softmax family, embedding
lookups, scatter/gather for copy distributions, dropout, Gumbel-softmax and
categorical KL."""

from __future__ import annotations

import numpy as np

from .engine import Tensor, _make, _t


class InfiniteKLError(ValueError):
    """q places mass where p has none."""


def _softmax_np(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    y = _softmax_np(a.data)
    def bp(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)
    return _make(y, (a,), bp)


def log_softmax(a: Tensor) -> Tensor:
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    z = x - m
    ls = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    def bp(g):
        return (g - np.exp(ls) * g.sum(axis=-1, keepdims=True),)
    return _make(ls, (a,), bp)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: ids with shape S yields output with shape S + (E,)."""
    ids = np.asarray(ids)
    data = table.data[ids]
    def bp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))
        return (gt,)
    return _make(data, (table,), bp)


def gather_rows(a: Tensor, ids: np.ndarray) -> Tensor:
    """Pick one column per row of a 2-D tensor: out[i] = a[i, ids[i]]."""
    n = a.data.shape[0]
    rows = np.arange(n)
    data = a.data[rows, ids]
    def bp(g):
        out = np.zeros_like(a.data)
        out[rows, ids] = g
        return (out,)
    return _make(data, (a,), bp)


def scatter_probs(weights: Tensor, ids: np.ndarray, size: int) -> Tensor:
    """Sum per-position weights into an id-indexed distribution.

    weights: (B, S), ids: (B, S) int -> (B, size); duplicate ids within a row
    add their mass.
    """
    b = weights.data.shape[0]
    rows = np.arange(b)[:, None]
    data = np.zeros((b, size), dtype=weights.data.dtype)
    np.add.at(data, (rows, ids), weights.data)
    def bp(g):
        return (g[rows, ids],)
    return _make(data, (weights,), bp)


def dropout(a: Tensor, rate: float, rng: np.random.Generator, training: bool = True) -> Tensor:
    """Inverted dropout; identity when not training or rate == 0."""
    if not training or rate <= 0.0:
        return a
    keep = (rng.random(a.data.shape) >= rate).astype(a.data.dtype) / (1.0 - rate)
    def bp(g):
        return (g * keep,)
    return _make(a.data * keep, (a,), bp)


def sample_gumbel(rng: np.random.Generator, shape, dtype=np.float32) -> np.ndarray:
    u = rng.random(shape)
    tiny = np.finfo(np.float64).tiny
    return (-np.log(-np.log(np.clip(u, tiny, 1.0 - 1e-12)))).astype(dtype)


def gumbel_softmax(
    logits: Tensor,
    temperature: float = 1.0,
    noise: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
    hard: bool = False,
) -> Tensor:
    """Gumbel-softmax over the last axis.

    ``noise`` fixes the Gumbel sample (test hook); otherwise it is drawn from
    ``rng``. With ``hard`` the forward value is the one-hot argmax while the
    gradient is the soft relaxation (straight-through).
    """
    logits = _t(logits)
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if noise is not None:
        noise = np.asarray(noise, dtype=logits.data.dtype)
        if noise.shape != logits.data.shape:
            raise ValueError(f"noise shape {noise.shape} != logits shape {logits.data.shape}")
    elif rng is not None:
        noise = sample_gumbel(rng, logits.data.shape, logits.data.dtype)
    else:
        noise = np.zeros_like(logits.data)
    y = _softmax_np((logits.data + noise) / temperature)
    if hard:
        data = np.zeros_like(y)
        np.put_along_axis(data, y.argmax(axis=-1, keepdims=True), 1.0, axis=-1)
    else:
        data = y
    def bp(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return ((y * (g - dot)) / temperature,)
    return _make(data, (logits,), bp)


def kl_categorical(q, p) -> Tensor:
    """KL(q || p) summed over rows of categorical distributions.

    Accepts tensors or arrays shaped (..., k); every row must sum to 1 within
    1e-6. Zero q entries contribute nothing; q > 0 where p == 0 raises
    ``InfiniteKLError``.
    """
    q, p = _t(q), _t(p)
    qd, pd = q.data, p.data
    if qd.shape != pd.shape:
        raise ValueError(f"shape mismatch: {qd.shape} vs {pd.shape}")
    for name, d in (("q", qd), ("p", pd)):
        sums = d.sum(axis=-1, dtype=np.float64)
        if not np.allclose(sums, 1.0, atol=1e-6):
            raise ValueError(f"{name} rows must sum to 1 (max deviation {np.abs(sums - 1).max():.2e})")
    active = qd > 0
    if np.any(active & (pd <= 0)):
        raise InfiniteKLError("q has support where p is zero")
    lq = np.log(np.where(active, qd, 1.0))
    lp = np.log(np.where(pd > 0, pd, 1.0))
    total = float((np.where(active, qd * (lq - lp), 0.0)).sum(dtype=np.float64))
    if -1e-12 < total < 0.0:
        total = 0.0
    data = np.asarray(total, dtype=qd.dtype)
    def bp(g):
        gq = np.where(active, (lq - lp) + 1.0, 0.0).astype(qd.dtype) * g if q.requires_grad else None
        gp = (-np.where(active, qd / np.where(pd > 0, pd, 1.0), 0.0)).astype(pd.dtype) * g if p.requires_grad else None
        return (gq, gp)
    return _make(data, (q, p), bp)


def one_hot(ids: np.ndarray, depth: int, dtype=np.float32) -> np.ndarray:
    """Plain numpy one-hot (no gradient)."""
    ids = np.asarray(ids)
    out = np.zeros(ids.shape + (depth,), dtype=dtype)
    np.put_along_axis(out, ids[..., None], 1.0, axis=-1)
    return out
