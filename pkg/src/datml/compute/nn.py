"""Layers built from the tensor ops: linear maps, embeddings and a GRU.

Layers hold only parameter *names*; the actual tensors live in a ParamSet
passed to every call. Swapping in a copied ParamSet (as the meta-learning
inner loop does) therefore re-binds the whole model.
"""

from __future__ import annotations

import numpy as np

from . import engine as T
from .optim import ParamSet
from .engine import Tensor


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, dtype=np.float32) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_in, fan_out)).astype(dtype)


def uniform_init(rng: np.random.Generator, shape, scale: float = 0.1, dtype=np.float32) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape).astype(dtype)


class Linear:
    def __init__(
        self,
        ps: ParamSet,
        name: str,
        in_dim: int,
        out_dim: int,
        rng: np.random.Generator,
        bias: bool = True,
        zero_init: bool = False,
    ):
        self.w = f"{name}.w"
        self.b = f"{name}.b" if bias else None
        w0 = np.zeros((in_dim, out_dim), dtype=np.float32) if zero_init else glorot(rng, in_dim, out_dim)
        ps.add(self.w, w0)
        if bias:
            ps.add(self.b, np.zeros(out_dim, dtype=np.float32))

    def __call__(self, ps: ParamSet, x: Tensor) -> Tensor:
        y = T.matmul(x, ps[self.w])
        if self.b is not None:
            y = T.add(y, ps[self.b])
        return y


class EmbeddingTable:
    def __init__(
        self,
        ps: ParamSet,
        name: str,
        vocab_size: int,
        dim: int,
        rng: np.random.Generator,
        pretrained: np.ndarray | None = None,
    ):
        self.name = name
        init = uniform_init(rng, (vocab_size, dim))
        if pretrained is not None:
            rows = min(vocab_size, pretrained.shape[0])
            init[:rows] = pretrained[:rows, :dim]
        ps.add(name, init)

    def __call__(self, ps: ParamSet, ids: np.ndarray) -> Tensor:
        from .functional import embedding

        return embedding(ps[self.name], ids)


class GRUCell:
    """Gated recurrent unit; input projections for a whole sequence can be
    precomputed once via ``input_proj`` and sliced per step."""

    def __init__(self, ps: ParamSet, name: str, in_dim: int, hidden_dim: int, rng: np.random.Generator):
        self.h = hidden_dim
        self.w = f"{name}.w"    # (in, 3H): update | reset | candidate
        self.u = f"{name}.u"    # (H, 2H): update | reset
        self.un = f"{name}.un"  # (H, H): candidate
        self.b = f"{name}.b"
        ps.add(self.w, glorot(rng, in_dim, 3 * hidden_dim))
        ps.add(self.u, glorot(rng, hidden_dim, 2 * hidden_dim))
        ps.add(self.un, glorot(rng, hidden_dim, hidden_dim))
        ps.add(self.b, np.zeros(3 * hidden_dim, dtype=np.float32))

    def input_proj(self, ps: ParamSet, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, ps[self.w]), ps[self.b])

    def step_pre(self, ps: ParamSet, xa: Tensor, h: Tensor) -> Tensor:
        hd = self.h
        xz = T.narrow(xa, 1, 0, hd)
        xr = T.narrow(xa, 1, hd, hd)
        xn = T.narrow(xa, 1, 2 * hd, hd)
        hzr = T.matmul(h, ps[self.u])
        z = T.sigmoid(T.add(xz, T.narrow(hzr, 1, 0, hd)))
        r = T.sigmoid(T.add(xr, T.narrow(hzr, 1, hd, hd)))
        n = T.tanh(T.add(xn, T.matmul(T.mul(r, h), ps[self.un])))
        # h' = z*h + (1-z)*n, written as n + z*(h-n)
        return T.add(n, T.mul(z, T.sub(h, n)))

    def step(self, ps: ParamSet, x: Tensor, h: Tensor) -> Tensor:
        return self.step_pre(ps, self.input_proj(ps, x), h)


def zeros_state(batch: int, hidden: int, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros((batch, hidden), dtype=dtype))


def run_gru(
    cell: GRUCell,
    ps: ParamSet,
    emb: Tensor,
    mask: np.ndarray,
    h0: Tensor | None = None,
    collect_states: bool = False,
):
    """Run a GRU over (B, T, E) embeddings with a (B, T) pad mask.

    The state freezes on masked steps, so the returned final state is the
    state at each row's last real token. Returns (final, states|None) where
    states is (B, T, H).
    """
    b, t, _ = emb.data.shape
    hd = cell.h
    dtype = emb.data.dtype
    xa = T.reshape(cell.input_proj(ps, T.reshape(emb, (b * t, emb.data.shape[2]))), (b, t, 3 * hd))
    h = h0 if h0 is not None else zeros_state(b, hd, dtype)
    states = [] if collect_states else None
    for i in range(t):
        xa_t = T.reshape(T.narrow(xa, 1, i, 1), (b, 3 * hd))
        hn = cell.step_pre(ps, xa_t, h)
        m = Tensor(mask[:, i : i + 1].astype(dtype))
        h = T.add(h, T.mul(m, T.sub(hn, h)))
        if collect_states:
            states.append(T.reshape(h, (b, 1, hd)))
    if collect_states:
        return h, T.concat(states, axis=1)
    return h, None
