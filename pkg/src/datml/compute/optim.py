"""Named parameter collections and the two optimizers the trainers use."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import Tensor, parameter


class MissingGradientError(RuntimeError):
    pass


class ShapeMismatchError(ValueError):
    pass


class ParamSet:
    """Ordered name -> Tensor map holding trainable parameters.

    Iteration order is insertion order and is relied on for deterministic
    optimizer sweeps and checkpoint layout.
    """

    def __init__(self):
        self._entries: dict[str, Tensor] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self._entries:
            raise ValueError(f"duplicate parameter name '{name}'")
        t = data if isinstance(data, Tensor) else parameter(data)
        t.requires_grad = True
        self._entries[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self):
        return list(self._entries)

    def items(self):
        return self._entries.items()

    def zero_grad(self) -> None:
        for t in self._entries.values():
            t.grad = None

    def copy(self) -> "ParamSet":
        out = ParamSet()
        for name, t in self._entries.items():
            out.add(name, t.data.copy())
        return out

    def astype(self, dtype) -> "ParamSet":
        out = ParamSet()
        for name, t in self._entries.items():
            out.add(name, t.data.astype(dtype))
        return out

    def value_count(self) -> int:
        return sum(t.data.size for t in self._entries.values())

    def check_compatible(self, other: "ParamSet") -> None:
        if self.names() != other.names():
            ours, theirs = set(self.names()), set(other.names())
            diff = ours.symmetric_difference(theirs)
            if diff:
                raise ShapeMismatchError(f"parameter name mismatch: {sorted(diff)}")
            raise ShapeMismatchError("parameter order mismatch")
        for name, t in self._entries.items():
            if t.data.shape != other[name].data.shape:
                raise ShapeMismatchError(
                    f"shape mismatch for parameter '{name}': "
                    f"{t.data.shape} vs {other[name].data.shape}"
                )

    def allclose(self, other: "ParamSet", atol: float = 0.0) -> bool:
        self.check_compatible(other)
        return all(
            np.allclose(t.data, other[name].data, atol=atol, rtol=0.0)
            for name, t in self._entries.items()
        )


@dataclass
class OptimizerState:
    kind: str
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step_count: int = 0


def make_sgd(learning_rate: float) -> OptimizerState:
    return OptimizerState(kind="sgd", learning_rate=learning_rate)


def make_adam(
    learning_rate: float, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8
) -> OptimizerState:
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
        raise ValueError("beta1 and beta2 must lie in [0, 1)")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    return OptimizerState(
        kind="adam", learning_rate=learning_rate, beta1=beta1, beta2=beta2, epsilon=epsilon
    )


def _grad_of(name: str, t: Tensor) -> np.ndarray:
    if t.grad is None:
        raise MissingGradientError(f"no gradient for parameter '{name}'")
    return t.grad


def sgd_step(params: ParamSet, state: OptimizerState) -> ParamSet:
    """In-place v <- v - lr * g over every parameter; returns ``params``."""
    for name, t in params.items():
        g = _grad_of(name, t)
        t.data = (t.data - state.learning_rate * g).astype(t.data.dtype, copy=False)
    state.step_count += 1
    return params


def adam_step(params: ParamSet, state: OptimizerState) -> ParamSet:
    """Standard bias-corrected Adam update; moments live in ``state``."""
    state.step_count += 1
    t = state.step_count
    b1, b2, eps, lr = state.beta1, state.beta2, state.epsilon, state.learning_rate
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = _grad_of(name, p)
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        else:
            v = state.v[name]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        p.data = (p.data - lr * update).astype(p.data.dtype, copy=False)
    return params


def optimizer_step(params: ParamSet, state: OptimizerState) -> ParamSet:
    if state.kind == "adam":
        return adam_step(params, state)
    if state.kind == "sgd":
        return sgd_step(params, state)
    raise ValueError(f"unknown optimizer kind '{state.kind}'")
