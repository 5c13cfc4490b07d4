"""Finite-difference gradient checking.

The checker promotes parameters to float64 and evaluates both the analytic
gradient (same backward code, wider dtype) and central differences there;
float32 forward noise would otherwise swamp the comparison. The loss builder
must be deterministic given the parameters (freeze dropout and sampling
noise).
"""

from __future__ import annotations

import numpy as np

from .optim import ParamSet
from .engine import backward

REL_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - f| / max(|f|, floor) over all elements."""
    a = np.asarray(analytic, dtype=np.float64)
    f = np.asarray(numeric, dtype=np.float64)
    return float((np.abs(a - f) / np.maximum(np.abs(f), REL_FLOOR)).max())


def finite_diff_check(loss_builder, params: ParamSet, h: float = 1e-4) -> float:
    """Compare analytic gradients against central differences.

    loss_builder(params) must return a scalar Tensor. Returns the maximum
    relative error across every element of every parameter.
    """
    ps = params.astype(np.float64)
    ps.zero_grad()
    backward(loss_builder(ps))
    worst = 0.0
    for _, t in ps.items():
        grad = np.zeros_like(t.data) if t.grad is None else np.asarray(t.grad, dtype=np.float64)
        flat = t.data.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_builder(ps).item()
            flat[i] = orig - h
            lm = loss_builder(ps).item()
            flat[i] = orig
            fd = (lp - lm) / (2.0 * h)
            err = abs(gflat[i] - fd) / max(abs(fd), REL_FLOOR)
            if err > worst:
                worst = err
    return worst
