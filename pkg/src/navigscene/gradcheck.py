"""Central finite differences for checking analytic gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

FD_STEP = 1e-5
# Denominator floor per unit of loss. Central differences at h=1e-5 carry
# roughly 1e-10 * |loss| of roundoff, so gradient entries much smaller than
# REL_FLOOR * |loss| are compared by absolute error instead.
REL_FLOOR = 1e-5


def central_difference(f: Callable[[], float], param: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Numerical gradient of ``f`` with respect to ``param``, which is perturbed in place."""
    grad = np.zeros_like(param, dtype=float)
    flat = param.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        out[i] = (up - down) / (2.0 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> float:
    """max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)."""
    a = np.asarray(analytic, dtype=float).ravel()
    n = np.asarray(numeric, dtype=float).ravel()
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def loss_floor(loss_value: float) -> float:
    return REL_FLOOR * max(1.0, abs(loss_value))
