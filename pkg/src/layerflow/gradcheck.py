"""Finite-difference verification of tape gradients."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tape, Tensor, backward


def grad_check(fn: Callable[[Tensor], Tensor], point: Tensor,
               fd_step: float = 1e-5) -> float:
    """Compare the tape gradient of scalar-valued `fn` at `point`
    against central differences.

    Returns the worst relative error over all coordinates:
    |analytic - numeric| / max(1e-8, |numeric|). Raises ValueError if
    fn evaluates to a non-finite value anywhere it is probed.
    """
    point.requires_grad = True
    with Tape() as tape:
        out = fn(point)
    if out.data.size != 1:
        raise ValueError(f"grad_check needs a scalar function, got shape {out.shape}")
    if not np.all(np.isfinite(out.data)):
        raise ValueError("grad_check: function value is not finite")
    backward(tape, out)
    analytic = point.grad
    if analytic is None:
        analytic = np.zeros_like(point.data)

    flat = point.data.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + fd_step
        f_plus = _eval(fn, point)
        flat[i] = orig - fd_step
        f_minus = _eval(fn, point)
        flat[i] = orig
        numeric = (f_plus - f_minus) / (2.0 * fd_step)
        err = abs(analytic.reshape(-1)[i] - numeric) / max(1e-8, abs(numeric))
        worst = max(worst, err)
    return worst


def _eval(fn, point) -> float:
    out = fn(point)
    val = float(out.data.reshape(-1)[0])
    if not np.isfinite(val):
        raise ValueError("grad_check: function value is not finite")
    return val
