"""Adam optimizer with bias correction.

State lives in plain float64 arrays so it can be serialized into
checkpoints and restored bit-exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .tensor import ShapeError, Tensor


@dataclass
class AdamState:
    """Per-parameter first/second moment estimates plus the shared
    update counter (number of completed steps)."""
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """Apply one update to every parameter, in place. A parameter
    missing from `grads` is treated as having a zero gradient."""
    state.step += 1
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        else:
            g = np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise ShapeError(
                f"adam: gradient for {name!r} has shape {g.shape}, "
                f"parameter has {p.data.shape}")
        if not np.all(np.isfinite(g)):
            raise ValueError(f"adam: non-finite gradient for parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        _backend.active.adam_update(p.data, g, state.m[name], state.v[name],
                                    state.step, lr, beta1, beta2, eps)
    return state


class Adam:
    """Convenience wrapper binding a parameter dict to an AdamState."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState()

    def step(self, grads: dict[str, np.ndarray] | None = None):
        """Update from an explicit name->gradient map, or from each
        parameter's `.grad` when no map is given."""
        if grads is None:
            grads = {name: p.grad for name, p in self.params.items()
                     if p.grad is not None}
        adam_step(self.params, grads, self.state, self.lr, self.beta1,
                  self.beta2, self.eps)
