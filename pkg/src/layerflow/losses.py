"""Training objective: reconstruction, velocity damping, inertia.

All terms are means rather than sums so the regularizer weights stay
comparable across batch sizes and resolutions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .compositor import composite_at
from .motion import integrate
from .tensor import (Tensor, absolute, add, concat, mean, reshape, scale,
                     square, sub, sum_, variance)


@dataclass(frozen=True)
class LossWeights:
    lambda_v: float = 0.01
    lambda_i: float = 0.01
    alpha: float = 0.0

    def __post_init__(self):
        for name in ("lambda_v", "lambda_i", "alpha"):
            val = getattr(self, name)
            if not np.isfinite(val) or val < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {val}")


@dataclass
class PixelBatch:
    """Query coordinates (n, 3) of (u, v, t) in normalized units with
    their observed colors (n, 3) in [0, 1]."""
    coords: np.ndarray
    target_rgb: np.ndarray

    def __post_init__(self):
        self.coords = np.ascontiguousarray(self.coords, dtype=np.float64)
        self.target_rgb = np.ascontiguousarray(self.target_rgb, dtype=np.float64)
        if self.coords.ndim != 2 or self.coords.shape[1] != 3:
            raise ValueError(f"coords must be (n, 3), got {self.coords.shape}")
        if self.target_rgb.shape != (self.coords.shape[0], 3):
            raise ValueError(
                f"target_rgb must be ({self.coords.shape[0]}, 3), "
                f"got {self.target_rgb.shape}")
        if self.coords.shape[0] == 0:
            raise ValueError("empty pixel batch")

    def __len__(self):
        return self.coords.shape[0]


def rgb_loss(model, batch: PixelBatch) -> Tensor:
    """Mean over the batch of the per-pixel l1 color error (summed
    over the three channels)."""
    rendered, _ = composite_at(model.frame_net, model.velocity_nets,
                               Tensor(batch.coords), model.blend,
                               model.integrator)
    diff = absolute(sub(rendered, Tensor(batch.target_rgb)))
    return scale(sum_(diff), 1.0 / len(batch))


def velocity_reg(model, sample_points: np.ndarray, alpha: float,
                 fd_h: float) -> Tensor:
    """Mean over points and layers of ||V - alpha * Lap(V)||^2, the
    Laplacian taken over (u, v) by 5-point finite differences with
    step fd_h. alpha = 0 skips the stencil entirely."""
    if fd_h <= 0:
        raise ValueError(f"fd_h must be positive, got {fd_h}")
    pts = np.asarray(sample_points, dtype=np.float64)
    n = pts.shape[0]
    terms = []
    for vnet in model.velocity_nets:
        v = vnet.forward(Tensor(pts))
        if alpha != 0.0:
            offsets = [(fd_h, 0.0), (-fd_h, 0.0), (0.0, fd_h), (0.0, -fd_h)]
            stencil = None
            for du, dv in offsets:
                shifted = pts + np.array([du, dv, 0.0])
                vs = vnet.forward(Tensor(shifted))
                stencil = vs if stencil is None else add(stencil, vs)
            lap = scale(sub(stencil, scale(v, 4.0)), 1.0 / (fd_h * fd_h))
            resid = sub(v, scale(lap, alpha))
        else:
            resid = v
        terms.append(scale(sum_(square(resid)), 1.0 / n))
    total = terms[0]
    for t in terms[1:]:
        total = add(total, t)
    out = scale(total, 1.0 / len(terms))
    if not np.all(np.isfinite(out.data)):
        raise ValueError("velocity_reg produced a non-finite value")
    return out


def _leg_velocities(vnet, start: Tensor, t_end: float, config):
    _, vels = integrate(vnet, start, 0.0, t_end, config,
                        collect_velocities=True)
    return vels


def inertia_loss(model, start_points: np.ndarray) -> Tensor:
    """Variance of the velocities a point meets along its trajectory
    over the full time span, averaged over components, layers, and
    start points.

    Each trajectory runs from t=-1 to t=+1 through the start point at
    t=0; the recorded velocities sit at the Euler step starts of that
    combined path (so t=+1 itself contributes no sample).
    """
    pts = np.asarray(start_points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] == 0:
        raise ValueError(f"start_points must be non-empty (n, 2), got {pts.shape}")
    m = pts.shape[0]
    cfg = model.integrator
    terms = []
    for vnet in model.velocity_nets:
        start = Tensor(pts)
        back = _leg_velocities(vnet, start, -1.0, cfg)   # starts + arrival at -1
        fwd = _leg_velocities(vnet, start, +1.0, cfg)    # drop dup t=0 and arrival
        vels = back + fwd[1:-1]
        rows = [reshape(v, (1, m * 2)) for v in vels]
        stacked = concat(rows, axis=0)
        per_component = variance(stacked, axis=0)
        terms.append(mean(per_component))
    total = terms[0]
    for t in terms[1:]:
        total = add(total, t)
    return scale(total, 1.0 / len(terms))


def combine_terms(rgb: Tensor, vel: Tensor, inertia: Tensor,
                  weights: LossWeights) -> Tensor:
    return add(rgb, add(scale(vel, weights.lambda_v),
                        scale(inertia, weights.lambda_i)))


def total_loss(model, batch: PixelBatch, weights: LossWeights,
               rng: np.random.Generator | None = None,
               max_inertia_points: int = 256):
    """Full objective and its per-term breakdown.

    The velocity regularizer is sampled at the batch coordinates; the
    inertia term at a subsample of the batch's (u, v) projections
    (random when `rng` is given, the batch prefix otherwise).
    Returns (total tensor, {"total", "rgb", "velocity", "inertia"}).
    """
    rgb = rgb_loss(model, batch)
    vel = velocity_reg(model, batch.coords, weights.alpha, model.fd_h())

    uv = batch.coords[:, :2]
    if len(batch) > max_inertia_points:
        if rng is not None:
            idx = rng.choice(len(batch), size=max_inertia_points, replace=False)
            idx.sort()
        else:
            idx = np.arange(max_inertia_points)
        uv = uv[idx]
    inertia = inertia_loss(model, uv)

    total = combine_terms(rgb, vel, inertia, weights)
    breakdown = {
        "total": float(total.data),
        "rgb": float(rgb.data),
        "velocity": float(vel.data),
        "inertia": float(inertia.data),
    }
    return total, breakdown
