"""Motion: forward-Euler integration of neural velocity fields.

The location map M(x, t0, t1) moves a point x from time t0 to t1 by
stepping through the velocity field with step size dt; the final step
shrinks so the arrival time is exactly t1. Two implementations share
the same schedule and therefore the same numerics:

  * `integrate` composes tape ops step by step. It can record full
    trajectories and per-step velocity tensors, and is the reference
    the fused path is checked against.
  * `warp_points` runs the whole batch through the backend kernels as
    a single tape node with a custom backward (positions are cached
    per step, activations recomputed), which keeps tape memory flat
    regardless of step count. Query times may differ per point; points
    are processed sorted by remaining step count so each Euler step
    touches a shrinking prefix.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import _backend
from .networks import VelocityNet
from .tensor import Tape, Tensor, active_tape, add, as_tensor, scale

_CEIL_GUARD = 1e-9


class IntegrationError(RuntimeError):
    """Integration produced a non-finite position."""

    def __init__(self, message: str, step_index: int):
        super().__init__(message)
        self.step_index = step_index


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 0.02

    def __post_init__(self):
        if not (0.0 < self.dt <= 2.0):
            raise ValueError(f"dt must be in (0, 2], got {self.dt}")


@dataclass
class Trajectory:
    """Euler path of a point batch: positions[k] at timestamps[k] with
    velocities[k] sampled there, so
    positions[k+1] = positions[k] + (timestamps[k+1]-timestamps[k]) * velocities[k].
    """
    positions: np.ndarray   # (steps+1, n, 2)
    velocities: np.ndarray  # (steps+1, n, 2), last entry sampled at arrival
    timestamps: np.ndarray  # (steps+1,)


def num_steps(t0: float, t1: float, dt: float) -> int:
    return int(math.ceil(abs(t1 - t0) / dt - _CEIL_GUARD))


def step_times(t0: float, t1: float, dt: float) -> np.ndarray:
    """Times visited between t0 and t1 inclusive. Interior times sit on
    the dt grid anchored at t0; the final entry is exactly t1."""
    n = num_steps(t0, t1, dt)
    sgn = 1.0 if t1 >= t0 else -1.0
    times = [t0 + k * dt * sgn for k in range(n)]
    times.append(t1)
    return np.array(times)


def snap_to_grid(t: float, t0: float, dt: float) -> float:
    """Nearest point to t on the dt grid anchored at t0."""
    return t0 + round((t - t0) / dt) * dt


def integrate(field, start, t0: float, t1: float,
              config: IntegratorConfig | None = None,
              record_trajectory: bool = False,
              collect_velocities: bool = False):
    """Move `start` (n, 2) from t0 to t1 through `field`.

    Returns the arrival positions; with `record_trajectory` a
    (positions, Trajectory) pair; with `collect_velocities` a
    (positions, [velocity tensors]) pair where velocities are sampled
    at every step start and once more at arrival, all on the tape.
    `field` needs a forward_at(positions, t) -> (n, 2) method.
    """
    if config is None:
        config = IntegratorConfig()
    pos = as_tensor(start)
    if pos.data.ndim != 2 or pos.shape[1] != 2:
        raise ValueError(f"start must be (n, 2), got {pos.shape}")
    times = step_times(t0, t1, config.dt)

    want_vel = record_trajectory or collect_velocities
    velocities: list[Tensor] = []
    positions = [pos]
    for k in range(len(times) - 1):
        t_cur, t_next = float(times[k]), float(times[k + 1])
        v = field.forward_at(pos, t_cur)
        pos = add(pos, scale(v, t_next - t_cur))
        if not np.all(np.isfinite(pos.data)):
            raise IntegrationError(
                f"non-finite position after step {k} (t={t_next:g})", k)
        if want_vel:
            velocities.append(v)
            positions.append(pos)
    if want_vel:
        velocities.append(field.forward_at(pos, float(times[-1])))

    if record_trajectory:
        traj = Trajectory(
            positions=np.stack([p.data for p in positions]),
            velocities=np.stack([v.data for v in velocities]),
            timestamps=times,
        )
        return pos, traj
    if collect_velocities:
        return pos, velocities
    return pos


def consistency_residuals(field, points: np.ndarray, t0: float, t1: float,
                          t2: float, config: IntegratorConfig | None = None
                          ) -> tuple[float, float]:
    """Discrete check of the two location-map identities.

    The intermediate time is snapped onto the dt grid anchored at t0 so
    both routes visit the same lattice. Returns (forward, backward):
      forward  = max_x || M(M(x,t0,t1), t1, t2) - M(x,t0,t2) ||
      backward = max_x || M(M(x,t0,t1), t1, t0) - x ||
    """
    if config is None:
        config = IntegratorConfig()
    t1s = snap_to_grid(t1, t0, config.dt)
    pts = Tensor(np.asarray(points, dtype=np.float64))

    mid = integrate(field, pts, t0, t1s, config)
    via = integrate(field, mid, t1s, t2, config)
    direct = integrate(field, pts, t0, t2, config)
    back = integrate(field, mid, t1s, t0, config)

    fwd_res = float(np.max(np.linalg.norm(via.data - direct.data, axis=1), initial=0.0))
    bwd_res = float(np.max(np.linalg.norm(back.data - pts.data, axis=1), initial=0.0))
    return fwd_res, bwd_res


# ------------------------------------------------- fused batched warp


def _net_arrays(net: VelocityNet):
    Ws = [l.W.data for l in net.layers] + [net.out.W.data]
    bs = [l.b.data for l in net.layers] + [net.out.b.data]
    omegas = [net.omega0 if d == 0 else 1.0 for d in range(len(net.layers))]
    return Ws, bs, omegas, net.encoding.num_bands


def _velocity_data(X, Ws, bs, omegas, num_bands):
    """Plain-array forward of a velocity net, kernel for kernel the
    same arithmetic as the tape ops."""
    K = _backend.active
    h = K.fourier_fwd(X, num_bands)
    for W, b, om in zip(Ws[:-1], bs[:-1], omegas):
        h = K.sine_fwd(h @ W + b, om)
    return h @ Ws[-1] + bs[-1]


def _warp_forward(points: np.ndarray, tvals: np.ndarray, t1: float, dt: float,
                  Ws, bs, omegas, num_bands):
    n = points.shape[0]
    remaining = np.abs(t1 - tvals)
    nsteps = np.ceil(remaining / dt - _CEIL_GUARD).astype(np.int64)
    order = np.argsort(-nsteps, kind="stable")
    inv = np.empty_like(order)
    inv[order] = np.arange(n)

    p = np.ascontiguousarray(points[order])
    tau = tvals[order]
    ns = nsteps[order]
    sgn = np.where(t1 >= tau, 1.0, -1.0)
    t_cur = tau.copy()
    kmax = int(ns[0]) if n else 0

    steps = []  # (m, positions, times, step_sizes) per Euler step
    for k in range(kmax):
        # count of points still moving: those with ns > k
        m = int(np.searchsorted(-ns, -(k + 1), side="right"))
        t_next = np.where(k + 1 < ns[:m], tau[:m] + (k + 1) * dt * sgn[:m], t1)
        s = t_next - t_cur[:m]
        X = np.column_stack([p[:m], t_cur[:m]])
        v = _velocity_data(X, Ws, bs, omegas, num_bands)
        steps.append((m, p[:m].copy(), t_cur[:m].copy(), s))
        p[:m] += s[:, None] * v
        if not np.all(np.isfinite(p[:m])):
            raise IntegrationError(f"non-finite position after step {k}", k)
        t_cur[:m] = t_next
    return p[inv], (order, inv, steps)


def _warp_backward(cache, grad_out: np.ndarray, Ws, bs, omegas, num_bands):
    K = _backend.active
    order, inv, steps = cache
    g = np.ascontiguousarray(grad_out[order])
    dWs = [np.zeros_like(W) for W in Ws]
    dbs = [np.zeros_like(b) for b in bs]
    n_hidden = len(Ws) - 1

    for m, p_k, t_k, s in reversed(steps):
        X = np.column_stack([p_k, t_k])
        # recompute the forward activations of this step
        hs = [K.fourier_fwd(X, num_bands)]
        pres = []
        for l in range(n_hidden):
            z = hs[-1] @ Ws[l] + bs[l]
            pres.append(z)
            hs.append(K.sine_fwd(z, omegas[l]))

        gq = g[:m]                      # grad w.r.t. the stepped position
        gv = s[:, None] * gq            # grad w.r.t. the velocity sample
        dWs[-1] += hs[-1].T @ gv
        dbs[-1] += gv.sum(axis=0)
        gh = gv @ Ws[-1].T
        for l in range(n_hidden - 1, -1, -1):
            gz = K.sine_bwd(pres[l], omegas[l], gh)
            dWs[l] += hs[l].T @ gz
            dbs[l] += gz.sum(axis=0)
            gh = gz @ Ws[l].T
        gx = K.fourier_bwd(X, num_bands, gh)
        g[:m] = gq + gx[:, :2]
    return g[inv], dWs, dbs


def warp_points(net: VelocityNet, points, tvals: np.ndarray, t1: float,
                config: IntegratorConfig | None = None) -> Tensor:
    """Move points (n, 2) from per-point times `tvals` to the shared
    time t1, as one tape node. Gradients flow to the net parameters and
    to the spatial coordinates; the query times are treated as data.
    """
    if config is None:
        config = IntegratorConfig()
    pts = as_tensor(points)
    if pts.data.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"points must be (n, 2), got {pts.shape}")
    tvals = np.asarray(tvals, dtype=np.float64)
    if tvals.shape != (pts.shape[0],):
        raise ValueError(
            f"tvals must be ({pts.shape[0]},), got {tvals.shape}")

    Ws, bs, omegas, num_bands = _net_arrays(net)
    out_data, cache = _warp_forward(pts.data, tvals, float(t1), config.dt,
                                    Ws, bs, omegas, num_bands)

    param_tensors = [l.W for l in net.layers] + [net.out.W]
    bias_tensors = [l.b for l in net.layers] + [net.out.b]
    inputs = (pts, *param_tensors, *bias_tensors)
    rg = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=rg)

    tape = active_tape()
    if tape is not None and rg:
        def bwd(grad_out):
            dpts, dWs, dbs = _warp_backward(cache, grad_out, Ws, bs,
                                            omegas, num_bands)
            return (dpts, *dWs, *dbs)

        tape.record("warp_to_canonical", inputs, out, bwd)
    return out


def to_canonical(net: VelocityNet, pixels, config: IntegratorConfig | None = None
                 ) -> Tensor:
    """Map query pixels (n, 3) of (u, v, t) to their positions in the
    canonical frame at t = 0."""
    pix = as_tensor(pixels)
    if pix.data.ndim != 2 or pix.shape[1] != 3:
        raise ValueError(f"pixels must be (n, 3), got {pix.shape}")
    from .tensor import cols
    spatial = cols(pix, 0, 2) if pix.requires_grad else Tensor(pix.data[:, :2])
    return warp_points(net, spatial, pix.data[:, 2], 0.0, config)
