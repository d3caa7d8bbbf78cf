"""SoftMin compositing of layered RGBD samples.

Layers closer to the camera (smaller pseudo-depth) dominate through
weights exp(-gamma * depth) normalized across layers. Subtracting the
per-pixel minimum depth before exponentiating keeps the weights finite
for any depth magnitude without changing the result, because the blend
is invariant to a common depth shift.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .motion import IntegratorConfig, to_canonical
from .networks import split_rgbd
from .tensor import ShapeError, Tensor, add, as_tensor, div, exp, mul, scale, sub


@dataclass(frozen=True)
class BlendConfig:
    gamma: float = 5.0

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")


def softmin_blend(rgbs: list[Tensor], depths: list[Tensor],
                  config: BlendConfig | None = None
                  ) -> tuple[Tensor, list[Tensor]]:
    """Blend per-layer colors by pseudo-depth.

    rgbs: one (n, 3) tensor per layer; depths: matching (n, 1) tensors.
    Returns the blended (n, 3) colors and the per-layer visibility
    weights, which are non-negative and sum to one at every pixel.
    """
    if config is None:
        config = BlendConfig()
    if not rgbs:
        raise ShapeError("softmin_blend: need at least one layer")
    if len(rgbs) != len(depths):
        raise ShapeError(
            f"softmin_blend: {len(rgbs)} color layers vs {len(depths)} depth layers")
    n = rgbs[0].shape[0]
    for r, d in zip(rgbs, depths):
        r, d = as_tensor(r), as_tensor(d)
        if r.shape != (n, 3) or d.shape != (n, 1):
            raise ShapeError(
                f"softmin_blend: expected ({n}, 3) colors and ({n}, 1) depths, "
                f"got {r.shape} and {d.shape}")

    # detached per-pixel min; the blend is shift-invariant so treating
    # it as a constant leaves gradients exact
    dmin = Tensor(np.min(np.stack([d.data for d in depths]), axis=0))
    exps = [exp(scale(sub(d, dmin), -config.gamma)) for d in depths]
    denom = exps[0]
    for e in exps[1:]:
        denom = add(denom, e)
    weights = [div(e, denom) for e in exps]

    out = mul(weights[0], rgbs[0])
    for w, rgb in zip(weights[1:], rgbs[1:]):
        out = add(out, mul(w, rgb))
    return out, weights


def composite_at(frame_net, velocity_nets, pixels,
                 blend: BlendConfig | None = None,
                 integrator: IntegratorConfig | None = None):
    """Full forward pass at query pixels (n, 3) of (u, v, t): warp each
    layer's queries into the canonical frame, decode RGBD, blend.

    Returns (rgb, aux) where aux carries per-layer canonical positions,
    colors, depths and visibility weights.
    """
    if len(velocity_nets) != frame_net.num_layers:
        raise ShapeError(
            f"{len(velocity_nets)} velocity nets for {frame_net.num_layers} layers")
    canonical = [to_canonical(vn, pixels, integrator) for vn in velocity_nets]
    rgbd = frame_net.forward_all(canonical)
    rgbs, depths = [], []
    for r in rgbd:
        rgb, depth = split_rgbd(r)
        rgbs.append(rgb)
        depths.append(depth)
    out, weights = softmin_blend(rgbs, depths, blend)
    aux = {
        "canonical": canonical,
        "layer_rgb": rgbs,
        "layer_depth": depths,
        "weights": weights,
    }
    return out, aux


def render_frame(frame_net, velocity_nets, coords: np.ndarray, t: float,
                 blend: BlendConfig | None = None,
                 integrator: IntegratorConfig | None = None,
                 chunk: int = 16384) -> dict:
    """Render normalized coordinates (n, 2) at time t, off the tape and
    in bounded memory. Returns numpy arrays: blended rgb (n, 3),
    visibility weights (layers, n), per-layer rgb (layers, n, 3) and
    contributions (layers, n, 3) that sum exactly to the render."""
    coords = np.asarray(coords, dtype=np.float64)
    n = coords.shape[0]
    L = frame_net.num_layers
    out = {
        "rgb": np.empty((n, 3)),
        "weights": np.empty((L, n)),
        "layer_rgb": np.empty((L, n, 3)),
        "layer_depth": np.empty((L, n)),
        "contrib": np.empty((L, n, 3)),
    }
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        pix = np.column_stack([coords[lo:hi], np.full(hi - lo, float(t))])
        rgb, aux = composite_at(frame_net, velocity_nets, Tensor(pix),
                                blend, integrator)
        out["rgb"][lo:hi] = rgb.data
        for i in range(L):
            w = aux["weights"][i].data
            out["weights"][i, lo:hi] = w[:, 0]
            out["layer_rgb"][i, lo:hi] = aux["layer_rgb"][i].data
            out["layer_depth"][i, lo:hi] = aux["layer_depth"][i].data[:, 0]
            out["contrib"][i, lo:hi] = w * aux["layer_rgb"][i].data
    return out


def layer_views(render: dict) -> list[np.ndarray]:
    """Per-layer weighted contributions of a render_frame result; their
    elementwise sum reproduces the blended image."""
    return [render["contrib"][i] for i in range(render["contrib"].shape[0])]
