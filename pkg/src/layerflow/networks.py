"""Coordinate networks: the shared canonical frame decoder and the
per-layer velocity fields.

Both are sinusoidal MLPs over a fourier-encoded input. The first dense
layer applies sin(omega0 * (Wx + b)) with W ~ U(-1/fan_in, 1/fan_in);
deeper hidden layers apply sin(Wx + b) with W ~ U(+-sqrt(6/fan_in)).
Biases draw from U(+-1/sqrt(fan_in)). Velocity networks zero-initialize
their output layer so every layer starts as the identity motion.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, affine, cols, concat, fourier, sigmoid, sine


@dataclass(frozen=True)
class FourierEncoding:
    """Sinusoidal encoding with frequencies 2^k pi, k < num_bands."""
    num_bands: int
    input_dim: int

    @property
    def out_dim(self) -> int:
        return 2 * self.num_bands * self.input_dim

    def encode(self, points: Tensor) -> Tensor:
        if points.shape[-1] != self.input_dim:
            raise ValueError(
                f"encoding expects {self.input_dim}-d points, got {points.shape}")
        return fourier(points, self.num_bands)


def fourier_encode(points: Tensor, num_bands: int) -> Tensor:
    return fourier(points, num_bands)


class Dense:
    __slots__ = ("W", "b")

    def __init__(self, W: np.ndarray, b: np.ndarray):
        self.W = Tensor(W, requires_grad=True)
        self.b = Tensor(b, requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return affine(x, self.W, self.b)


def _first_dense(rng, fan_in, fan_out):
    W = rng.uniform(-1.0 / fan_in, 1.0 / fan_in, size=(fan_in, fan_out))
    b = rng.uniform(-1.0, 1.0, size=fan_out) / np.sqrt(fan_in)
    return Dense(W, b)


def _hidden_dense(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / fan_in)
    W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    b = rng.uniform(-1.0, 1.0, size=fan_out) / np.sqrt(fan_in)
    return Dense(W, b)


class FrameNet:
    """Canonical appearance decoder.

    A trunk shared by all layers maps encoded (u, v) to features; one
    small head per layer maps features to RGBD through a sigmoid, so
    every channel lies in (0, 1).
    """

    def __init__(self, num_layers: int, rng: np.random.Generator,
                 hidden: int = 128, trunk_depth: int = 3, head_depth: int = 2,
                 num_bands: int = 6, omega0: float = 30.0):
        if num_layers < 1:
            raise ValueError(f"num_layers must be >= 1, got {num_layers}")
        self.num_layers = num_layers
        self.omega0 = float(omega0)
        self.encoding = FourierEncoding(num_bands, 2)
        self.trunk: list[Dense] = []
        fan = self.encoding.out_dim
        for d in range(trunk_depth):
            make = _first_dense if d == 0 else _hidden_dense
            self.trunk.append(make(rng, fan, hidden))
            fan = hidden
        self.heads: list[list[Dense]] = []
        for _ in range(num_layers):
            head = [_hidden_dense(rng, hidden, hidden) for _ in range(head_depth)]
            head.append(_hidden_dense(rng, hidden, 4))
            self.heads.append(head)

    def _trunk_features(self, coords: Tensor) -> Tensor:
        h = self.encoding.encode(coords)
        for d, layer in enumerate(self.trunk):
            h = sine(layer(h), omega=self.omega0 if d == 0 else 1.0)
        return h

    def _head_out(self, head: list[Dense], feats: Tensor) -> Tensor:
        h = feats
        for layer in head[:-1]:
            h = sine(layer(h))
        return sigmoid(head[-1](h))

    def forward(self, layer: int, coords: Tensor) -> Tensor:
        """RGBD samples (n, 4) of one layer's canonical frame."""
        if not 0 <= layer < self.num_layers:
            raise IndexError(f"layer {layer} outside 0..{self.num_layers - 1}")
        return self._head_out(self.heads[layer], self._trunk_features(coords))

    def forward_all(self, coords_per_layer: list[Tensor]) -> list[Tensor]:
        """One RGBD batch per layer; coords may differ per layer (each
        layer warps its own query points into the canonical frame)."""
        if len(coords_per_layer) != self.num_layers:
            raise ValueError(
                f"need {self.num_layers} coordinate batches, got {len(coords_per_layer)}")
        return [self._head_out(self.heads[i], self._trunk_features(c))
                for i, c in enumerate(coords_per_layer)]

    def parameters(self, prefix: str = "frame") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for d, layer in enumerate(self.trunk):
            out[f"{prefix}.trunk{d}.W"] = layer.W
            out[f"{prefix}.trunk{d}.b"] = layer.b
        for i, head in enumerate(self.heads):
            for d, layer in enumerate(head):
                out[f"{prefix}.head{i}.{d}.W"] = layer.W
                out[f"{prefix}.head{i}.{d}.b"] = layer.b
        return out


def split_rgbd(rgbd: Tensor) -> tuple[Tensor, Tensor]:
    """(n, 4) RGBD -> ((n, 3) rgb, (n, 1) depth)."""
    return cols(rgbd, 0, 3), cols(rgbd, 3, 4)


class VelocityNet:
    """Time-varying 2-D velocity field V(u, v, t).

    The output layer starts at exactly zero, so the induced motion is
    the identity until training moves it.
    """

    def __init__(self, rng: np.random.Generator, hidden: int = 64,
                 depth: int = 4, num_bands: int = 4, omega0: float = 30.0):
        self.omega0 = float(omega0)
        self.encoding = FourierEncoding(num_bands, 3)
        self.layers: list[Dense] = []
        fan = self.encoding.out_dim
        for d in range(depth):
            make = _first_dense if d == 0 else _hidden_dense
            self.layers.append(make(rng, fan, hidden))
            fan = hidden
        self.out = Dense(np.zeros((fan, 2)), np.zeros(2))

    def forward(self, points: Tensor) -> Tensor:
        """points (n, 3) rows of (u, v, t) -> velocities (n, 2)."""
        h = self.encoding.encode(points)
        for d, layer in enumerate(self.layers):
            h = sine(layer(h), omega=self.omega0 if d == 0 else 1.0)
        return self.out(h)

    def __call__(self, points: Tensor) -> Tensor:
        return self.forward(points)

    def forward_at(self, positions: Tensor, t: float) -> Tensor:
        """Velocities at spatial positions (n, 2) and one shared time."""
        tcol = Tensor(np.full((positions.shape[0], 1), float(t)))
        return self.forward(concat([positions, tcol], axis=1))

    def parameters(self, prefix: str = "vel") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for d, layer in enumerate(self.layers):
            out[f"{prefix}.{d}.W"] = layer.W
            out[f"{prefix}.{d}.b"] = layer.b
        out[f"{prefix}.out.W"] = self.out.W
        out[f"{prefix}.out.b"] = self.out.b
        return out


def estimate_lipschitz(field, num_samples: int = 512, seed: int = 0) -> float:
    """Sampled lower bound on the spatial Lipschitz constant of a
    velocity field over [-1, 1]^2 x [-1, 1].

    Each sample draws two spatial points and a shared time from one
    seeded stream, so for a fixed seed the estimate is monotonically
    non-decreasing in num_samples. `field` is a VelocityNet or any
    callable mapping an (n, 3) array of (u, v, t) to (n, 2) velocities.
    """
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    rng = np.random.default_rng(seed)
    draws = rng.uniform(-1.0, 1.0, size=(num_samples, 5))
    p1 = np.column_stack([draws[:, 0], draws[:, 1], draws[:, 4]])
    p2 = np.column_stack([draws[:, 2], draws[:, 3], draws[:, 4]])

    if hasattr(field, "forward"):
        def evaluate(pts):
            return field.forward(Tensor(pts)).data
    else:
        evaluate = field

    v1 = np.asarray(evaluate(p1), dtype=np.float64)
    v2 = np.asarray(evaluate(p2), dtype=np.float64)
    dist = np.linalg.norm(p1[:, :2] - p2[:, :2], axis=1)
    dv = np.linalg.norm(v1 - v2, axis=1)
    ok = dist > 1e-12
    if not np.any(ok):
        return 0.0
    return float(np.max(dv[ok] / dist[ok]))
