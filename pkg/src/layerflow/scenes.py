"""Synthetic test clips: textured rectangles gliding over a textured
background at constant velocity, rendered with 4x supersampling so
sub-pixel motion shows up. Three presets:

  linear_square  one square over a contrasting background
  two_movers     two squares on crossing lanes, timed to never overlap
  camouflage     a square whose texture is drawn from the same noise
                 family as the background (motion is the only cue)

Every preset also emits the held-out frames midway between consecutive
training times plus per-object coverage masks, so interpolation quality
can be scored against ground truth that the fit never saw.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SUPERSAMPLE = 4
BASE_RESOLUTION = 64
SCENE_NAMES = ("linear_square", "two_movers", "camouflage")


@dataclass(frozen=True)
class MovingRect:
    """Axis-aligned square of side `size` px whose top-left corner sits
    at p0 + velocity * t (pixel units of the base 64px canvas)."""
    size: float
    p0: tuple
    velocity: tuple

    def corner(self, t: float) -> tuple:
        return (self.p0[0] + self.velocity[0] * t,
                self.p0[1] + self.velocity[1] * t)


@dataclass(frozen=True)
class SyntheticScene:
    name: str
    objects: tuple
    seed: int = 0
    # camouflage draws the object texture from the background's family
    matched_texture: bool = False


@dataclass
class SceneData:
    train_frames: np.ndarray   # (f, h, w, 3) float in [0, 1]
    train_times: np.ndarray    # (f,)
    held_frames: np.ndarray    # (f-1, h, w, 3), midpoints between train times
    held_times: np.ndarray
    train_masks: np.ndarray    # (num_objects, f, h, w) bool coverage >= 0.5
    held_masks: np.ndarray
    width: int = 0
    height: int = 0
    extras: dict = field(default_factory=dict)


def scene_preset(name: str, seed: int = 0) -> SyntheticScene:
    if name == "linear_square":
        objects = (MovingRect(18.0, (6.0, 20.0), (3.4, 1.1)),)
        return SyntheticScene(name, objects, seed)
    if name == "two_movers":
        # lanes cross the x in [4,16] column but the first square clears
        # it (t <= 3.49) before the second reaches those rows (t >= 4.17)
        objects = (MovingRect(12.0, (1.0, 26.0), (4.3, 0.0)),
                   MovingRect(12.0, (4.0, 4.0), (0.0, 2.4)))
        return SyntheticScene(name, objects, seed)
    if name == "camouflage":
        objects = (MovingRect(16.0, (10.0, 24.0), (4.2, 1.0)),)
        return SyntheticScene(name, objects, seed, matched_texture=True)
    raise ValueError(f"unknown scene {name!r}, choose from {SCENE_NAMES}")


def value_noise(rng: np.random.Generator, h: int, w: int, cell: int,
                octaves: int = 3, persistence: float = 0.55) -> np.ndarray:
    """Multi-octave bilinear value noise in [0,1], shape (h, w, 3)."""
    out = np.zeros((h, w, 3))
    amp, total = 1.0, 0.0
    for _ in range(octaves):
        gh = int(np.ceil(h / cell)) + 1
        gw = int(np.ceil(w / cell)) + 1
        grid = rng.uniform(0.0, 1.0, size=(gh, gw, 3))
        ys = np.arange(h) / cell
        xs = np.arange(w) / cell
        y0 = np.floor(ys).astype(int)
        x0 = np.floor(xs).astype(int)
        fy = (ys - y0)[:, None, None]
        fx = (xs - x0)[None, :, None]
        top = grid[y0][:, x0] * (1 - fx) + grid[y0][:, x0 + 1] * fx
        bot = grid[y0 + 1][:, x0] * (1 - fx) + grid[y0 + 1][:, x0 + 1] * fx
        out += amp * (top * (1 - fy) + bot * fy)
        total += amp
        amp *= persistence
        cell = max(2, cell // 2)
    return out / total


def _paste(canvas: np.ndarray, tile: np.ndarray, x: int, y: int,
           mask: np.ndarray | None = None) -> None:
    h, w = canvas.shape[:2]
    th, tw = tile.shape[:2]
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + tw, w), min(y + th, h)
    if x1 <= x0 or y1 <= y0:
        return
    canvas[y0:y1, x0:x1] = tile[y0 - y:y1 - y, x0 - x:x1 - x]
    if mask is not None:
        mask[y0:y1, x0:x1] = True


def _downsample(img: np.ndarray, ss: int) -> np.ndarray:
    h, w = img.shape[0] // ss, img.shape[1] // ss
    view = img.reshape(h, ss, w, ss, *img.shape[2:])
    return view.mean(axis=(1, 3))


class _Renderer:
    """Bakes all textures once (seeded), then renders any timestamp."""

    def __init__(self, scene: SyntheticScene, width: int, height: int):
        self.scene = scene
        self.width, self.height = width, height
        self.ss = SUPERSAMPLE
        # speeds and sizes are stated for a 64px canvas; scale to target
        self.sx = width / BASE_RESOLUTION
        self.sy = height / BASE_RESOLUTION
        rng = np.random.default_rng(scene.seed)
        ss = self.ss
        self.bg = value_noise(rng, height * ss, width * ss, cell=10 * ss)
        if not scene.matched_texture:
            self.bg = 0.15 + 0.45 * self.bg  # keep the backdrop dark
        self.tiles = []
        for i, obj in enumerate(scene.objects):
            th = max(1, int(round(obj.size * self.sy))) * ss
            tw = max(1, int(round(obj.size * self.sx))) * ss
            cell = (10 if scene.matched_texture else 5) * ss
            tex = value_noise(rng, th, tw, cell=cell)
            if scene.matched_texture:
                pass  # same family and range as the background
            elif i % 2 == 0:
                tex = 0.55 + 0.45 * tex  # bright object
            else:
                tex = np.stack([0.5 + 0.5 * tex[..., 0],
                                0.1 + 0.3 * tex[..., 1],
                                0.6 + 0.4 * tex[..., 2]], axis=-1)
            self.tiles.append(tex)

    def snapped_corner(self, obj: MovingRect, t: float) -> tuple:
        """Top-left corner on the supersampled grid (int px)."""
        cx, cy = obj.corner(t)
        return (int(round(cx * self.sx * self.ss)),
                int(round(cy * self.sy * self.ss)))

    def render(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        ss = self.ss
        canvas = self.bg.copy()
        masks_up = np.zeros((len(self.scene.objects),
                             self.height * ss, self.width * ss), dtype=bool)
        for i, obj in enumerate(self.scene.objects):
            x, y = self.snapped_corner(obj, t)
            _paste(canvas, self.tiles[i], x, y, masks_up[i])
        frame = _downsample(canvas, ss)
        coverage = _downsample(masks_up.astype(np.float64).transpose(1, 2, 0),
                               ss).transpose(2, 0, 1)
        return frame, coverage >= 0.5


def generate_scene(scene, num_frames: int = 9,
                   resolution: tuple = (64, 64), seed: int | None = None
                   ) -> SceneData:
    """Render `num_frames` training frames at t = 0..num_frames-1 plus the
    held-out midpoints. Same arguments give bit-identical output."""
    if isinstance(scene, str):
        scene = scene_preset(scene, 0 if seed is None else seed)
    elif seed is not None:
        scene = SyntheticScene(scene.name, scene.objects, seed,
                               scene.matched_texture)
    if num_frames < 2:
        raise ValueError(f"need at least 2 frames, got {num_frames}")
    width, height = int(resolution[0]), int(resolution[1])
    r = _Renderer(scene, width, height)

    train_times = np.arange(num_frames, dtype=np.float64)
    held_times = train_times[:-1] + 0.5
    tf, tm = [], []
    for t in train_times:
        f, m = r.render(float(t))
        tf.append(f)
        tm.append(m)
    hf, hm = [], []
    for t in held_times:
        f, m = r.render(float(t))
        hf.append(f)
        hm.append(m)
    return SceneData(
        train_frames=np.stack(tf),
        train_times=train_times,
        held_frames=np.stack(hf),
        held_times=held_times,
        train_masks=np.stack(tm, axis=1),
        held_masks=np.stack(hm, axis=1),
        width=width,
        height=height,
        extras={"scene": scene},
    )


