"""Training loop: coordinate normalization, regime selection, the
epoch/batch schedule, Adam updates, JSON-lines logging, and resumable
checkpoints. One epoch is a shuffled pass over every (pixel, frame)
pair; clips with exactly two frames get the heavily regularized
two_frame regime, longer clips the lightly regularized multi_frame
regime.
"""
from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adam import AdamState, adam_step
from .checkpoint import load_checkpoint, save_checkpoint
from .losses import LossWeights, PixelBatch, total_loss
from .model import LayeredVideoModel, build_model
from .tensor import Tape, backward

REGIMES = {
    "multi_frame": {"dt": 0.02, "lambda_v": 0.01, "lambda_i": 0.01,
                    "alpha": 0.0},
    "two_frame": {"dt": 0.2, "lambda_v": 10.0, "lambda_i": 10.0,
                  "alpha": 0.5},
}


class TrainingAborted(RuntimeError):
    """The loss went non-finite; the last epoch checkpoint is kept."""

    def __init__(self, step: int, message: str):
        super().__init__(message)
        self.step = step


@dataclass
class TrainConfig:
    num_layers: int = 4
    epochs: int = 400
    batch_size: int = 4096
    gamma: float = 5.0
    # None means "use the regime default picked from the frame count"
    dt: float | None = None
    lambda_v: float | None = None
    lambda_i: float | None = None
    alpha: float | None = None
    regime: str | None = None
    seed: int = 0
    log_every: int = 50
    lr: float = 1e-3
    max_inertia_points: int = 256
    frame_hidden: int = 128
    frame_trunk_depth: int = 3
    frame_head_depth: int = 2
    frame_bands: int = 6
    vel_hidden: int = 64
    vel_depth: int = 4
    vel_bands: int = 4
    omega0: float = 30.0

    def __post_init__(self):
        for name in ("num_layers", "epochs", "batch_size", "log_every"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.regime is not None and self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")

    def resolve(self, num_frames: int) -> "TrainConfig":
        """Fill regime-dependent fields for a clip of `num_frames`."""
        regime = self.regime or (
            "two_frame" if num_frames == 2 else "multi_frame")
        defaults = REGIMES[regime]
        updates = {"regime": regime}
        for key, val in defaults.items():
            if getattr(self, key) is None:
                updates[key] = val
        return dataclasses.replace(self, **updates)


@dataclass
class VideoClip:
    """Frames with timestamps affinely mapped onto [-1, 1]."""
    frames: np.ndarray      # (f, h, w, 3) float64 in [0, 1]
    times: np.ndarray       # (f,) normalized
    raw_times: np.ndarray   # (f,) original units

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    @property
    def metadata(self) -> dict:
        return {"width": self.width, "height": self.height,
                "t_min": float(self.raw_times[0]),
                "t_max": float(self.raw_times[-1]),
                "frame_times": [float(t) for t in self.raw_times]}


def normalize_clip(frames, timestamps) -> VideoClip:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 4 or frames.shape[3] != 3:
        raise ValueError(f"frames must be (f, h, w, 3), got {frames.shape}")
    if frames.shape[0] < 2:
        raise ValueError(f"need at least 2 frames, got {frames.shape[0]}")
    raw = np.asarray(timestamps, dtype=np.float64)
    if raw.shape != (frames.shape[0],):
        raise ValueError(
            f"{frames.shape[0]} frames but timestamps shaped {raw.shape}")
    if np.any(np.diff(raw) <= 0):
        raise ValueError(f"timestamps not strictly increasing: {raw.tolist()}")
    if frames.min() < -1e-9 or frames.max() > 1 + 1e-9:
        raise ValueError("frame values must lie in [0, 1]")
    times = 2.0 * (raw - raw[0]) / (raw[-1] - raw[0]) - 1.0
    return VideoClip(frames, times, raw)


@dataclass
class TrainResult:
    model: LayeredVideoModel
    log: list
    final_breakdown: dict
    steps: int
    adam: AdamState
    rng: np.random.Generator
    config: TrainConfig


def _model_from_config(cfg: TrainConfig, metadata: dict,
                       rng: np.random.Generator) -> LayeredVideoModel:
    return build_model(
        cfg.num_layers, metadata, rng, gamma=cfg.gamma, dt=cfg.dt,
        frame_hidden=cfg.frame_hidden, frame_trunk_depth=cfg.frame_trunk_depth,
        frame_head_depth=cfg.frame_head_depth, frame_bands=cfg.frame_bands,
        vel_hidden=cfg.vel_hidden, vel_depth=cfg.vel_depth,
        vel_bands=cfg.vel_bands, omega0=cfg.omega0)


def save_model(path, model: LayeredVideoModel, config: TrainConfig,
               epoch: int = 0, rng: np.random.Generator | None = None,
               adam: AdamState | None = None) -> None:
    header = {
        "kind": "layered_video_model",
        "config": dataclasses.asdict(config),
        "metadata": model.metadata,
        "epoch": int(epoch),
        "adam_step": int(adam.step) if adam else 0,
        "rng_state": rng.bit_generator.state if rng is not None else None,
    }
    blocks = {name: p.data for name, p in model.parameters().items()}
    if adam is not None:
        for name, arr in adam.m.items():
            blocks[f"adam.m.{name}"] = arr
        for name, arr in adam.v.items():
            blocks[f"adam.v.{name}"] = arr
    save_checkpoint(path, header, blocks)


@dataclass
class LoadedModel:
    model: LayeredVideoModel
    config: TrainConfig
    epoch: int
    rng: np.random.Generator | None
    adam: AdamState


def load_model(path) -> LoadedModel:
    header, blocks = load_checkpoint(path)
    cfg = TrainConfig(**header["config"])
    model = _model_from_config(cfg, header["metadata"],
                               np.random.default_rng(0))
    params = model.parameters()
    adam = AdamState(step=header.get("adam_step", 0))
    seen = set()
    for name, arr in blocks.items():
        if name.startswith("adam.m."):
            adam.m[name[len("adam.m."):]] = arr
        elif name.startswith("adam.v."):
            adam.v[name[len("adam.v."):]] = arr
        elif name in params:
            if params[name].data.shape != arr.shape:
                raise ValueError(
                    f"checkpoint block {name!r} has shape {arr.shape}, "
                    f"model expects {params[name].data.shape}")
            params[name].data[...] = arr
            seen.add(name)
        else:
            raise ValueError(f"checkpoint block {name!r} not in model")
    missing = set(params) - seen
    if missing:
        raise ValueError(f"checkpoint missing parameters: {sorted(missing)}")
    rng = None
    if header.get("rng_state") is not None:
        rng = np.random.default_rng(0)
        rng.bit_generator.state = header["rng_state"]
    return LoadedModel(model, cfg, int(header.get("epoch", 0)), rng, adam)


def train(clip: VideoClip, config: TrainConfig | None = None,
          checkpoint_path=None, log_path=None, resume_from=None,
          progress=None) -> TrainResult:
    """Fit a model to the clip. With `resume_from`, training continues
    from that checkpoint's epoch, RNG state, and optimizer moments and
    reproduces the uninterrupted run bit for bit; `config` then only
    supplies the target epoch count."""
    if resume_from is not None:
        loaded = load_model(resume_from)
        cfg = loaded.config
        if config is not None:
            cfg = dataclasses.replace(cfg, epochs=config.epochs)
        if loaded.model.metadata != clip.metadata:
            raise ValueError(
                f"checkpoint was trained on {loaded.model.metadata}, "
                f"clip is {clip.metadata}")
        model, adam = loaded.model, loaded.adam
        rng = loaded.rng or np.random.default_rng(cfg.seed)
        start_epoch = loaded.epoch
    else:
        cfg = (config or TrainConfig()).resolve(clip.num_frames)
        rng = np.random.default_rng(cfg.seed)
        model = _model_from_config(cfg, clip.metadata, rng)
        adam = AdamState()
        start_epoch = 0

    f, h, w = clip.num_frames, clip.height, clip.width
    pixels_per_frame = h * w
    total = f * pixels_per_frame
    steps_per_epoch = math.ceil(total / cfg.batch_size)
    weights = LossWeights(cfg.lambda_v, cfg.lambda_i, cfg.alpha)
    grid = model.pixel_grid()
    targets = clip.frames.reshape(f, pixels_per_frame, 3)
    params = model.parameters()

    log_file = open(log_path, "a") if log_path is not None else None
    log: list = []

    def emit(record):
        log.append(record)
        if log_file is not None:
            log_file.write(json.dumps(record) + "\n")
            log_file.flush()

    header = {"event": "config", "num_frames": f, "width": w, "height": h,
              "steps_per_epoch": steps_per_epoch,
              "start_epoch": start_epoch}
    header.update(dataclasses.asdict(cfg))
    emit(header)

    step = start_epoch * steps_per_epoch
    breakdown = {"total": math.nan, "rgb": math.nan,
                 "velocity": math.nan, "inertia": math.nan}
    try:
        for epoch in range(start_epoch, cfg.epochs):
            perm = rng.permutation(total)
            for lo in range(0, total, cfg.batch_size):
                t0 = time.perf_counter()
                idx = perm[lo:lo + cfg.batch_size]
                fi, pi = idx // pixels_per_frame, idx % pixels_per_frame
                coords = np.empty((idx.size, 3))
                coords[:, :2] = grid[pi]
                coords[:, 2] = clip.times[fi]
                batch = PixelBatch(coords, targets[fi, pi])
                with Tape() as tape:
                    loss, breakdown = total_loss(
                        model, batch, weights, rng=rng,
                        max_inertia_points=cfg.max_inertia_points)
                if not math.isfinite(breakdown["total"]):
                    raise TrainingAborted(
                        step, f"non-finite loss at step {step} "
                        f"(epoch {epoch}): {breakdown}")
                backward(tape, loss)
                grads = {name: p.grad for name, p in params.items()}
                adam_step(params, grads, adam, lr=cfg.lr)
                step += 1
                if step % cfg.log_every == 0:
                    emit({"step": step, "epoch": epoch,
                          "loss_total": breakdown["total"],
                          "loss_rgb": breakdown["rgb"],
                          "loss_v": breakdown["velocity"],
                          "loss_i": breakdown["inertia"],
                          "wall_ms": (time.perf_counter() - t0) * 1e3})
            if checkpoint_path is not None:
                save_model(checkpoint_path, model, cfg, epoch=epoch + 1,
                           rng=rng, adam=adam)
            if progress is not None:
                progress(epoch, breakdown)
    finally:
        if log_file is not None:
            log_file.close()
    return TrainResult(model, log, breakdown, step, adam, rng, cfg)
