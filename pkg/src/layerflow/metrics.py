"""Interpolation quality scores (AIE, PSNR, SSIM) and the evaluation
report. All metrics take [0,1] float images shaped (h, w, 3) or (h, w).
AIE is the per-pixel mean absolute error on the 0-255 scale (mean, not
root-mean). Infinite PSNR (identical frames) stays +inf in memory and
serializes as null with an "infinite" flag.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import convolve2d

from .video_io import load_sequence

WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
K1 = 0.01
K2 = 0.03
DYNAMIC_RANGE = 1.0


def _check_pair(pred, gt, op: str, min_side: int | None = None):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"{op}: shape mismatch {pred.shape} vs {gt.shape}")
    if pred.ndim not in (2, 3):
        raise ValueError(f"{op}: expected (h, w) or (h, w, c), got {pred.shape}")
    if min_side is not None and min(pred.shape[:2]) < min_side:
        raise ValueError(
            f"{op}: image {pred.shape[:2]} smaller than the "
            f"{min_side}x{min_side} window")
    return pred, gt


def aie(pred, gt) -> float:
    """Mean |pred - gt| over pixels and channels, on the 0-255 scale."""
    pred, gt = _check_pair(pred, gt, "aie")
    return float(np.mean(np.abs(pred - gt)) * 255.0)


def psnr(pred, gt) -> float:
    """10 log10(1 / MSE) dB for unit dynamic range; +inf when equal."""
    pred, gt = _check_pair(pred, gt, "psnr")
    mse = float(np.mean((pred - gt) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(DYNAMIC_RANGE ** 2 / mse)


def gaussian_window(size: int = WINDOW_SIZE, sigma: float = WINDOW_SIGMA
                    ) -> np.ndarray:
    half = (size - 1) / 2.0
    g = np.exp(-((np.arange(size) - half) ** 2) / (2.0 * sigma * sigma))
    win = np.outer(g, g)
    return win / win.sum()


def _ssim_channel(x: np.ndarray, y: np.ndarray, win: np.ndarray) -> float:
    c1 = (K1 * DYNAMIC_RANGE) ** 2
    c2 = (K2 * DYNAMIC_RANGE) ** 2
    mu_x = convolve2d(x, win, mode="valid")
    mu_y = convolve2d(y, win, mode="valid")
    # windowed second moments; covariance normalized by the weight sum
    var_x = convolve2d(x * x, win, mode="valid") - mu_x ** 2
    var_y = convolve2d(y * y, win, mode="valid") - mu_y ** 2
    cov = convolve2d(x * y, win, mode="valid") - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def ssim(pred, gt) -> float:
    """Mean local SSIM, 11x11 Gaussian window (sigma 1.5), per channel
    then averaged over channels."""
    pred, gt = _check_pair(pred, gt, "ssim", min_side=WINDOW_SIZE)
    win = gaussian_window()
    if pred.ndim == 2:
        return _ssim_channel(pred, gt, win)
    vals = [_ssim_channel(pred[..., c], gt[..., c], win)
            for c in range(pred.shape[2])]
    return float(np.mean(vals))


# ------------------------------------------------------------ reports


@dataclass
class MetricReport:
    per_frame: list          # [{time, aie, psnr, ssim}]
    aggregate: dict          # {aie, psnr, ssim}
    metadata: dict = field(default_factory=dict)


def score_frames(model, frames: np.ndarray, times, metadata: dict | None = None
                 ) -> MetricReport:
    """Render the model at each timestamp (original clip units) and
    score against the ground-truth frames."""
    frames = np.asarray(frames, dtype=np.float64)
    times = [float(t) for t in times]
    if frames.ndim != 4 or len(times) != frames.shape[0] or not times:
        raise ValueError("need a non-empty (f, h, w, 3) stack with one "
                         "timestamp per frame")
    per_frame = []
    for gt, t in zip(frames, times):
        tn = model.time_to_norm(t)
        if not -1.0 - 1e-9 <= tn <= 1.0 + 1e-9:
            raise ValueError(
                f"time {t} falls outside the model's fitted range")
        pred = model.render_image(tn)["rgb"]
        per_frame.append({"time": t, "aie": aie(pred, gt),
                          "psnr": psnr(pred, gt), "ssim": ssim(pred, gt)})
    aggregate = {k: float(np.mean([e[k] for e in per_frame]))
                 for k in ("aie", "psnr", "ssim")}
    return MetricReport(per_frame, aggregate, dict(metadata or {}))


def evaluate(model, manifest_path, out_path=None, metadata: dict | None = None
             ) -> MetricReport:
    """Score a model against a held-out manifest; optionally write the
    report as JSON."""
    frames, times = load_sequence(manifest_path)
    report = score_frames(model, frames, times, metadata)
    if out_path is not None:
        Path(out_path).write_text(report_to_json(report))
    return report


def _jsonable(entry: dict) -> dict:
    out = {}
    for k, v in entry.items():
        if isinstance(v, float) and math.isinf(v):
            out[k] = None
            out["infinite"] = True
        else:
            out[k] = v
    return out


def report_to_json(report: MetricReport) -> str:
    doc = {
        "per_frame": [_jsonable(e) for e in report.per_frame],
        "aggregate": _jsonable(report.aggregate),
        "metadata": report.metadata,
    }
    return json.dumps(doc, indent=2)
