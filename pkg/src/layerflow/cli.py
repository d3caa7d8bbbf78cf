"""Command line front end.

Subcommands: synth (render a synthetic clip), train (fit a model),
interpolate (render new timestamps), eval (score predictions against
ground truth), verify (motion-field consistency checks).

Exit codes: 0 success, 1 runtime failure, 2 usage error,
3 verification failure.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .metrics import MetricReport, aie, psnr, report_to_json, ssim
from .motion import IntegratorConfig, consistency_residuals
from .networks import estimate_lipschitz
from .scenes import SCENE_NAMES, generate_scene
from .trainer import (TrainConfig, TrainingAborted, load_model,
                      normalize_clip, train)
from .video_io import ManifestError, load_sequence, write_sequence

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_VERIFY = 3

BACKWARD_RESIDUAL_BOUND = 1e-2


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _parse_size(text: str) -> tuple:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"size must look like 64x64, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(
        prog="layerflow",
        description="Layered implicit video representation: fit a "
                    "low-frame-rate clip, then render any timestamp.")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    sp = sub.add_parser("synth", formatter_class=fmt,
                        help="render a synthetic clip with ground truth")
    sp.add_argument("--scene", required=True,
                    help=f"one of {', '.join(SCENE_NAMES)}")
    sp.add_argument("--frames", type=int, default=9,
                    help="number of training frames")
    sp.add_argument("--size", type=_parse_size, default=(64, 64),
                    metavar="WxH", help="frame size")
    sp.add_argument("--seed", type=int, default=0, help="texture seed")
    sp.add_argument("--out", required=True, help="output directory")

    tp = sub.add_parser("train", formatter_class=fmt,
                        help="fit a layered model to a clip")
    tp.add_argument("--frames", required=True, metavar="MANIFEST",
                    help="training manifest path")
    tp.add_argument("--out", required=True, metavar="MODEL",
                    help="checkpoint output path")
    tp.add_argument("--layers", type=int, default=4, help="layer count")
    tp.add_argument("--epochs", type=int, default=400,
                    help="training epochs")
    tp.add_argument("--batch", type=int, default=4096, help="pixels per step")
    tp.add_argument("--gamma", type=float, default=5.0,
                    help="blend sharpness")
    tp.add_argument("--seed", type=int, default=0, help="rng seed")
    tp.add_argument("--dt", type=float, default=None,
                    help="integrator step (default: regime)")
    tp.add_argument("--lambda-v", type=float, default=None,
                    help="velocity smoothness weight (default: regime)")
    tp.add_argument("--lambda-i", type=float, default=None,
                    help="inertia weight (default: regime)")
    tp.add_argument("--alpha", type=float, default=None,
                    help="Laplacian damping factor (default: regime)")
    tp.add_argument("--lr", type=float, default=1e-3, help="Adam step size")
    tp.add_argument("--log", default=None, metavar="PATH",
                    help="JSON-lines log (default: MODEL.log.jsonl)")
    tp.add_argument("--log-every", type=int, default=50)
    tp.add_argument("--resume", default=None, metavar="CHECKPOINT",
                    help="continue a previous run")
    tp.add_argument("--frame-hidden", type=int, default=128,
                    help="canonical-net width")
    tp.add_argument("--vel-hidden", type=int, default=64,
                    help="velocity-net width")

    ip = sub.add_parser("interpolate", formatter_class=fmt,
                        help="render frames at new timestamps")
    ip.add_argument("--model", required=True, help="checkpoint path")
    group = ip.add_mutually_exclusive_group(required=True)
    group.add_argument("--times", default=None,
                       help="comma-separated timestamps in clip units")
    group.add_argument("--factor", type=int, default=None,
                       help="insert K-1 frames between consecutive inputs")
    ip.add_argument("--out", required=True, help="output directory")
    ip.add_argument("--layer-views", action="store_true",
                    help="also write per-layer visibility images")

    ep = sub.add_parser("eval", formatter_class=fmt,
                        help="score predicted frames against ground truth")
    ep.add_argument("--pred", required=True,
                    help="predicted manifest (or its directory)")
    ep.add_argument("--gt", required=True, help="ground-truth manifest")
    ep.add_argument("--report", required=True, help="JSON report path")

    vp = sub.add_parser("verify", formatter_class=fmt,
                        help="check motion-field consistency")
    vp.add_argument("--model", required=True, help="checkpoint path")
    vp.add_argument("--dt-sweep", action="store_true",
                    help="also measure residuals at dt/2")
    vp.add_argument("--report", default=None, help="JSON report path")
    return p


# ------------------------------------------------------------- synth


def _save_mask(path: Path, mask: np.ndarray) -> None:
    img = (mask.astype(np.uint8)) * 255
    Image.fromarray(np.stack([img] * 3, axis=-1), mode="RGB").save(path)


def cmd_synth(args) -> int:
    if args.scene not in SCENE_NAMES:
        return _fail(f"unknown scene {args.scene!r}; valid scenes: "
                     f"{', '.join(SCENE_NAMES)}", EXIT_USAGE)
    if args.frames < 2:
        return _fail("--frames must be at least 2", EXIT_USAGE)
    try:
        data = generate_scene(args.scene, num_frames=args.frames,
                              resolution=args.size, seed=args.seed)
        out = Path(args.out)
        write_sequence(data.train_frames, data.train_times, out / "train")
        write_sequence(data.held_frames, data.held_times, out / "heldout")
        mask_dir = out / "masks"
        mask_dir.mkdir(parents=True, exist_ok=True)
        index = {"objects": data.train_masks.shape[0], "train": [], "held": []}
        for i in range(data.train_masks.shape[0]):
            for k, t in enumerate(data.train_times):
                name = f"train_obj{i}_{k:05d}.png"
                _save_mask(mask_dir / name, data.train_masks[i, k])
                index["train"].append({"file": name, "object": i,
                                       "time": float(t)})
            for k, t in enumerate(data.held_times):
                name = f"held_obj{i}_{k:05d}.png"
                _save_mask(mask_dir / name, data.held_masks[i, k])
                index["held"].append({"file": name, "object": i,
                                      "time": float(t)})
        (mask_dir / "masks.json").write_text(json.dumps(index, indent=2))
    except OSError as exc:
        return _fail(str(exc), EXIT_RUNTIME)
    print(f"wrote {data.train_frames.shape[0]} training and "
          f"{data.held_frames.shape[0]} held-out frames under {args.out}")
    return EXIT_OK


# ------------------------------------------------------------- train


def cmd_train(args) -> int:
    try:
        frames, times = load_sequence(args.frames)
        clip = normalize_clip(frames, times)
    except (ManifestError, ValueError) as exc:
        return _fail(str(exc), EXIT_USAGE)
    try:
        config = TrainConfig(
            num_layers=args.layers, epochs=args.epochs,
            batch_size=args.batch, gamma=args.gamma, seed=args.seed,
            dt=args.dt, lambda_v=args.lambda_v, lambda_i=args.lambda_i,
            alpha=args.alpha, lr=args.lr, log_every=args.log_every,
            frame_hidden=args.frame_hidden, vel_hidden=args.vel_hidden)
    except ValueError as exc:
        return _fail(str(exc), EXIT_USAGE)
    log_path = args.log or (args.out + ".log.jsonl")
    try:
        result = train(clip, config, checkpoint_path=args.out,
                       log_path=log_path, resume_from=args.resume)
    except TrainingAborted as exc:
        return _fail(f"{exc} -- last checkpoint kept at {args.out}",
                     EXIT_RUNTIME)
    except (OSError, ValueError, RuntimeError) as exc:
        return _fail(str(exc), EXIT_RUNTIME)
    b = result.final_breakdown
    if math.isfinite(b["total"]):
        print(f"trained {result.steps} steps; final loss {b['total']:.6f} "
              f"(rgb {b['rgb']:.6f}, velocity {b['velocity']:.6f}, "
              f"inertia {b['inertia']:.6f}); model at {args.out}")
    else:
        print(f"nothing to do: checkpoint already at "
              f"{result.steps} steps; model at {args.out}")
    return EXIT_OK


# ------------------------------------------------------- interpolate


def _interp_times(args, meta: dict) -> list:
    if args.times is not None:
        try:
            times = [float(tok) for tok in args.times.split(",") if tok.strip()]
        except ValueError:
            raise ValueError(f"--times must be comma-separated numbers, "
                             f"got {args.times!r}") from None
        if not times:
            raise ValueError("--times lists no timestamps")
        return times
    if args.factor < 2:
        raise ValueError("--factor must be at least 2")
    anchors = meta.get("frame_times") or [meta["t_min"], meta["t_max"]]
    out = []
    for a, b in zip(anchors, anchors[1:]):
        for j in range(1, args.factor):
            out.append(a + (b - a) * j / args.factor)
    return out


def cmd_interpolate(args) -> int:
    try:
        loaded = load_model(args.model)
    except (OSError, ValueError) as exc:
        return _fail(str(exc), EXIT_RUNTIME)
    model = loaded.model
    meta = model.metadata
    try:
        times = _interp_times(args, meta)
    except ValueError as exc:
        return _fail(str(exc), EXIT_USAGE)
    lo, hi = meta["t_min"], meta["t_max"]
    span = hi - lo
    for t in times:
        if t < lo - 1e-9 * span or t > hi + 1e-9 * span:
            return _fail(
                f"time {t:g} is outside the clip; valid span is "
                f"[{lo:g}, {hi:g}]", EXIT_USAGE)
    times = sorted(set(times))
    out = Path(args.out)
    try:
        frames, views = [], []
        for t in times:
            render = model.render_image(model.time_to_norm(t))
            frames.append(render["rgb"])
            if args.layer_views:
                views.append(render["weights"])
        write_sequence(np.stack(frames), times, out,
                       pattern="interp_%05d.png")
        if args.layer_views:
            for k, (w, t) in enumerate(zip(views, times)):
                for i in range(w.shape[0]):
                    _save_mask_gray(out / f"layer{i}_{k:05d}.png", w[i])
    except OSError as exc:
        return _fail(str(exc), EXIT_RUNTIME)
    print(f"rendered {len(times)} frames to {args.out}")
    return EXIT_OK


def _save_mask_gray(path: Path, weights: np.ndarray) -> None:
    img = np.rint(np.clip(weights, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(np.stack([img] * 3, axis=-1), mode="RGB").save(path)


# -------------------------------------------------------------- eval


def _resolve_manifest(path_str: str) -> Path:
    path = Path(path_str)
    if path.is_dir():
        return path / "manifest.json"
    return path


def cmd_eval(args) -> int:
    try:
        pred, _ = load_sequence(_resolve_manifest(args.pred))
        gt, gt_times = load_sequence(_resolve_manifest(args.gt))
    except ManifestError as exc:
        return _fail(str(exc), EXIT_USAGE)
    if pred.shape != gt.shape:
        return _fail(f"prediction stack {pred.shape} does not match "
                     f"ground truth {gt.shape}", EXIT_USAGE)
    try:
        per_frame = [{"time": float(t), "aie": aie(p, g),
                      "psnr": psnr(p, g), "ssim": ssim(p, g)}
                     for p, g, t in zip(pred, gt, gt_times)]
    except ValueError as exc:
        return _fail(str(exc), EXIT_USAGE)
    aggregate = {k: float(np.mean([e[k] for e in per_frame]))
                 for k in ("aie", "psnr", "ssim")}
    report = MetricReport(per_frame, aggregate,
                          {"pred": args.pred, "gt": args.gt})
    try:
        Path(args.report).write_text(report_to_json(report))
    except OSError as exc:
        return _fail(str(exc), EXIT_RUNTIME)
    psnr_txt = ("inf" if not np.isfinite(aggregate["psnr"])
                else f"{aggregate['psnr']:.3f}")
    print(f"frames {len(per_frame)}  AIE {aggregate['aie']:.4f}  "
          f"PSNR {psnr_txt} dB  SSIM {aggregate['ssim']:.4f}")
    return EXIT_OK


# ------------------------------------------------------------ verify


def cmd_verify(args) -> int:
    try:
        loaded = load_model(args.model)
    except (OSError, ValueError) as exc:
        return _fail(str(exc), EXIT_RUNTIME)
    model = loaded.model
    axis = np.linspace(-1.0, 1.0, 16)
    uu, vv = np.meshgrid(axis, axis)
    points = np.column_stack([uu.reshape(-1), vv.reshape(-1)])
    t0, t1, t2 = -1.0, 0.0, 1.0

    layers = []
    for i, vnet in enumerate(model.velocity_nets):
        fwd, bwd = consistency_residuals(vnet, points, t0, t1, t2,
                                         model.integrator)
        lip = estimate_lipschitz(vnet)
        entry = {"layer": i, "forward_residual": fwd,
                 "backward_residual": bwd, "lipschitz": lip,
                 "dt_times_lipschitz": model.integrator.dt * lip}
        if args.dt_sweep:
            half = IntegratorConfig(model.integrator.dt / 2.0)
            fwd2, bwd2 = consistency_residuals(vnet, points, t0, t1, t2,
                                               half)
            entry["forward_residual_half_dt"] = fwd2
            entry["backward_residual_half_dt"] = bwd2
        layers.append(entry)

    worst = max(e["backward_residual"] for e in layers)
    summary = {
        "grid": "16x16 over [-1,1]^2, times (-1, 0, 1)",
        "dt": model.integrator.dt,
        "layers": layers,
        "max_backward_residual": worst,
        "bound": BACKWARD_RESIDUAL_BOUND,
        "passed": bool(worst <= BACKWARD_RESIDUAL_BOUND),
    }
    if args.report:
        try:
            Path(args.report).write_text(json.dumps(summary, indent=2))
        except OSError as exc:
            return _fail(str(exc), EXIT_RUNTIME)
    for e in layers:
        line = (f"layer {e['layer']}: forward {e['forward_residual']:.3e}  "
                f"backward {e['backward_residual']:.3e}  "
                f"lipschitz {e['lipschitz']:.3f}  "
                f"dt*L {e['dt_times_lipschitz']:.3f}")
        if args.dt_sweep:
            line += (f"  backward@dt/2 "
                     f"{e['backward_residual_half_dt']:.3e}")
        print(line)
    if not summary["passed"]:
        print(f"FAIL: max backward residual {worst:.3e} exceeds "
              f"{BACKWARD_RESIDUAL_BOUND:g}")
        return EXIT_VERIFY
    print(f"OK: max backward residual {worst:.3e} within "
          f"{BACKWARD_RESIDUAL_BOUND:g}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "interpolate": cmd_interpolate,
    "eval": cmd_eval,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return COMMANDS[args.command](args)


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
