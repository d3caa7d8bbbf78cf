"""Frame-sequence I/O: a JSON manifest listing 8-bit RGB PNGs with
timestamps, plus the occlusion-graph helper for choosing layer counts.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

COLOR_SPACE = "srgb8"
DEFAULT_PATTERN = "frame_%05d.png"


class ManifestError(ValueError):
    """A manifest or one of its frames is unusable."""


def quantize(frames: np.ndarray) -> np.ndarray:
    """[0,1] floats to bytes: clamp, scale by 255, round half-to-even."""
    x = np.clip(np.asarray(frames, dtype=np.float64), 0.0, 1.0)
    return np.rint(x * 255.0).astype(np.uint8)


def write_sequence(frames, timestamps, out_dir, pattern: str = DEFAULT_PATTERN
                   ) -> Path:
    """Write frames (f, h, w, 3) in [0,1] as 8-bit RGB PNGs plus a
    manifest.json; returns the manifest path."""
    frames = np.asarray(frames)
    timestamps = [float(t) for t in timestamps]
    if frames.ndim != 4 or frames.shape[3] != 3:
        raise ManifestError(f"frames must be (f, h, w, 3), got {frames.shape}")
    if len(timestamps) != frames.shape[0]:
        raise ManifestError(
            f"{frames.shape[0]} frames but {len(timestamps)} timestamps")
    if any(b <= a for a, b in zip(timestamps, timestamps[1:])):
        raise ManifestError(f"timestamps not strictly increasing: {timestamps}")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = quantize(frames)
    entries = []
    for i, (img, t) in enumerate(zip(data, timestamps)):
        name = pattern % i
        Image.fromarray(img, mode="RGB").save(out / name)
        entries.append({"file": name, "time": t})
    manifest = {
        "frames": entries,
        "width": int(frames.shape[2]),
        "height": int(frames.shape[1]),
        "color_space": COLOR_SPACE,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def load_sequence(manifest_path) -> tuple[np.ndarray, np.ndarray]:
    """Read a manifest: frames as float64 (f, h, w, 3) in [0,1] plus
    timestamps. Non-RGB images, size mismatches, missing files, and
    non-monotone times are rejected naming the offending entry."""
    path = Path(manifest_path)
    try:
        manifest = json.loads(path.read_text())
    except FileNotFoundError:
        raise ManifestError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {path} is not valid JSON: {exc}") from None

    for key in ("frames", "width", "height", "color_space"):
        if key not in manifest:
            raise ManifestError(f"manifest {path} missing field {key!r}")
    if manifest["color_space"] != COLOR_SPACE:
        raise ManifestError(
            f"unsupported color_space {manifest['color_space']!r}")
    entries = manifest["frames"]
    if not entries:
        raise ManifestError(f"manifest {path} lists no frames")
    w, h = int(manifest["width"]), int(manifest["height"])

    frames, times = [], []
    prev = None
    for entry in entries:
        fname, t = entry["file"], float(entry["time"])
        if prev is not None and t <= prev:
            raise ManifestError(
                f"non-increasing time {t} at entry {fname!r}")
        prev = t
        fpath = path.parent / fname
        if not fpath.exists():
            raise ManifestError(f"missing frame file {fname!r}")
        img = Image.open(fpath)
        if img.mode != "RGB":
            raise ManifestError(
                f"frame {fname!r} is {img.mode}, need 8-bit RGB without alpha")
        if img.size != (w, h):
            raise ManifestError(
                f"frame {fname!r} is {img.size[0]}x{img.size[1]}, "
                f"manifest says {w}x{h}")
        frames.append(np.asarray(img, dtype=np.float64) / 255.0)
        times.append(t)
    return np.stack(frames), np.array(times)


# --------------------------------------------------- occlusion graphs


def min_layers_for_dag(occlusion_edges, nodes=None) -> int:
    """Minimal layer count for a set of (occluder, occludee) pairs: the
    vertex count of the longest directed path.

    `nodes` adds isolated vertices (an int for anonymous ones or an
    iterable of ids). A cycle is rejected, reporting the cycle, since
    occlusion order must be acyclic.
    """
    edges = [(a, b) for a, b in occlusion_edges]
    node_set = set()
    if nodes is not None:
        if isinstance(nodes, int):
            node_set.update(("_anon", i) for i in range(nodes))
        else:
            node_set.update(nodes)
    for a, b in edges:
        node_set.add(a)
        node_set.add(b)
    if not node_set:
        return 0

    succ: dict = {v: [] for v in node_set}
    indeg = {v: 0 for v in node_set}
    for a, b in edges:
        succ[a].append(b)
        indeg[b] += 1

    # Kahn's algorithm; leftovers at the end sit on a cycle
    order = []
    ready = sorted((v for v, d in indeg.items() if d == 0), key=repr)
    while ready:
        v = ready.pop()
        order.append(v)
        for w in succ[v]:
            indeg[w] -= 1
            if indeg[w] == 0:
                ready.append(w)
    if len(order) != len(node_set):
        cycle = _find_cycle(succ, {v for v in node_set if indeg[v] > 0})
        pretty = " -> ".join(str(v) for v in cycle)
        raise ValueError(f"occlusion graph has a cycle: {pretty}")

    longest = {v: 1 for v in node_set}
    for v in order:
        for w in succ[v]:
            longest[w] = max(longest[w], longest[v] + 1)
    return max(longest.values())


def _find_cycle(succ, candidates):
    start = next(iter(candidates))
    seen = {}
    path = [start]
    v = start
    while v not in seen:
        seen[v] = len(path) - 1
        v = next(w for w in succ[v] if w in candidates)
        path.append(v)
    cycle = path[seen[v]:]
    return cycle
