"""Versioned binary model container.

Layout, all integers little-endian:

    magic   4 bytes  b"LVM1"
    u32     format version (currently 1)
    u32     header length, then that many bytes of UTF-8 JSON
    u32     block count
    blocks  u32 name length, name bytes,
            u32 ndim, u32 * ndim shape,
            raw float64 data (little-endian, C order)

The JSON header carries everything non-array (training config, epoch,
optimizer step counter, RNG state); the blocks carry parameters and
optimizer moments bit-exactly.
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"LVM1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """The file is not a readable model container."""


def save_checkpoint(path, header: dict, blocks: dict) -> None:
    """Atomically write header (JSON-serializable) plus named float64
    arrays."""
    payload = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    doc = json.dumps(header).encode("utf-8")
    payload.append(struct.pack("<I", len(doc)))
    payload.append(doc)
    payload.append(struct.pack("<I", len(blocks)))
    for name in sorted(blocks):
        arr = np.ascontiguousarray(blocks[name], dtype="<f8")
        raw = name.encode("utf-8")
        payload.append(struct.pack("<I", len(raw)))
        payload.append(raw)
        payload.append(struct.pack("<I", arr.ndim))
        payload.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        payload.append(arr.tobytes())
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(payload))
    os.replace(tmp, path)


def _need(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated file while reading {what}")
    return data


def load_checkpoint(path) -> tuple[dict, dict]:
    """Read back (header, blocks); rejects foreign files, version
    mismatches (reporting both versions), and truncation."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise CheckpointError(
                f"not a layered video model file (magic {magic!r})")
        version = struct.unpack("<I", _need(f, 4, "version"))[0]
        if version != FORMAT_VERSION:
            raise CheckpointError(
                f"file has format version {version}, this build reads "
                f"version {FORMAT_VERSION}")
        hlen = struct.unpack("<I", _need(f, 4, "header length"))[0]
        header = json.loads(_need(f, hlen, "header").decode("utf-8"))
        count = struct.unpack("<I", _need(f, 4, "block count"))[0]
        blocks = {}
        for i in range(count):
            nlen = struct.unpack("<I", _need(f, 4, f"block {i} name length"))[0]
            name = _need(f, nlen, f"block {i} name").decode("utf-8")
            ndim = struct.unpack("<I", _need(f, 4, f"{name} ndim"))[0]
            shape = struct.unpack(
                f"<{ndim}I", _need(f, 4 * ndim, f"{name} shape"))
            nbytes = 8 * int(np.prod(shape, dtype=np.int64)) if ndim else 8
            raw = _need(f, nbytes, f"{name} data")
            blocks[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return header, blocks
