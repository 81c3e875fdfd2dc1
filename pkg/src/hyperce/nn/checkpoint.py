"""CEWT weight files: magic, version byte, header length, JSON header, float32 blobs."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .optim import AdamState

MAGIC = b"CEWT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, named: dict[str, np.ndarray], step: int = 0,
                    optimizer: AdamState | None = None, extra: dict | None = None):
    names = list(named)
    header = {
        "layers": [{"name": n, "shape": list(named[n].shape)} for n in names],
        "step": int(step),
        "optimizer_state": optimizer is not None and bool(optimizer.m),
        "extra": extra or {},
    }
    if header["optimizer_state"]:
        header["adam_step"] = optimizer.step
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<B", VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for n in names:
            f.write(np.ascontiguousarray(named[n], dtype="<f4").tobytes())
        if header["optimizer_state"]:
            for arr in list(optimizer.m) + list(optimizer.v):
                f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict, AdamState | None]:
    """Return (named float32 arrays, header, optimizer state or None)."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a CEWT checkpoint")
    if raw[4] != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {raw[4]}")
    (hlen,) = struct.unpack_from("<Q", raw, 5)
    pos = 13 + hlen
    try:
        header = json.loads(raw[13:pos].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc

    def take(shape):
        nonlocal pos
        n = int(np.prod(shape, dtype=np.int64)) * 4
        if pos + n > len(raw):
            raise CheckpointError(f"{path}: truncated weight data")
        arr = np.frombuffer(raw, dtype="<f4", count=n // 4, offset=pos).reshape(shape).astype(np.float32)
        pos += n
        return arr

    named = {}
    shapes = []
    for layer in header["layers"]:
        shapes.append(tuple(layer["shape"]))
        named[layer["name"]] = take(shapes[-1])
    state = None
    if header.get("optimizer_state"):
        m = [take(s) for s in shapes]
        v = [take(s) for s in shapes]
        state = AdamState(step=int(header["adam_step"]), m=m, v=v)
    if pos != len(raw):
        raise CheckpointError(f"{path}: trailing bytes after weight data")
    return named, header, state
