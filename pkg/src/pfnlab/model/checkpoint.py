"""PFNCKPT1 binary checkpoint container.

Layout (little-endian)::

    b"PFNCKPT1"
    u32 entry count
    per entry: u32 name length, utf-8 name, u8 dtype tag (0 = f32),
               u8 trainable flag, u32 rank, u32 dims..., raw payload
    u32 metadata length, utf-8 JSON metadata

Optimizer state is not stored; a loaded store starts with fresh moments.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointError
from .pfn import PFNParams

MAGIC = b"PFNCKPT1"
DTYPE_TAGS = {0: np.dtype("<f4")}


def to_bytes(params: PFNParams) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(params.entries)))
    for name, entry in params.entries.items():
        data = entry.tensor
        if data.dtype != np.float32:
            raise CheckpointError(f"{name}: only f32 payloads can be stored, got {data.dtype}")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<BBI", 0, int(entry.trainable), data.ndim))
        buf.write(struct.pack(f"<{data.ndim}I", *data.shape))
        buf.write(np.ascontiguousarray(data, dtype="<f4").tobytes())
    meta = json.dumps(params.meta, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(meta)))
    buf.write(meta)
    return buf.getvalue()


def from_bytes(blob: bytes) -> PFNParams:
    view = memoryview(blob)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError(f"truncated checkpoint at byte {pos}")
        out = view[pos : pos + n]
        pos += n
        return out

    def unpack(fmt: str):
        return struct.unpack(fmt, take(struct.calcsize(fmt)))

    if bytes(take(len(MAGIC))) != MAGIC:
        raise CheckpointError("not a PFNCKPT1 file (bad magic)")
    (count,) = unpack("<I")
    arrays = []
    for _ in range(count):
        (n,) = unpack("<I")
        name = bytes(take(n)).decode("utf-8")
        tag, trainable, rank = unpack("<BBI")
        if tag not in DTYPE_TAGS:
            raise CheckpointError(f"{name}: unknown dtype tag {tag}")
        shape = unpack(f"<{rank}I")
        dt = DTYPE_TAGS[tag]
        size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        data = np.frombuffer(take(size), dtype=dt).reshape(shape).astype(np.float32)
        arrays.append((name, data, bool(trainable)))
    (n,) = unpack("<I")
    meta = json.loads(bytes(take(n)).decode("utf-8"))
    if pos != len(view):
        raise CheckpointError(f"{len(view) - pos} trailing bytes after metadata")
    params = PFNParams(meta=meta)
    for name, data, trainable in arrays:
        params.add(name, data, trainable=trainable)
    return params


def save_checkpoint(params: PFNParams, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(to_bytes(params))
    tmp.replace(path)
    return path


def load_checkpoint(path) -> PFNParams:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    return from_bytes(path.read_bytes())
