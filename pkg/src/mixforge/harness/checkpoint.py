"""Little-endian binary checkpoints.

Layout::

    b"MTSM"                      magic
    u32 version                  (currently 1)
    u32 length, bytes            run configuration echo, UTF-8 key=value text
    repeated until EOF:
        u32 name length, name bytes (UTF-8)
        u32 rank, rank x u32 dims
        prod(dims) x f64         row-major values

Model parameters come first, in model order. Adam state is stored under
``adam/t``, ``adam/m/<param>`` and ``adam/v/<param>``; the best validation
loss under ``meta/best_val_loss``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"MTSM"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config_text: str
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def params(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.arrays.items() if not k.startswith(("adam/", "meta/"))}


def to_bytes(ckpt: Checkpoint) -> bytes:
    cfg = ckpt.config_text.encode("utf-8")
    out = [MAGIC, struct.pack("<II", VERSION, len(cfg)), cfg]
    for name, value in ckpt.arrays.items():
        arr = np.ascontiguousarray(value, dtype="<f8")
        key = name.encode("utf-8")
        out.append(struct.pack("<I", len(key)))
        out.append(key)
        out.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def from_bytes(blob: bytes) -> Checkpoint:
    if blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic bytes)")
    pos = 4

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(blob):
            raise CheckpointError("truncated checkpoint")
        vals = struct.unpack_from(fmt, blob, pos)
        pos += size
        return vals

    version, cfg_len = take("<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    config_text = blob[pos:pos + cfg_len].decode("utf-8")
    pos += cfg_len
    arrays: dict[str, np.ndarray] = {}
    while pos < len(blob):
        (name_len,) = take("<I")
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = take("<I")
        dims = take(f"<{rank}I")
        count = int(np.prod(dims)) if rank else 1
        end = pos + 8 * count
        if end > len(blob):
            raise CheckpointError(f"truncated record {name!r}")
        arrays[name] = np.frombuffer(blob[pos:end], dtype="<f8").astype(np.float64).reshape(dims)
        pos = end
    return Checkpoint(config_text, arrays)


def save(path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def load(path) -> Checkpoint:
    try:
        return from_bytes(Path(path).read_bytes())
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
