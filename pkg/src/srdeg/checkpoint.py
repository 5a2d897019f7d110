"""``SRRW`` binary checkpoints.

Layout (little-endian)::

    b"SRRW"  u8 version
    u32 header length, UTF-8 JSON header {"model": kind, "config": {...}, "scale": s}
    u32 tensor count
    per tensor: u16 name length, name, u8 rank, rank x u32 dims, float32 values
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SRRW"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(header: dict, tensors: dict[str, np.ndarray]) -> bytes:
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<B", VERSION), struct.pack("<I", len(head)), head,
             struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def loads(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if data[:4] != MAGIC:
        raise CheckpointError(f"bad magic {data[:4]!r}")
    try:
        (version,) = struct.unpack_from("<B", data, 4)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        pos = 5
        (hlen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + hlen > len(data):
            raise CheckpointError(f"truncated header at offset {pos}")
        header = json.loads(data[pos : pos + hlen].decode("utf-8"))
        pos += hlen
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", data, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            if pos + 4 * size > len(data):
                raise CheckpointError(f"truncated tensor {name!r} at offset {pos}")
            tensors[name] = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(dims).astype(np.float64)
            pos += 4 * size
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt header: {exc}") from None
    return header, tensors


def save_model(path: str | os.PathLike, model) -> None:
    header = {"model": model.kind, "config": model.config, "scale": model.scale}
    Path(path).write_bytes(dumps(header, model.state()))


def load_model(path: str | os.PathLike):
    from .models import build_model

    header, tensors = loads(Path(path).read_bytes())
    model = build_model(header["model"], header["config"])
    model.load_state(tensors)
    return model
