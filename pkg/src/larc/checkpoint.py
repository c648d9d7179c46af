"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"LARC" | u32 version | u64 metadata length | metadata (UTF-8 JSON)
    then, per tensor until EOF:
    u16 name length | name (UTF-8) | u8 rank | u32 dims[rank] | f32 payload
"""
from __future__ import annotations

import io
import json
from pathlib import Path
import struct

import numpy as np

from .errors import ConfigError, DataError

MAGIC = b"LARC"
VERSION = 1


def dumps(tensors: dict[str, np.ndarray], metadata: dict) -> bytes:
    buf = io.BytesIO()
    meta = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf.write(MAGIC)
    buf.write(struct.pack("<IQ", VERSION, len(meta)))
    buf.write(meta)
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        if arr.dtype != np.float32:
            raise DataError(f"tensor {name!r} is {arr.dtype}; checkpoints hold float32 only")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def loads(blob: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        return _loads(memoryview(blob))
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, (ConfigError, DataError)):
            raise
        raise DataError(f"corrupt or truncated checkpoint: {exc}") from exc


def _loads(view: memoryview) -> tuple[dict, dict[str, np.ndarray]]:
    if bytes(view[:4]) != MAGIC:
        raise DataError("not a LARC checkpoint (bad magic)")
    version, meta_len = struct.unpack_from("<IQ", view, 4)
    if version != VERSION:
        raise ConfigError(f"checkpoint version {version} is not supported (expected {VERSION})")
    pos = 16
    if pos + meta_len > len(view):
        raise DataError("checkpoint metadata is truncated")
    metadata = json.loads(bytes(view[pos:pos + meta_len]).decode("utf-8"))
    pos += meta_len
    tensors: dict[str, np.ndarray] = {}
    while pos < len(view):
        (name_len,) = struct.unpack_from("<H", view, pos)
        pos += 2
        if pos + name_len > len(view):
            raise DataError("tensor name is truncated")
        name = bytes(view[pos:pos + name_len]).decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<B", view, pos)
        pos += 1
        shape = struct.unpack_from(f"<{rank}I", view, pos)
        pos += 4 * rank
        count = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(view, dtype="<f4", count=count, offset=pos).reshape(shape)
        pos += 4 * count
        tensors[name] = arr.astype(np.float32)
    return metadata, tensors


def save(path, tensors: dict[str, np.ndarray], metadata: dict) -> None:
    Path(path).write_bytes(dumps(tensors, metadata))


def load(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint {path} does not exist")
    return loads(path.read_bytes())
