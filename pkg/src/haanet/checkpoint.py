"""Binary named-tensor checkpoints.

Layout (all integers u32 little-endian)::

    b"HAAN" | version | tensor count
    per tensor: name length | UTF-8 name | rank | dims... | float32 LE values
    crc32 of every preceding byte

Metadata travels as zero-size rank-1 entries named ``meta/<key>=<value>``.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"HAAN"
VERSION = 1
META_PREFIX = "meta/"


class CheckpointError(ValueError):
    pass


def encode(tensors: Mapping[str, np.ndarray], meta: Mapping[str, object] | None = None) -> bytes:
    entries: list[tuple[str, np.ndarray]] = []
    for key, value in (meta or {}).items():
        if "=" in key:
            raise CheckpointError(f"metadata key may not contain '=': {key!r}")
        entries.append((f"{META_PREFIX}{key}={value}", np.zeros(0, dtype="<f4")))
    for name, arr in tensors.items():
        if name.startswith(META_PREFIX):
            raise CheckpointError(f"tensor name collides with metadata prefix: {name!r}")
        entries.append((name, np.asarray(arr)))

    out = bytearray(MAGIC)
    out += struct.pack("<II", VERSION, len(entries))
    for name, arr in entries:
        raw = name.encode("utf-8")
        out += struct.pack("<I", len(raw)) + raw
        out += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    return bytes(out)


def decode(blob: bytes) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    (stored,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored:
        raise CheckpointError("checkpoint checksum mismatch (corrupt or truncated file)")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 12
    tensors: dict[str, np.ndarray] = {}
    meta: dict[str, str] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
        size = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f4", count=size, offset=pos).reshape(dims)
        pos += 4 * size
        if name.startswith(META_PREFIX):
            key, _, value = name[len(META_PREFIX):].partition("=")
            meta[key] = value
        else:
            tensors[name] = arr.astype(np.float32)
    if pos != len(blob) - 4:
        raise CheckpointError("trailing bytes after tensor table")
    return tensors, meta


def save(path, tensors, meta=None) -> None:
    Path(path).write_bytes(encode(tensors, meta))


def load(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    return decode(Path(path).read_bytes())
