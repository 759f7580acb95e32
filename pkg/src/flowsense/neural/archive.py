"""Named-tensor archive.

Layout (all integers little-endian)::

    magic    b"FSTA"
    version  u32
    meta     u32 length + UTF-8 JSON
    count    u32
    repeated count times:
        name   u16 length + UTF-8
        ndim   u8, then ndim x u64 dims
        data   prod(dims) x float64 little-endian, row-major
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"FSTA"
VERSION = 1


class ArchiveError(ValueError):
    pass


def dumps_tensors(tensors: Mapping[str, np.ndarray], meta: Mapping | None = None) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        nb = name.encode("utf-8")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes(order="C"))
    return buf.getvalue()


def loads_tensors(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise ArchiveError("truncated archive")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise ArchiveError("not a tensor archive (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise ArchiveError(f"unsupported archive version {version}")
    (mlen,) = struct.unpack("<I", take(4))
    meta = json.loads(bytes(take(mlen)).decode("utf-8"))
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = bytes(take(nlen)).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        n = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)
        tensors[name] = arr
    if pos != len(view):
        raise ArchiveError("trailing bytes after last tensor")
    return tensors, meta


def save_tensors(path, tensors, meta=None) -> None:
    Path(path).write_bytes(dumps_tensors(tensors, meta))


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    return loads_tensors(Path(path).read_bytes())
