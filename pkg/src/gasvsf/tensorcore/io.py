"""VSFT binary tensor dumps.

Layout: ``b"VSFT"``, rank as little-endian u32, ``rank`` extents as u32,
then the payload as little-endian float32 in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"VSFT"


class DumpFormatError(ValueError):
    pass


def dumps(arr) -> bytes:
    a = np.asarray(getattr(arr, "data", arr))
    if a.ndim == 0:
        a = a.reshape(1)
    head = MAGIC + struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return head + np.ascontiguousarray(a, dtype="<f4").tobytes()


def loads(buf: bytes) -> np.ndarray:
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise DumpFormatError("missing VSFT magic")
    (rank,) = struct.unpack_from("<I", buf, 4)
    off = 8 + 4 * rank
    if len(buf) < off:
        raise DumpFormatError("truncated header")
    shape = struct.unpack_from(f"<{rank}I", buf, 8)
    n = int(np.prod(shape)) if rank else 1
    if len(buf) != off + 4 * n:
        raise DumpFormatError(f"payload size {len(buf) - off} does not match shape {shape}")
    return np.frombuffer(buf, dtype="<f4", offset=off).reshape(shape).astype(np.float32)


def save(path, arr) -> None:
    Path(path).write_bytes(dumps(arr))


def load(path) -> np.ndarray:
    return loads(Path(path).read_bytes())
