"""Writer for the pipeline's tensor interchange format.

Byte layout (little-endian throughout):
    magic "LTNS" | version u32 (=1) | dtype u8 (1=float32, 2=float64) |
    rank u8 (1..3) | dims rank*u32 | payload row-major | CRC32(payload) u32

This is an independent implementation against the documented layout; the
consumer side lives in the pipeline package and is the compatibility oracle.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

MAGIC = b"LTNS"
VERSION = 1


def write_tensor(path, array: np.ndarray, dtype: str = "float32") -> None:
    """Write an array, narrowing to float32 on disk by default (exports are
    feature dumps, not optimizer state; the reader widens to float64)."""
    if dtype not in ("float32", "float64"):
        raise ValueError(f"unsupported dtype {dtype}")
    arr = np.ascontiguousarray(np.asarray(array, dtype=dtype))
    if not (1 <= arr.ndim <= 3):
        raise ValueError(f"rank {arr.ndim} outside supported range 1..3")
    if arr.size == 0:
        raise ValueError("empty tensors are not representable")
    code = 1 if dtype == "float32" else 2
    payload = arr.astype(f"<{'f4' if code == 1 else 'f8'}").tobytes()
    header = MAGIC + struct.pack("<IBB", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)
        f.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))
