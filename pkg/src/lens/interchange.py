"""Bit-exact tensor file format ("LTNS"), PGM export, and metrics CSV.

Layout: magic "LTNS" | version u32 LE (=1) | dtype u8 (1=f32, 2=f64) |
rank u8 (1..3) | dims rank*u32 LE | payload row-major LE | CRC32(payload) u32 LE.
"""

from __future__ import annotations

import csv
import struct
import zlib
from pathlib import Path

import numpy as np
import torch

MAGIC = b"LTNS"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2}


class TensorFileError(Exception):
    """Base class for tensor-file format failures."""


class MagicError(TensorFileError):
    pass


class VersionError(TensorFileError):
    pass


class ChecksumError(TensorFileError):
    pass


class FormatError(TensorFileError):
    pass


def write_tensor(path, tensor) -> None:
    arr = tensor.detach().cpu().numpy() if isinstance(tensor, torch.Tensor) else np.asarray(tensor)
    if arr.dtype not in _CODES:
        arr = arr.astype(np.float64)
    if not (1 <= arr.ndim <= 3):
        raise FormatError(f"rank {arr.ndim} outside supported range 1..3")
    if arr.size == 0:
        raise FormatError("empty tensors are not representable")
    code = _CODES[arr.dtype]
    payload = np.ascontiguousarray(arr).astype(_DTYPES[code]).tobytes()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IBB", VERSION, code, arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(payload)
        f.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def read_tensor(path) -> np.ndarray:
    """Read a tensor file; values are widened to float64 on load."""
    blob = Path(path).read_bytes()
    if len(blob) < 10 or blob[:4] != MAGIC:
        raise MagicError(f"{path}: bad magic")
    version, code, rank = struct.unpack_from("<IBB", blob, 4)
    if version != VERSION:
        raise VersionError(f"{path}: unsupported version {version}")
    if code not in _DTYPES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    if not (1 <= rank <= 3):
        raise FormatError(f"{path}: rank {rank} outside 1..3")
    off = 10
    if len(blob) < off + 4 * rank:
        raise FormatError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{rank}I", blob, off)
    off += 4 * rank
    if any(d < 1 for d in dims):
        raise FormatError(f"{path}: non-positive extent in {dims}")
    dt = _DTYPES[code]
    n = int(np.prod(dims)) * dt.itemsize
    if len(blob) != off + n + 4:
        raise ChecksumError(f"{path}: payload truncated or trailing bytes")
    payload = blob[off:off + n]
    (crc,) = struct.unpack_from("<I", blob, off + n)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise ChecksumError(f"{path}: CRC mismatch")
    return np.frombuffer(payload, dtype=dt).reshape(dims).astype(np.float64)


def export_pgm(map_01, path) -> None:
    """Binary PGM (P5, maxval 255); byte = round-half-up of 255*v, clamped."""
    arr = map_01.detach().cpu().numpy() if isinstance(map_01, torch.Tensor) else np.asarray(map_01)
    if arr.ndim != 2:
        raise ValueError("PGM export expects a 2D map")
    vals = np.clip(np.floor(255.0 * arr + 0.5), 0, 255).astype(np.uint8)
    h, w = vals.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(vals.tobytes())


METRICS_COLUMNS = ["step", "total", "attn", "seg", "dice", "bce"]


def write_metrics_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=METRICS_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in METRICS_COLUMNS})


def write_keypoints_txt(path, points) -> None:
    """One `x y score` line per keypoint, 6 decimal places."""
    with open(path, "w") as f:
        for p in points:
            f.write(f"{p.x:.6f} {p.y:.6f} {p.score:.6f}\n")
