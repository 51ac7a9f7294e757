"""CTNS binary tensor files.

Layout: magic b"CTNS", version byte 0x01, dtype byte 0x00 (float32), ndim
byte, then ndim little-endian uint32 dims, then the row-major little-endian
float32 payload. Round trips are bit exact for float32 data.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"CTNS"
VERSION = 0x01
DTYPE_F32 = 0x00


def write_tensor(path, arr: np.ndarray) -> None:
    """Write an array as float32. Casting from wider floats is deterministic."""
    arr = np.asarray(arr, dtype=np.float32, order="C")
    if arr.ndim > 255:
        raise FormatError(f"tensor rank {arr.ndim} exceeds the 255 limit")
    path = Path(path)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(bytes([VERSION, DTYPE_F32, arr.ndim]))
        for d in arr.shape:
            f.write(struct.pack("<I", d))
        f.write(arr.astype("<f4", copy=False).tobytes(order="C"))


def read_tensor(path) -> np.ndarray:
    """Read a CTNS file back into a float32 array."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 7:
        raise FormatError(f"{path.name}: truncated header ({len(blob)} bytes)")
    if blob[:4] != MAGIC:
        raise FormatError(f"{path.name}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    version, dtype_code, ndim = blob[4], blob[5], blob[6]
    if version != VERSION:
        raise FormatError(f"{path.name}: unsupported version {version}")
    if dtype_code != DTYPE_F32:
        raise FormatError(f"{path.name}: unsupported dtype code {dtype_code}")
    off = 7
    need = off + 4 * ndim
    if len(blob) < need:
        raise FormatError(f"{path.name}: truncated dim list")
    dims = struct.unpack_from(f"<{ndim}I", blob, off) if ndim else ()
    off = need
    count = 1
    for d in dims:
        count *= d
    need = off + 4 * count
    if len(blob) != need:
        raise FormatError(
            f"{path.name}: payload length {len(blob) - off} bytes, "
            f"expected {4 * count}"
        )
    flat = np.frombuffer(blob, dtype="<f4", count=count, offset=off)
    return flat.reshape(dims).astype(np.float32, copy=True)
