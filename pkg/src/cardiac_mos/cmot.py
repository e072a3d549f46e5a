"""CMOT1 binary tensor records.

Layout: ``b"CMOT1"``, u8 dtype code (0=f32, 1=f64), u8 rank, rank u32
little-endian extents, then the row-major little-endian payload.
"""

from __future__ import annotations

import os
import struct
import tempfile
from typing import BinaryIO

import numpy as np

MAGIC = b"CMOT1"
_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class FormatError(ValueError):
    pass


def _read_exact(f: BinaryIO, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError("unexpected end of CMOT1 data")
    return buf


def write_tensor(f: BinaryIO, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    dt = arr.dtype.newbyteorder("<")
    if dt not in _CODES:
        raise FormatError(f"unsupported dtype {arr.dtype}")
    if arr.ndim > 255:
        raise FormatError("rank exceeds 255")
    f.write(MAGIC)
    f.write(struct.pack("<BB", _CODES[dt], arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(np.ascontiguousarray(arr, dtype=dt).tobytes())


def read_tensor(f: BinaryIO) -> np.ndarray:
    if _read_exact(f, 5) != MAGIC:
        raise FormatError("bad magic: not a CMOT1 record")
    code, rank = struct.unpack("<BB", _read_exact(f, 2))
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    shape = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank))
    dt = _DTYPES[code]
    n = int(np.prod(shape, dtype=np.int64))
    data = np.frombuffer(_read_exact(f, n * dt.itemsize), dtype=dt)
    return data.reshape(shape).astype(dt.newbyteorder("="))


def atomic_write(path: str | os.PathLike, payload: bytes) -> None:
    """Write ``payload`` to a temp file in the same directory, then rename."""
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(path, arr: np.ndarray) -> None:
    import io

    buf = io.BytesIO()
    write_tensor(buf, arr)
    atomic_write(path, buf.getvalue())


def load(path) -> np.ndarray:
    with open(path, "rb") as f:
        return read_tensor(f)
