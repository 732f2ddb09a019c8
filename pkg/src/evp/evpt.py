"""EVPT: a bit-exact little-endian tensor file format.

Layout::

    bytes 0-3   magic b"EVPT"
    byte  4     version (1)
    byte  5     dtype code (0 = float32, 1 = float64)
    byte  6     rank r
    byte  7     zero pad
    8 * r       little-endian uint64 extents
    payload     row-major little-endian values
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .errors import BadMagicError, BadVersionError, FormatError, TruncatedError

MAGIC = b"EVPT"
VERSION = 1
HEADER_SIZE = 8

_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def encode(array) -> bytes:
    array = np.asarray(array)
    if array.dtype.kind == "f":
        array = array.astype(array.dtype.newbyteorder("="), copy=False)
    if array.dtype not in _CODES:
        raise FormatError(f"unsupported dtype {array.dtype}; expected float32 or float64")
    if array.ndim > 255:
        raise FormatError("rank exceeds 255")
    if any(n < 1 for n in array.shape):
        raise FormatError(f"extents must be positive, got {array.shape}")
    header = MAGIC + bytes([VERSION, _CODES[array.dtype], array.ndim, 0])
    extents = struct.pack(f"<{array.ndim}Q", *array.shape)
    payload = np.ascontiguousarray(array, dtype=_DTYPES[_CODES[array.dtype]]).tobytes()
    return header + extents + payload


def decode(blob: bytes) -> np.ndarray:
    """Parse an EVPT byte string, rejecting bad magic, version or length."""
    if len(blob) < HEADER_SIZE:
        if blob[:4] != MAGIC[: len(blob[:4])]:
            raise BadMagicError("not an EVPT file")
        raise TruncatedError(f"header needs {HEADER_SIZE} bytes, got {len(blob)}")
    if blob[:4] != MAGIC:
        raise BadMagicError(f"bad magic {blob[:4]!r}")
    version, code, rank, pad = blob[4], blob[5], blob[6], blob[7]
    if version != VERSION:
        raise BadVersionError(f"unsupported version {version}")
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    if pad != 0:
        raise FormatError("nonzero header pad byte")
    ext_end = HEADER_SIZE + 8 * rank
    if len(blob) < ext_end:
        raise TruncatedError("truncated extent table")
    shape = struct.unpack(f"<{rank}Q", blob[HEADER_SIZE:ext_end])
    if any(n < 1 for n in shape):
        raise FormatError(f"non-positive extent in {shape}")
    dtype = _DTYPES[code]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(blob) < ext_end + nbytes:
        raise TruncatedError(f"payload needs {nbytes} bytes, got {len(blob) - ext_end}")
    if len(blob) > ext_end + nbytes:
        raise FormatError(f"{len(blob) - ext_end - nbytes} trailing bytes after payload")
    data = np.frombuffer(blob, dtype=dtype, count=nbytes // dtype.itemsize, offset=ext_end)
    return data.reshape(shape).astype(dtype.newbyteorder("="), copy=True)


def save(path: str | os.PathLike, array) -> None:
    Path(path).write_bytes(encode(array))


def load(path: str | os.PathLike) -> np.ndarray:
    return decode(Path(path).read_bytes())


def file_size(shape, dtype="float32") -> int:
    """Byte size of an EVPT file holding ``shape`` values of ``dtype``."""
    return HEADER_SIZE + 8 * len(shape) + int(np.prod(shape)) * np.dtype(dtype).itemsize
