"""EMT1 binary tensor format.

Layout (little-endian throughout):

    magic  b"EMT1"
    dtype  u8   (0 = float32, 1 = float64, 2 = uint8)
    rank   u32
    dims   u32 * rank
    data   raw values, row-major
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"EMT1"

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}
_CODE_FOR = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.uint8): 2}


class FormatError(ValueError):
    """Malformed EMT1/EMD1 payload; message carries the failing byte offset."""


def encoded_size(arr: np.ndarray) -> int:
    return 4 + 1 + 4 + 4 * arr.ndim + arr.size * arr.itemsize


def encode_tensor(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    if arr.dtype not in _CODE_FOR:
        raise TypeError(f"EMT1 supports f32/f64/u8, got {arr.dtype}")
    head = MAGIC + struct.pack("<BI", _CODE_FOR[arr.dtype], arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()


def decode_tensor(buf: bytes, offset: int = 0) -> tuple:
    """Decode one tensor starting at ``offset``; returns (array, next_offset)."""
    start = offset
    if buf[offset:offset + 4] != MAGIC:
        raise FormatError(f"bad EMT1 magic at byte {start}")
    offset += 4
    if offset + 5 > len(buf):
        raise FormatError(f"truncated EMT1 header at byte {offset}")
    code, rank = struct.unpack_from("<BI", buf, offset)
    offset += 5
    if code not in _DTYPE_CODES:
        raise FormatError(f"unknown EMT1 dtype code {code} at byte {start + 4}")
    if offset + 4 * rank > len(buf):
        raise FormatError(f"truncated EMT1 dims at byte {offset}")
    dims = struct.unpack_from(f"<{rank}I", buf, offset)
    offset += 4 * rank
    dtype = _DTYPE_CODES[code]
    nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
    if offset + nbytes > len(buf):
        raise FormatError(f"truncated EMT1 payload at byte {offset} (need {nbytes} bytes)")
    arr = np.frombuffer(buf[offset:offset + nbytes], dtype=dtype).reshape(dims).copy()
    return arr, offset + nbytes


def write_tensor(path, arr: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(encode_tensor(arr))


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        arr, _ = decode_tensor(f.read())
    return arr
