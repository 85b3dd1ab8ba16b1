"""Binary PGM (P5, maxval 255) read/write for masks and heatmap exports."""

from __future__ import annotations

import numpy as np


def write_pgm(path, values: np.ndarray) -> None:
    """Write a 2-d array as 8-bit P5; floats are taken as [0,1] and scaled."""
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise ValueError(f"PGM needs a 2-d array, got {arr.shape}")
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(arr.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit P5 file; returns the raw uint8 grid."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:2] != b"P5":
        raise ValueError(f"not a binary PGM (P5) file: {path}")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":  # comment line
            while pos < len(buf) and buf[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(buf[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError(f"unsupported PGM maxval {maxval}")
    data = np.frombuffer(buf[pos:pos + w * h], dtype=np.uint8)
    if data.size != w * h:
        raise ValueError(f"truncated PGM payload: expected {w * h} bytes, got {data.size}")
    return data.reshape(h, w).copy()


def read_mask_pgm(path) -> np.ndarray:
    """Read a 0/255 mask PGM into a binary {0,1} grid."""
    raw = read_pgm(path)
    bad = ~np.isin(raw, (0, 255))
    if bad.any():
        raise ValueError(f"mask PGM must contain only 0 and 255, found value {int(raw[bad][0])}")
    return (raw > 0).astype(np.uint8)
