"""Checkpoint files: a JSON manifest followed by concatenated EMT1 tensors.

Layout: magic ``EMC1``, u32 manifest length, UTF-8 JSON manifest, then the
tensor blobs back to back.  The manifest carries run metadata plus a
name -> byte offset table (offsets relative to the end of the manifest).
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..ndtensor import Tensor
from ..ndtensor.emt import FormatError, decode_tensor, encode_tensor

MAGIC = b"EMC1"


def save_checkpoint(path, params: dict, meta: dict) -> None:
    blobs = []
    offsets = {}
    off = 0
    for name, tensor in params.items():
        arr = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor)
        blob = encode_tensor(arr)
        offsets[name] = off
        blobs.append(blob)
        off += len(blob)
    manifest = json.dumps({"meta": meta, "tensors": offsets}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(manifest)))
        f.write(manifest)
        f.write(b"".join(blobs))


def load_checkpoint(path) -> tuple:
    """Returns (params: name -> ndarray, meta: dict)."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != MAGIC:
        raise FormatError(f"bad checkpoint magic at byte 0 in {path}")
    (mlen,) = struct.unpack_from("<I", buf, 4)
    manifest = json.loads(buf[8:8 + mlen].decode("utf-8"))
    base = 8 + mlen
    params = {}
    for name, off in manifest["tensors"].items():
        arr, _ = decode_tensor(buf, base + off)
        params[name] = arr
    return params, manifest["meta"]
