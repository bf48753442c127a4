"""Standalone SPWF writer (the portable tensor container consumed downstream).

Layout, all little-endian: magic "SPWF" | u32 version (=1) | u32 tensor
count; per tensor: u16 name length | UTF-8 name | u8 rank | rank x u32 dims
| product(dims) float32 values.  Tensors are written sorted by name so the
same input always serialises to the same bytes.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"SPWF"
VERSION = 1


def write_tensor_file(tensors: dict[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    return b"".join(chunks)
