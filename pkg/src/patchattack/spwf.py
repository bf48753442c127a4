"""SPWF: the portable little-endian tensor container used for weights.

Layout (all integers and floats little-endian):
    magic "SPWF" | u32 version (=1) | u32 tensor count
    per tensor: u16 name length | UTF-8 name | u8 rank | rank x u32 dims
                | product(dims) float32 values
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"SPWF"
VERSION = 1


class SpwfError(Exception):
    """Base class for container failures."""


class BadMagic(SpwfError):
    pass


class TruncatedFile(SpwfError):
    pass


class TrailingBytes(SpwfError):
    pass


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise TruncatedFile(f"needed {n} bytes at offset {self.pos}, file has {len(self.raw)}")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def read_tensor_file(raw: bytes) -> dict[str, np.ndarray]:
    """Parse the container; returns name -> float32 array in file order."""
    r = _Reader(raw)
    if r.take(4) != MAGIC:
        raise BadMagic("not an SPWF file")
    version = r.u32()
    if version != VERSION:
        raise BadMagic(f"unsupported SPWF version {version}")
    count = r.u32()
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = r.u16()
        name = r.take(name_len).decode("utf-8")
        rank = r.u8()
        dims = tuple(r.u32() for _ in range(rank))
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(dims)
        if name in tensors:
            raise SpwfError(f"duplicate tensor {name!r}")
        tensors[name] = data.astype(np.float32)
    if r.pos != len(raw):
        raise TrailingBytes(f"{len(raw) - r.pos} unexpected bytes after last tensor")
    return tensors


def write_tensor_file(tensors: dict[str, np.ndarray]) -> bytes:
    """Serialise tensors sorted by name (deterministic byte-for-byte)."""
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
