"""Binary checkpoint files.

Layout (all integers little-endian):

    magic "DGEN" | u32 version | u16 kind length | kind utf-8
    | u16 entry count | per entry: u16 name length, name utf-8,
      u8 ndim, u32 dims... | payloads: float32 little-endian arrays
      concatenated in entry order | u32 CRC32 of all preceding bytes

The shape table carries named arrays, so a training checkpoint can hold
the parameter vector along with optimizer moment estimates.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import IntegrityError

MAGIC = b"DGEN"
VERSION = 1


def save_checkpoint(path: str | Path, kind: str, arrays: dict[str, np.ndarray]) -> None:
    """Write named float arrays (stored as float32) under a generator kind tag."""
    parts = [MAGIC, struct.pack("<I", VERSION)]
    kind_bytes = kind.encode("utf-8")
    parts.append(struct.pack("<H", len(kind_bytes)))
    parts.append(kind_bytes)
    parts.append(struct.pack("<H", len(arrays)))
    payloads = []
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        name_bytes = name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_bytes)))
        parts.append(name_bytes)
        parts.append(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            parts.append(struct.pack("<I", dim))
        payloads.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    parts.extend(payloads)
    body = b"".join(parts)
    crc = zlib.crc32(body) & 0xFFFFFFFF
    Path(path).write_bytes(body + struct.pack("<I", crc))


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise IntegrityError("checkpoint truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path: str | Path) -> tuple[str, dict[str, np.ndarray]]:
    """Read a checkpoint, verifying magic, version, and CRC32.

    Returns the generator kind and the named arrays as float64 (values
    are exactly the stored float32 values).
    """
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 8:
        raise IntegrityError(f"{path}: too short to be a checkpoint")
    body, crc_bytes = data[:-4], data[-4:]
    if zlib.crc32(body) & 0xFFFFFFFF != struct.unpack("<I", crc_bytes)[0]:
        raise IntegrityError(f"{path}: CRC mismatch")
    r = _Reader(body)
    if r.take(4) != MAGIC:
        raise IntegrityError(f"{path}: bad magic")
    version = r.u32()
    if version != VERSION:
        raise IntegrityError(f"{path}: unsupported checkpoint version {version}")
    kind = r.take(r.u16()).decode("utf-8")
    entries = []
    for _ in range(r.u16()):
        name = r.take(r.u16()).decode("utf-8")
        ndim = r.u8()
        shape = tuple(r.u32() for _ in range(ndim))
        entries.append((name, shape))
    arrays: dict[str, np.ndarray] = {}
    for name, shape in entries:
        count = int(np.prod(shape)) if shape else 1
        raw = r.take(4 * count)
        arr = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)
        arrays[name] = arr
    if r.pos != len(body):
        raise IntegrityError(f"{path}: trailing bytes after payload")
    return kind, arrays
