"""Little-endian binary helpers shared by the model file formats.

Every model file may end with a provenance trailer::

    <utf-8 JSON bytes> <u32 LE byte length> b"META"

Readers strip the trailer before parsing the fixed layout.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from .errors import BadMagic, CorruptHeader

TRAILER_MAGIC = b"META"


def dumps_meta(meta) -> bytes:
    if meta is None:
        return b""
    body = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    return body + struct.pack("<I", len(body)) + TRAILER_MAGIC


def split_meta(data: bytes):
    if len(data) >= 8 and data[-4:] == TRAILER_MAGIC:
        (n,) = struct.unpack("<I", data[-8:-4])
        if n + 8 <= len(data):
            try:
                meta = json.loads(data[-8 - n:-8].decode())
                return data[:-8 - n], meta
            except (UnicodeDecodeError, json.JSONDecodeError):
                pass
    return data, None


class Reader:
    def __init__(self, data: bytes, magic: bytes, what: str = "file"):
        self.what = what
        if data[:len(magic)] != magic:
            raise BadMagic(f"{what}: expected magic {magic!r}, found {data[:len(magic)]!r}")
        self.data = data
        self.pos = len(magic)

    def remaining(self) -> int:
        return len(self.data) - self.pos

    def _take(self, n):
        if self.pos + n > len(self.data):
            raise CorruptHeader(f"{self.what}: truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, count=1):
        vals = struct.unpack("<%dI" % count, self._take(4 * count))
        return vals if count > 1 else vals[0]

    def f64(self, shape):
        n = int(np.prod(shape))
        return np.frombuffer(self._take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)

    def f32(self, shape):
        n = int(np.prod(shape))
        return np.frombuffer(self._take(4 * n), dtype="<f4").astype(np.float32).reshape(shape)

    def text(self):
        n = self.u32()
        return self._take(n).decode()

    def done(self):
        if self.remaining():
            raise CorruptHeader(f"{self.what}: {self.remaining()} unexpected trailing bytes")


def u32(*vals) -> bytes:
    return struct.pack("<%dI" % len(vals), *vals)


def f64(arr) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def f32(arr) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def text(s: str) -> bytes:
    b = s.encode()
    return u32(len(b)) + b
