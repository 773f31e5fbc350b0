"""Sealed little-endian binary containers: magic + version + body + sha256 trailer."""

import hashlib
import struct

from .errors import DataError

DIGEST_SIZE = 32
NO_DIGEST = bytes(DIGEST_SIZE)


def seal(magic: bytes, version: int, body: bytes) -> bytes:
    blob = magic + struct.pack("<I", version) + body
    return blob + hashlib.sha256(blob).digest()


def unseal(blob: bytes, magic: bytes, version: int, what: str = "file") -> memoryview:
    """Validate a sealed container and return its body."""
    head = len(magic) + 4
    if len(blob) < head + DIGEST_SIZE:
        raise DataError(f"{what}: truncated ({len(blob)} bytes)")
    if blob[: len(magic)] != magic:
        raise DataError(f"{what}: bad magic bytes {bytes(blob[:len(magic)])!r}")
    (found,) = struct.unpack_from("<I", blob, len(magic))
    if found != version:
        raise DataError(f"{what}: format version {found}, expected {version}")
    if hashlib.sha256(blob[:-DIGEST_SIZE]).digest() != blob[-DIGEST_SIZE:]:
        raise DataError(f"{what}: checksum mismatch (truncated or corrupted)")
    return memoryview(blob)[head:-DIGEST_SIZE]


class Reader:
    """Sequential reader over a body buffer with bounds checking."""

    def __init__(self, buf, what="file"):
        self.buf = buf
        self.pos = 0
        self.what = what

    def take(self, n: int):
        if self.pos + n > len(self.buf):
            raise DataError(f"{self.what}: unexpected end of data")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype, count: int):
        import numpy as np
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt).copy()

    def done(self):
        if self.pos != len(self.buf):
            raise DataError(f"{self.what}: {len(self.buf) - self.pos} trailing bytes")
