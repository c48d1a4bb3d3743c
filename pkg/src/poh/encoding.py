"""Length-prefixed, big-endian binary encoding and domain-separated hashing.

Every wire structure in the package (tokens, session attestations) is built
from these primitives so that encodings are injective and stable across
platforms.
"""

from __future__ import annotations

import base64
import hashlib
import struct

from .errors import DecodeError

HASH_LEN = 32


def dhash(label: bytes, *parts: bytes) -> bytes:
    """SHA-256 over ``label || 0x00 || parts...``.

    Labels never contain a NUL byte, so the separator keeps distinct labels
    from colliding with each other's prefixes.
    """
    h = hashlib.sha256(label)
    h.update(b"\x00")
    for p in parts:
        h.update(p)
    return h.digest()


def b64url_encode(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def b64url_decode(text: str) -> bytes:
    """Strict base64url decoding; padding is optional. Raises ValueError."""
    if not isinstance(text, str):
        raise ValueError("expected text")
    stripped = text.rstrip("=")
    if len(stripped) % 4 == 1:
        raise ValueError("invalid base64url length")
    padded = stripped + "=" * (-len(stripped) % 4)
    try:
        raw = base64.b64decode(padded.encode("ascii"), altchars=b"-_", validate=True)
    except (ValueError, UnicodeEncodeError) as exc:
        raise ValueError(str(exc)) from exc
    # reject non-canonical trailing bits
    if b64url_encode(raw) != stripped:
        raise ValueError("non-canonical base64url")
    return raw


class Writer:
    def __init__(self) -> None:
        self._buf = bytearray()

    def u8(self, v: int) -> "Writer":
        self._buf += struct.pack(">B", v)
        return self

    def u16(self, v: int) -> "Writer":
        self._buf += struct.pack(">H", v)
        return self

    def u32(self, v: int) -> "Writer":
        self._buf += struct.pack(">I", v)
        return self

    def u64(self, v: int) -> "Writer":
        self._buf += struct.pack(">Q", v)
        return self

    def fixed(self, data: bytes, size: int) -> "Writer":
        if len(data) != size:
            raise ValueError(f"expected {size} bytes, got {len(data)}")
        self._buf += data
        return self

    def var(self, data: bytes) -> "Writer":
        """u16 length prefix followed by the bytes."""
        if len(data) > 0xFFFF:
            raise ValueError("field too long")
        self.u16(len(data))
        self._buf += data
        return self

    def text(self, s: str) -> "Writer":
        return self.var(s.encode("utf-8"))

    def getvalue(self) -> bytes:
        return bytes(self._buf)


class Reader:
    """Cursor over a byte string; every read raises DecodeError on underrun."""

    def __init__(self, data: bytes) -> None:
        self._data = memoryview(bytes(data))
        self._pos = 0

    def _take(self, n: int) -> bytes:
        if n < 0 or self._pos + n > len(self._data):
            raise DecodeError("truncated input")
        out = self._data[self._pos : self._pos + n].tobytes()
        self._pos += n
        return out

    def u8(self) -> int:
        return self._take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self._take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self._take(8))[0]

    def fixed(self, size: int) -> bytes:
        return self._take(size)

    def var(self) -> bytes:
        return self._take(self.u16())

    def text(self) -> str:
        try:
            return self.var().decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError("invalid utf-8") from exc

    @property
    def remaining(self) -> int:
        return len(self._data) - self._pos

    def expect_end(self) -> None:
        if self.remaining:
            raise DecodeError(f"{self.remaining} trailing bytes")
