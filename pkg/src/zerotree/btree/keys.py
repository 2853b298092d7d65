"""Order-preserving key encodings and half-open key ranges.

Every index key is a byte string compared lexicographically, so each
encoding here must map the natural order of its domain onto byte order.
"""

from __future__ import annotations

from dataclasses import dataclass

_SIGN = 1 << 63


def encode_int(value: int) -> bytes:
    """Signed 64-bit integer as 8 big-endian bytes with the sign bit flipped."""
    if not -_SIGN <= value < _SIGN:
        raise OverflowError("integer keys are limited to 64 bits")
    return (value + _SIGN).to_bytes(8, "big")


def decode_int(data: bytes) -> int:
    return int.from_bytes(data, "big") - _SIGN


def encode_uint(value: int) -> bytes:
    return value.to_bytes(8, "big")


def decode_uint(data: bytes) -> int:
    return int.from_bytes(data, "big")


def encode_str(value: str) -> bytes:
    return value.encode("utf-8")


def encode_composite(parts: list[bytes] | tuple[bytes, ...]) -> bytes:
    """Concatenate components so tuple order equals byte order.

    Each component has 0x00 escaped as 0x00 0xFF and ends with 0x00 0x00, so
    a shorter component always sorts before any extension of it.
    """
    return b"".join(part.replace(b"\x00", b"\x00\xff") + b"\x00\x00" for part in parts)


def decode_composite(data: bytes) -> list[bytes]:
    parts = []
    cur = bytearray()
    i = 0
    n = len(data)
    while i < n:
        b = data[i]
        if b != 0:
            cur.append(b)
            i += 1
            continue
        if i + 1 >= n:
            raise ValueError("dangling escape in composite key")
        nxt = data[i + 1]
        if nxt == 0xFF:
            cur.append(0)
        elif nxt == 0x00:
            parts.append(bytes(cur))
            cur = bytearray()
        else:
            raise ValueError("bad escape in composite key")
        i += 2
    if cur:
        raise ValueError("unterminated component in composite key")
    return parts


def successor(key: bytes) -> bytes:
    """Smallest byte string strictly greater than ``key``."""
    return key + b"\x00"


@dataclass(frozen=True)
class KeyRange:
    """Half-open key interval ``[start, stop)``; ``None`` means unbounded."""

    start: bytes | None = None
    stop: bytes | None = None

    @classmethod
    def closed(cls, low: bytes | None = None, high: bytes | None = None, *,
               low_inclusive: bool = True, high_inclusive: bool = True) -> KeyRange:
        start = low if low is None or low_inclusive else successor(low)
        stop = high if high is None or not high_inclusive else successor(high)
        return cls(start, stop)

    @classmethod
    def prefix(cls, prefix: bytes) -> KeyRange:
        """All keys beginning with a composite-encoded prefix (which ends in 0x00 0x00)."""
        if not prefix.endswith(b"\x00\x00"):
            raise ValueError("prefix ranges need a composite-encoded prefix")
        return cls(prefix, prefix[:-1] + b"\x01")

    @classmethod
    def single(cls, key: bytes) -> KeyRange:
        return cls(key, successor(key))

    def contains(self, key: bytes) -> bool:
        return (self.start is None or key >= self.start) and (self.stop is None or key < self.stop)

    __contains__ = contains

    def is_empty(self) -> bool:
        return self.start is not None and self.stop is not None and self.start >= self.stop

    def intersects(self, lo: bytes | None, hi: bytes | None) -> bool:
        """Does ``[lo, hi)`` share any key with this range?"""
        a = lo if self.start is None else (self.start if lo is None else max(lo, self.start))
        b = hi if self.stop is None else (self.stop if hi is None else min(hi, self.stop))
        if b == b"":
            return False
        return a is None or b is None or a < b

    def covers(self, lo: bytes | None, hi: bytes | None) -> bool:
        """Is every key of ``[lo, hi)`` inside this range?"""
        if self.start is not None and (lo is None or lo < self.start):
            return False
        if self.stop is not None and (hi is None or hi > self.stop):
            return False
        return True

    def within(self, other: KeyRange) -> bool:
        return other.covers(self.start, self.stop) or self.is_empty()
