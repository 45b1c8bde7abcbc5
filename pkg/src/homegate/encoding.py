"""Canonical binary encoding helpers.

One serialization discipline for everything that gets hashed, signed, or put
on the wire: fixed-width big-endian integers, and variable-length fields
carried with an explicit length prefix (u8 or u16 depending on the field's
declared bound). Decoding is strict: short buffers and trailing garbage are
errors, never silent truncation.
"""

from __future__ import annotations

import struct


class DecodeError(ValueError):
    """Raised when bytes do not parse as the expected canonical encoding."""


def u8(value: int) -> bytes:
    if not 0 <= value <= 0xFF:
        raise ValueError(f"u8 out of range: {value}")
    return value.to_bytes(1, "big")


def u16(value: int) -> bytes:
    if not 0 <= value <= 0xFFFF:
        raise ValueError(f"u16 out of range: {value}")
    return value.to_bytes(2, "big")


def u32(value: int) -> bytes:
    if not 0 <= value <= 0xFFFFFFFF:
        raise ValueError(f"u32 out of range: {value}")
    return value.to_bytes(4, "big")


def u64(value: int) -> bytes:
    if not 0 <= value <= 0xFFFFFFFFFFFFFFFF:
        raise ValueError(f"u64 out of range: {value}")
    return value.to_bytes(8, "big")


def f64(value: float) -> bytes:
    return struct.pack(">d", value)


def bytes_u8(data: bytes) -> bytes:
    if len(data) > 0xFF:
        raise ValueError(f"field too long for u8 length prefix: {len(data)}")
    return u8(len(data)) + data


def bytes_u16(data: bytes) -> bytes:
    if len(data) > 0xFFFF:
        raise ValueError(f"field too long for u16 length prefix: {len(data)}")
    return u16(len(data)) + data


def bytes_u32(data: bytes) -> bytes:
    return u32(len(data)) + data


class Reader:
    """Strict sequential reader over a canonical byte string."""

    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0

    @property
    def remaining(self) -> int:
        return len(self._data) - self._pos

    def take(self, n: int) -> bytes:
        if n < 0 or self.remaining < n:
            raise DecodeError(f"need {n} bytes, have {self.remaining}")
        chunk = self._data[self._pos : self._pos + n]
        self._pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return int.from_bytes(self.take(2), "big")

    def u32(self) -> int:
        return int.from_bytes(self.take(4), "big")

    def u64(self) -> int:
        return int.from_bytes(self.take(8), "big")

    def f64(self) -> float:
        return struct.unpack(">d", self.take(8))[0]

    def bytes_u8(self) -> bytes:
        return self.take(self.u8())

    def bytes_u16(self) -> bytes:
        return self.take(self.u16())

    def bytes_u32(self) -> bytes:
        return self.take(self.u32())

    def expect_end(self) -> None:
        if self.remaining != 0:
            raise DecodeError(f"{self.remaining} trailing bytes")
