"""Canonical byte encoding shared by hashing, signing, and persistence.

The encoding is normative: any two implementations must produce identical
bytes for the same value, so digests and signatures agree across nodes.

Wire grammar (all integers big-endian):

    value   = 0x00                          ; null
            | 0x01 | 0x02                   ; false / true
            | 0x03 i64                      ; signed 64-bit integer
            | 0x04 u32 byte*                ; length-prefixed bytes
            | 0x05 u32 byte*                ; length-prefixed UTF-8 string
            | 0x06 u32 value*               ; list, count-prefixed
            | 0x07 u32 (str value)*         ; map, entries sorted by key
            | 0x08 str u32 value*           ; record: type name + fields
                                            ; in declared field order

Records are dataclasses registered with :func:`register_record`; their
field order is the dataclass declaration order and is part of the format.
"""

from __future__ import annotations

import dataclasses
import struct
from typing import Any

TAG_NULL = 0x00
TAG_FALSE = 0x01
TAG_TRUE = 0x02
TAG_INT = 0x03
TAG_BYTES = 0x04
TAG_STR = 0x05
TAG_LIST = 0x06
TAG_MAP = 0x07
TAG_RECORD = 0x08

_I64_MIN = -(1 << 63)
_I64_MAX = (1 << 63) - 1

_RECORD_TYPES: dict[str, type] = {}


class CodecError(ValueError):
    """Raised when a value cannot be encoded or bytes cannot be decoded."""


def register_record(cls: type) -> type:
    """Class decorator registering a dataclass for canonical round trips."""
    if not dataclasses.is_dataclass(cls):
        raise CodecError(f"{cls.__name__} is not a dataclass")
    _RECORD_TYPES[cls.__name__] = cls
    return cls


def _encode_into(out: bytearray, value: Any) -> None:
    if value is None:
        out.append(TAG_NULL)
    elif value is True:
        out.append(TAG_TRUE)
    elif value is False:
        out.append(TAG_FALSE)
    elif isinstance(value, int):
        if not _I64_MIN <= value <= _I64_MAX:
            raise CodecError(f"integer out of i64 range: {value}")
        out.append(TAG_INT)
        out += struct.pack(">q", value)
    elif isinstance(value, (bytes, bytearray)):
        out.append(TAG_BYTES)
        out += struct.pack(">I", len(value))
        out += bytes(value)
    elif isinstance(value, str):
        raw = value.encode("utf-8")
        out.append(TAG_STR)
        out += struct.pack(">I", len(raw))
        out += raw
    elif dataclasses.is_dataclass(value) and not isinstance(value, type):
        name = type(value).__name__
        if name not in _RECORD_TYPES:
            raise CodecError(f"unregistered record type: {name}")
        fields = dataclasses.fields(value)
        out.append(TAG_RECORD)
        _encode_str(out, name)
        out += struct.pack(">I", len(fields))
        for f in fields:
            _encode_into(out, getattr(value, f.name))
    elif isinstance(value, (list, tuple)):
        out.append(TAG_LIST)
        out += struct.pack(">I", len(value))
        for item in value:
            _encode_into(out, item)
    elif isinstance(value, dict):
        items = []
        for key, item in value.items():
            if not isinstance(key, str):
                raise CodecError(f"map keys must be str, got {type(key).__name__}")
            items.append((key, item))
        items.sort(key=lambda kv: kv[0].encode("utf-8"))
        out.append(TAG_MAP)
        out += struct.pack(">I", len(items))
        for key, item in items:
            _encode_str(out, key)
            _encode_into(out, item)
    else:
        raise CodecError(f"unencodable type: {type(value).__name__}")


def _encode_str(out: bytearray, value: str) -> None:
    raw = value.encode("utf-8")
    out += struct.pack(">I", len(raw))
    out += raw


def encode(value: Any) -> bytes:
    """Encode a value to its canonical bytes."""
    out = bytearray()
    _encode_into(out, value)
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CodecError(f"truncated input at offset {self.pos}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def read_str(self) -> str:
        raw = self.take(self.u32())
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CodecError(f"invalid UTF-8 at offset {self.pos}") from exc

    def read_value(self) -> Any:
        tag = self.take(1)[0]
        if tag == TAG_NULL:
            return None
        if tag == TAG_FALSE:
            return False
        if tag == TAG_TRUE:
            return True
        if tag == TAG_INT:
            return struct.unpack(">q", self.take(8))[0]
        if tag == TAG_BYTES:
            return self.take(self.u32())
        if tag == TAG_STR:
            return self.read_str()
        if tag == TAG_LIST:
            count = self.u32()
            return [self.read_value() for _ in range(count)]
        if tag == TAG_MAP:
            count = self.u32()
            result: dict[str, Any] = {}
            prev: bytes | None = None
            for _ in range(count):
                key = self.read_str()
                raw = key.encode("utf-8")
                if prev is not None and raw <= prev:
                    raise CodecError(f"map keys out of order at offset {self.pos}")
                prev = raw
                result[key] = self.read_value()
            return result
        if tag == TAG_RECORD:
            name = self.read_str()
            cls = _RECORD_TYPES.get(name)
            if cls is None:
                raise CodecError(f"unknown record type: {name}")
            count = self.u32()
            fields = dataclasses.fields(cls)
            if count != len(fields):
                raise CodecError(
                    f"record {name} has {len(fields)} fields, input has {count}"
                )
            values = [self.read_value() for _ in range(count)]
            return cls(*values)
        raise CodecError(f"unknown tag 0x{tag:02x} at offset {self.pos - 1}")


def decode(data: bytes) -> Any:
    """Decode canonical bytes back to a value. Inverse of :func:`encode`."""
    reader = _Reader(data)
    value = reader.read_value()
    if reader.pos != len(data):
        raise CodecError(f"trailing bytes after value at offset {reader.pos}")
    return value
