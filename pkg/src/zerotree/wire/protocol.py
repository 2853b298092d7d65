"""Binary framing and message codecs.

Frame: 4-byte big-endian payload length (type byte included) || 1-byte type || body.
Integers are big-endian; lists are a 4-byte count followed by elements; byte
strings are a 4-byte length followed by the bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import BinaryIO

from ..errors import ProtocolError

GET_OBJECTS = 0x01
COMMIT = 0x02
GET_ROOT = 0x03
ALLOCATE = 0x04
GET_OBJECTS_RESP = 0x81
COMMIT_RESP = 0x82
GET_ROOT_RESP = 0x83
ALLOCATE_RESP = 0x84
ERROR = 0xFF

ERR_BAD_REQUEST = 1
ERR_CONFLICT = 2
ERR_NOT_FOUND = 3
ERR_INTERNAL = 4

MAX_FRAME = 256 * 1024 * 1024
NEW = None  # expected_version marker for objects that do not exist yet

_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")


class Writer:
    def __init__(self) -> None:
        self.parts: list[bytes] = []

    def u8(self, v: int) -> Writer:
        self.parts.append(bytes((v,)))
        return self

    def u32(self, v: int) -> Writer:
        self.parts.append(_U32.pack(v))
        return self

    def u64(self, v: int) -> Writer:
        self.parts.append(_U64.pack(v))
        return self

    def blob(self, b: bytes) -> Writer:
        self.parts.append(_U32.pack(len(b)))
        self.parts.append(b)
        return self

    def getvalue(self) -> bytes:
        return b"".join(self.parts)


class Reader:
    def __init__(self, data: bytes) -> None:
        self.data = memoryview(data)
        self.pos = 0

    def _take(self, n: int) -> memoryview:
        if self.pos + n > len(self.data):
            raise ProtocolError("truncated message")
        view = self.data[self.pos:self.pos + n]
        self.pos += n
        return view

    def u8(self) -> int:
        return self._take(1)[0]

    def u32(self) -> int:
        return _U32.unpack(self._take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self._take(8))[0]

    def blob(self) -> bytes:
        return bytes(self._take(self.u32()))

    def done(self) -> None:
        if self.pos != len(self.data):
            raise ProtocolError("trailing bytes in message")


def encode_frame(msg_type: int, body: bytes) -> bytes:
    return _U32.pack(len(body) + 1) + bytes((msg_type,)) + body


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = stream.read(n - len(buf))
        if not chunk:
            raise EOFError("connection closed")
        buf += chunk
    return bytes(buf)


def read_frame(stream: BinaryIO) -> tuple[int, bytes]:
    (length,) = _U32.unpack(_read_exact(stream, 4))
    if length < 1 or length > MAX_FRAME:
        raise ProtocolError(f"bad frame length {length}")
    try:
        data = _read_exact(stream, length)
    except EOFError:
        raise ProtocolError("connection closed mid-frame") from None
    return data[0], data[1:]


@dataclass
class Write:
    oid: int  # 0 asks the server to allocate
    expected_version: int | None  # NEW (None) for objects that do not exist yet
    blob: bytes


@dataclass
class CommitBatch:
    writes: list[Write] = field(default_factory=list)
    root_updates: list[tuple[str, int]] = field(default_factory=list)


@dataclass
class ObjectRecord:
    oid: int
    version: int
    blob: bytes | None  # None marks NotFound


def encode_get_objects(oids: list[int]) -> bytes:
    w = Writer().u32(len(oids))
    for oid in oids:
        w.u64(oid)
    return w.getvalue()


def decode_get_objects(body: bytes) -> list[int]:
    r = Reader(body)
    oids = [r.u64() for _ in range(r.u32())]
    r.done()
    return oids


def encode_objects_response(records: list[ObjectRecord]) -> bytes:
    w = Writer().u32(len(records))
    for rec in records:
        w.u64(rec.oid)
        if rec.blob is None:
            w.u8(0).u64(0).blob(b"")
        else:
            w.u8(1).u64(rec.version).blob(rec.blob)
    return w.getvalue()


def decode_objects_response(body: bytes) -> list[ObjectRecord]:
    r = Reader(body)
    out = []
    for _ in range(r.u32()):
        oid, found, version, blob = r.u64(), r.u8(), r.u64(), r.blob()
        out.append(ObjectRecord(oid, version, blob if found else None))
    r.done()
    return out


def encode_commit(batch: CommitBatch) -> bytes:
    w = Writer().u32(len(batch.writes))
    for wr in batch.writes:
        w.u64(wr.oid).u64(wr.expected_version or 0).blob(wr.blob)
    w.u32(len(batch.root_updates))
    for name, oid in batch.root_updates:
        w.blob(name.encode("utf-8")).u64(oid)
    return w.getvalue()


def decode_commit(body: bytes) -> CommitBatch:
    r = Reader(body)
    writes = []
    for _ in range(r.u32()):
        oid, expected, blob = r.u64(), r.u64(), r.blob()
        writes.append(Write(oid, expected or NEW, blob))
    roots = []
    for _ in range(r.u32()):
        name = r.blob().decode("utf-8")
        roots.append((name, r.u64()))
    r.done()
    return CommitBatch(writes, roots)


def encode_versions(pairs: list[tuple[int, int]]) -> bytes:
    w = Writer().u32(len(pairs))
    for oid, version in pairs:
        w.u64(oid).u64(version)
    return w.getvalue()


def decode_versions(body: bytes) -> list[tuple[int, int]]:
    r = Reader(body)
    out = [(r.u64(), r.u64()) for _ in range(r.u32())]
    r.done()
    return out


def encode_oids(oids: list[int]) -> bytes:
    return encode_get_objects(oids)


decode_oids = decode_get_objects


def encode_error(code: int, message: str, oid: int = 0) -> bytes:
    return Writer().u8(code).u64(oid).blob(message.encode("utf-8")).getvalue()


def decode_error(body: bytes) -> tuple[int, int, str]:
    r = Reader(body)
    code, oid, msg = r.u8(), r.u64(), r.blob().decode("utf-8", "replace")
    return code, oid, msg
