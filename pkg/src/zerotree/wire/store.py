"""Append-only object log with optimistic single-version commits.

The server never interprets blob bytes: it stores them, versions them and
hands them back. State is one log file of CRC-framed records; an in-memory
map oid -> (version, offset, length) is rebuilt by scanning it on startup.
"""

from __future__ import annotations

import logging
import os
import struct
import threading
import zlib
from pathlib import Path

from ..errors import Conflict, CorruptLog, NotFound, ProtocolError
from .protocol import CommitBatch, ObjectRecord, Reader, Writer

log = logging.getLogger("zerotree.server")

LOG_NAME = "objects.log"

REC_COMMIT = 1
REC_ALLOC = 2

_HEADER = struct.Struct(">IB")  # length of (type + payload), type
_CRC = struct.Struct(">I")


class ObjectStore:
    """Durable oid -> (version, blob) map with atomic batch commits."""

    def __init__(self, path: str | os.PathLike, fsync: bool = True):
        self.dir = Path(path)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.path = self.dir / LOG_NAME
        self.fsync = fsync
        self._objects: dict[int, tuple[int, int, int]] = {}
        self._roots: dict[str, int] = {}
        self._next_oid = 1
        self._lock = threading.Lock()
        self._fd = os.open(self.path, os.O_RDWR | os.O_CREAT | os.O_APPEND, 0o600)
        self._end = self._recover()

    def close(self) -> None:
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1

    def __enter__(self) -> ObjectStore:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- recovery ---------------------------------------------------------

    def _recover(self) -> int:
        size = os.fstat(self._fd).st_size
        pos = 0
        while pos < size:
            if pos + _HEADER.size > size:
                break
            length, rtype = _HEADER.unpack(os.pread(self._fd, _HEADER.size, pos))
            end = pos + 4 + length + _CRC.size
            if length < 1 or end > size:
                break
            body = os.pread(self._fd, length + _CRC.size, pos + 4)
            (crc,) = _CRC.unpack(body[-_CRC.size:])
            if zlib.crc32(body[:-_CRC.size]) != crc:
                raise CorruptLog(f"{self.path}: checksum mismatch in record at offset {pos}")
            self._apply(rtype, body[1:-_CRC.size], pos + 4 + 1)
            pos = end
        if pos < size:
            # torn final write; it was never acknowledged
            log.warning("truncating %d torn bytes at end of %s", size - pos, self.path)
            os.ftruncate(self._fd, pos)
        return pos

    def _apply(self, rtype: int, payload: bytes, payload_offset: int) -> None:
        r = Reader(payload)
        if rtype == REC_ALLOC:
            self._next_oid = max(self._next_oid, r.u64())
        elif rtype == REC_COMMIT:
            for _ in range(r.u32()):
                oid, version, n = r.u64(), r.u64(), r.u32()
                self._objects[oid] = (version, payload_offset + r.pos, n)
                r.pos += n
                self._next_oid = max(self._next_oid, oid + 1)
            for _ in range(r.u32()):
                name = r.blob().decode("utf-8")
                self._roots[name] = r.u64()
        else:
            raise CorruptLog(f"unknown record type {rtype}")

    def _append(self, rtype: int, payload: bytes) -> int:
        body = bytes((rtype,)) + payload
        record = _CRC.pack(len(body)) + body + _CRC.pack(zlib.crc32(body))
        offset = self._end
        os.write(self._fd, record)
        if self.fsync:
            os.fsync(self._fd)
        self._end += len(record)
        return offset + 4 + 1

    # -- operations -------------------------------------------------------

    def get_objects(self, oids: list[int]) -> list[ObjectRecord]:
        out = []
        for oid in oids:
            entry = self._objects.get(oid)
            if entry is None:
                out.append(ObjectRecord(oid, 0, None))
            else:
                version, offset, n = entry
                out.append(ObjectRecord(oid, version, os.pread(self._fd, n, offset)))
        return out

    def version(self, oid: int) -> int | None:
        entry = self._objects.get(oid)
        return entry[0] if entry else None

    def get_root(self, name: str) -> int:
        try:
            return self._roots[name]
        except KeyError:
            raise NotFound(f"no index named {name!r}") from None

    def allocate(self, count: int) -> list[int]:
        if count < 1 or count > 1_000_000:
            raise ProtocolError("allocation count out of range")
        with self._lock:
            first = self._next_oid
            self._next_oid += count
            self._append(REC_ALLOC, Writer().u64(self._next_oid).getvalue())
        return list(range(first, first + count))

    def commit(self, batch: CommitBatch) -> list[tuple[int, int]]:
        if not batch.writes and not batch.root_updates:
            raise ProtocolError("empty commit")
        with self._lock:
            seen: set[int] = set()
            resolved: list[tuple[int, int]] = []
            fresh = self._next_oid
            for w in batch.writes:
                if w.expected_version is None:
                    if w.oid == 0:
                        oid, fresh = fresh, fresh + 1
                    elif w.oid in self._objects:
                        raise Conflict(w.oid, f"object {w.oid} already exists")
                    elif w.oid >= self._next_oid:
                        raise ProtocolError(f"object id {w.oid} was never allocated")
                    else:
                        oid = w.oid
                    version = 1
                else:
                    oid = w.oid
                    live = self.version(oid)
                    if live != w.expected_version:
                        raise Conflict(oid)
                    version = live + 1
                if oid in seen:
                    raise ProtocolError(f"object {oid} written twice in one batch")
                seen.add(oid)
                resolved.append((oid, version))
            for name, root in batch.root_updates:
                if root not in seen and root not in self._objects:
                    raise ProtocolError(f"root of {name!r} points at unwritten object {root}")

            payload = Writer().u32(len(batch.writes))
            for (oid, version), w in zip(resolved, batch.writes):
                payload.u64(oid).u64(version).blob(w.blob)
            payload.u32(len(batch.root_updates))
            for name, root in batch.root_updates:
                payload.blob(name.encode("utf-8")).u64(root)
            data = payload.getvalue()
            base = self._append(REC_COMMIT, data)

            # second pass over the payload gives each blob's file offset
            r = Reader(data)
            r.u32()
            for _ in resolved:
                oid, version, n = r.u64(), r.u64(), r.u32()
                self._objects[oid] = (version, base + r.pos, n)
                r.pos += n
            for name, root in batch.root_updates:
                self._roots[name] = root
            self._next_oid = max(self._next_oid, fresh)
        log.info("commit: %d objects, %d root updates", len(resolved), len(batch.root_updates))
        return resolved

    def oids(self) -> list[int]:
        return sorted(self._objects)
