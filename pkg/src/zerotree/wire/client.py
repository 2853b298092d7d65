"""Client side of the blob protocol.

A transport moves one request frame and one response frame; it counts
exchanges and bytes so tests can assert round-trip laws. :class:`StoreClient`
turns the message codecs into method calls.
"""

from __future__ import annotations

import socket
import threading

from ..errors import Conflict, NotFound, ProtocolError, ZeroTreeError
from . import protocol as p
from .server import handle_message
from .store import ObjectStore


class Transport:
    def __init__(self) -> None:
        self.exchanges = 0
        self.bytes_sent = 0
        self.bytes_received = 0

    def exchange(self, msg_type: int, body: bytes) -> tuple[int, bytes]:
        request = p.encode_frame(msg_type, body)
        response = self._roundtrip(request)
        self.exchanges += 1
        self.bytes_sent += len(request)
        self.bytes_received += len(response)
        return response[4], response[5:]

    def _roundtrip(self, frame: bytes) -> bytes:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def reset_counters(self) -> None:
        self.exchanges = self.bytes_sent = self.bytes_received = 0


class TcpTransport(Transport):
    def __init__(self, host: str, port: int, timeout: float | None = 30.0):
        super().__init__()
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.rfile = self.sock.makefile("rb")

    def _roundtrip(self, frame: bytes) -> bytes:
        self.sock.sendall(frame)
        head = self._read(4)
        return head + self._read(int.from_bytes(head, "big"))

    def _read(self, n: int) -> bytes:
        data = self.rfile.read(n)
        if len(data) != n:
            raise ConnectionError("server closed the connection")
        return data

    def close(self) -> None:
        self.rfile.close()
        self.sock.close()


class LocalTransport(Transport):
    """In-process transport: same frames and codecs, no socket."""

    def __init__(self, store: ObjectStore):
        super().__init__()
        self.store = store
        self._lock = threading.Lock()

    def _roundtrip(self, frame: bytes) -> bytes:
        with self._lock:
            msg_type, body = frame[4], frame[5:]
            resp_type, resp = handle_message(self.store, msg_type, body)
        return p.encode_frame(resp_type, resp)


def parse_address(address: str) -> tuple[str, int]:
    host, _, port = address.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"expected host:port, got {address!r}")
    return host, int(port)


class StoreClient:
    """Typed calls over a transport. Not safe for concurrent use."""

    def __init__(self, transport: Transport):
        self.transport = transport

    @classmethod
    def connect(cls, address: str) -> StoreClient:
        return cls(TcpTransport(*parse_address(address)))

    def close(self) -> None:
        self.transport.close()

    def _call(self, msg_type: int, body: bytes, expect: int) -> bytes:
        resp_type, resp = self.transport.exchange(msg_type, body)
        if resp_type == p.ERROR:
            code, oid, message = p.decode_error(resp)
            if code == p.ERR_CONFLICT:
                raise Conflict(oid, message)
            if code == p.ERR_NOT_FOUND:
                raise NotFound(message)
            if code == p.ERR_BAD_REQUEST:
                raise ProtocolError(message)
            raise ZeroTreeError(f"server error: {message}")
        if resp_type != expect:
            raise ProtocolError(f"unexpected response type {resp_type:#x}")
        return resp

    def get_objects(self, oids: list[int]) -> list[p.ObjectRecord]:
        """Fetch many objects in exactly one exchange; missing ones have ``blob=None``."""
        return p.decode_objects_response(
            self._call(p.GET_OBJECTS, p.encode_get_objects(list(oids)), p.GET_OBJECTS_RESP))

    def commit(self, batch: p.CommitBatch) -> list[tuple[int, int]]:
        return p.decode_versions(self._call(p.COMMIT, p.encode_commit(batch), p.COMMIT_RESP))

    def get_root(self, index_name: str) -> int:
        body = p.Writer().blob(index_name.encode("utf-8")).getvalue()
        r = p.Reader(self._call(p.GET_ROOT, body, p.GET_ROOT_RESP))
        oid = r.u64()
        if oid == 0:
            raise NotFound(f"no index named {index_name!r}")
        return oid

    def allocate(self, count: int) -> list[int]:
        body = p.Writer().u32(count).getvalue()
        return p.decode_oids(self._call(p.ALLOCATE, body, p.ALLOCATE_RESP))
