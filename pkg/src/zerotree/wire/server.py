"""Threaded TCP front end for :class:`ObjectStore`."""

from __future__ import annotations

import logging
import os
import socketserver
import threading

from ..errors import BindFailure, Conflict, NotFound, ProtocolError
from . import protocol as p
from .store import ObjectStore

log = logging.getLogger("zerotree.server")

STORE_ENV = "ZEROTREE_STORE"


def handle_message(store: ObjectStore, msg_type: int, body: bytes) -> tuple[int, bytes]:
    """Dispatch one request; every failure becomes an ERROR frame."""
    try:
        if msg_type == p.GET_OBJECTS:
            oids = p.decode_get_objects(body)
            if not oids:
                raise ProtocolError("GET_OBJECTS needs at least one oid")
            return p.GET_OBJECTS_RESP, p.encode_objects_response(store.get_objects(oids))
        if msg_type == p.COMMIT:
            return p.COMMIT_RESP, p.encode_versions(store.commit(p.decode_commit(body)))
        if msg_type == p.GET_ROOT:
            r = p.Reader(body)
            name = r.blob().decode("utf-8")
            r.done()
            try:
                oid = store.get_root(name)
            except NotFound:
                oid = 0
            return p.GET_ROOT_RESP, p.Writer().u64(oid).getvalue()
        if msg_type == p.ALLOCATE:
            r = p.Reader(body)
            count = r.u32()
            r.done()
            return p.ALLOCATE_RESP, p.encode_oids(store.allocate(count))
        raise ProtocolError(f"unknown message type {msg_type:#x}")
    except Conflict as exc:
        return p.ERROR, p.encode_error(p.ERR_CONFLICT, str(exc), exc.oid)
    except ProtocolError as exc:
        return p.ERROR, p.encode_error(p.ERR_BAD_REQUEST, str(exc))
    except Exception as exc:  # noqa: BLE001 - a broken request must not kill the session
        log.exception("internal error handling message %#x", msg_type)
        return p.ERROR, p.encode_error(p.ERR_INTERNAL, type(exc).__name__)


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        store: ObjectStore = self.server.store  # type: ignore[attr-defined]
        log.debug("session opened from %s", self.client_address)
        while True:
            try:
                msg_type, body = p.read_frame(self.rfile)
            except (EOFError, ConnectionError):
                break
            except ProtocolError as exc:
                self.wfile.write(p.encode_frame(p.ERROR, p.encode_error(p.ERR_BAD_REQUEST, str(exc))))
                break
            resp_type, resp = handle_message(store, msg_type, body)
            try:
                self.wfile.write(p.encode_frame(resp_type, resp))
                self.wfile.flush()
            except ConnectionError:
                break


class BlobServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], store: ObjectStore):
        self.store = store
        try:
            super().__init__(address, _Handler)
        except OSError as exc:
            raise BindFailure(f"cannot bind {address[0]}:{address[1]}: {exc.strerror}") from exc

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[:2]


def resolve_store_path(store_path: str | None) -> str:
    path = os.environ.get(STORE_ENV) or store_path
    if not path:
        raise ValueError(f"no store path: pass one or set {STORE_ENV}")
    return path


def serve(host: str, port: int, store_path: str | None, fsync: bool = True) -> None:
    """Run the blob server until the process is killed."""
    store = ObjectStore(resolve_store_path(store_path), fsync=fsync)
    server = BlobServer((host, port), store)
    log.info("serving on %s:%d", *server.address)
    try:
        server.serve_forever()
    finally:
        server.server_close()
        store.close()


def start_background(store: ObjectStore, host: str = "127.0.0.1", port: int = 0) -> BlobServer:
    """Start a server on a daemon thread (port 0 picks a free port)."""
    server = BlobServer((host, port), store)
    threading.Thread(target=server.serve_forever, daemon=True, name="zerotree-server").start()
    return server
