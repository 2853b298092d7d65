"""Client session: decrypting fetches, the bucket cache, and staged commits.

A session owns one server connection and one cache. Trees opened on the
same session share a transaction, so changes to several indexes land in a
single atomic commit.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Iterable
from typing import TYPE_CHECKING, TypeVar

from ..crypto import derive_child_key, open_sealed, seal
from ..errors import Conflict, ZeroTreeError
from ..wire.protocol import CommitBatch, Write
from .cache import ClientCache
from .node import Node, parse, serialize

if TYPE_CHECKING:
    from ..wire.client import StoreClient
    from .tree import BTree

log = logging.getLogger(__name__)

T = TypeVar("T")

OID_CHUNK = 256


class Session:
    def __init__(self, client: StoreClient, master_key: bytes, cache_bytes: int = 5 * 1024 * 1024):
        self.client = client
        self.master_key = master_key
        self.cache = ClientCache(cache_bytes)
        self._oid_pool: list[int] = []
        self._dirty: dict[int, Node] = {}
        self._pinned: dict[int, Node] = {}
        self._rekey: dict[int, tuple[bytes, bytes]] = {}
        self._new_values: dict[int, tuple[bytes, bytes]] = {}
        self._trees: dict[int, BTree] = {}

    @property
    def transport(self):
        return self.client.transport

    def index_key(self, name: str) -> bytes:
        return derive_child_key(self.master_key, b"index:" + name.encode("utf-8"))

    # -- reads ------------------------------------------------------------

    def fetch(self, wanted: Iterable[tuple[int, bytes]], pin: bool = False) -> dict[int, Node]:
        """Return decrypted nodes for ``(oid, key)`` pairs using one exchange for all misses."""
        found: dict[int, Node] = {}
        missing: dict[int, bytes] = {}
        for oid, key in wanted:
            if oid in found or oid in missing:
                continue
            node = self._dirty.get(oid) or self._pinned.get(oid) or self.cache.get(oid)
            if node is None:
                missing[oid] = key
            else:
                found[oid] = node
                if pin and oid not in self._dirty:
                    self._pinned[oid] = node
        if missing:
            for rec in self.client.get_objects(list(missing)):
                if rec.blob is None:
                    raise ZeroTreeError(f"bucket {rec.oid} is missing on the server")
                key = missing[rec.oid]
                old_key = self._rekey.pop(rec.oid, (key, key))[0]
                node = parse(open_sealed(old_key, rec.oid, rec.blob))
                node.oid, node.version, node.key = rec.oid, rec.version, key
                if old_key != key:
                    self._dirty[rec.oid] = node
                self.cache.put(node)
                if pin:
                    self._pinned[rec.oid] = node
                found[rec.oid] = node
        return found

    def fetch_values(self, refs: Iterable) -> dict[int, bytes]:
        """Resolve out-of-line values in one exchange."""
        out: dict[int, bytes] = {}
        missing = {}
        for ref in refs:
            staged = self._new_values.get(ref.oid)
            if staged is not None:
                out[ref.oid] = staged[1]
            else:
                missing[ref.oid] = ref.key
        if missing:
            for rec in self.client.get_objects(list(missing)):
                if rec.blob is None:
                    raise ZeroTreeError(f"value object {rec.oid} is missing on the server")
                out[rec.oid] = open_sealed(missing[rec.oid], rec.oid, rec.blob)
        return out

    # -- staging ----------------------------------------------------------

    def new_oid(self) -> int:
        if not self._oid_pool:
            self._oid_pool = self.client.allocate(OID_CHUNK)[::-1]
        return self._oid_pool.pop()

    def reserve(self, count: int) -> None:
        """Top up the oid pool so ``count`` new objects need no further exchange."""
        short = count - len(self._oid_pool)
        if short > 0:
            self._oid_pool = self.client.allocate(max(short, OID_CHUNK))[::-1] + self._oid_pool

    def adopt(self, node: Node, key: bytes) -> Node:
        """Register a brand-new node under a fresh oid."""
        node.oid = self.new_oid()
        node.key = key
        node.version = 0
        self._dirty[node.oid] = node
        return node

    def mark_dirty(self, node: Node) -> None:
        self._dirty[node.oid] = node

    def is_loaded(self, oid: int) -> Node | None:
        return self._dirty.get(oid) or self._pinned.get(oid) or (self.cache.get(oid) if oid in self.cache else None)

    def move(self, oid: int, old_key: bytes, new_key: bytes) -> None:
        """A bucket changed parents: re-encrypt it under ``new_key`` at commit."""
        node = self.is_loaded(oid)
        if node is not None:
            node.key = new_key
            self._dirty[oid] = node
        elif oid in self._rekey:
            self._rekey[oid] = (self._rekey[oid][0], new_key)
        else:
            self._rekey[oid] = (old_key, new_key)

    def stage_value(self, oid: int, key: bytes, data: bytes) -> None:
        self._new_values[oid] = (key, data)

    def touch(self, tree: BTree) -> None:
        self._trees[id(tree)] = tree

    def has_changes(self) -> bool:
        return bool(self._dirty or self._rekey or self._new_values
                    or any(t.root != t.committed_root for t in self._trees.values()))

    # -- commit -----------------------------------------------------------

    def commit(self) -> None:
        """Write every staged change in one atomic batch; rolls back on failure."""
        if not self.has_changes():
            self._finish()
            return
        try:
            batch = CommitBatch()
            written: list[Node] = []
            if self._rekey:
                moved = dict(self._rekey)
                for rec in self.client.get_objects(list(moved)):
                    if rec.blob is None:
                        raise Conflict(rec.oid, f"bucket {rec.oid} vanished")
                    old_key, new_key = moved[rec.oid]
                    plain = open_sealed(old_key, rec.oid, rec.blob)
                    batch.writes.append(Write(rec.oid, rec.version, seal(new_key, rec.oid, plain)))
            for node in self._dirty.values():
                blob = seal(node.key, node.oid, serialize(node))
                batch.writes.append(Write(node.oid, node.version or None, blob))
                written.append(node)
            for oid, (key, data) in self._new_values.items():
                batch.writes.append(Write(oid, None, seal(key, oid, data)))
            for tree in self._trees.values():
                if tree.name is not None and tree.root and tree.root != tree.committed_root:
                    batch.root_updates.append((tree.name, tree.root))
            versions = dict(self.client.commit(batch)) if (batch.writes or batch.root_updates) else {}
        except BaseException:
            self.rollback()
            raise
        for node in written:
            node.version = versions[node.oid]
            self.cache.put(node)
        for oid in self._rekey:
            self.cache.discard(oid)
        for tree in self._trees.values():
            tree.committed_root = tree.root
        self._finish()

    def rollback(self) -> None:
        for oid in list(self._dirty) + list(self._pinned):
            self.cache.discard(oid)
        for tree in self._trees.values():
            tree.root = tree.committed_root
            tree.reset()
        self._finish()

    def _finish(self) -> None:
        self._dirty.clear()
        self._pinned.clear()
        self._rekey.clear()
        self._new_values.clear()
        self._trees.clear()

    def transact(self, fn: Callable[[], T], attempts: int = 5) -> T:
        """Run ``fn`` and commit, retrying the whole transaction on Conflict."""
        for attempt in range(attempts):
            try:
                result = fn()
                self.commit()
                return result
            except Conflict as exc:
                log.info("conflict on %d, retrying (%d/%d)", exc.oid, attempt + 1, attempts)
                self.rollback()
                self.cache.clear()
                if attempt == attempts - 1:
                    raise
        raise AssertionError("unreachable")
