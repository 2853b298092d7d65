"""Share one key range of a tree with someone who does not hold the master key.

A grant carries the bucket keys of the maximal subtrees lying wholly inside
the range, plus the in-range entries of the (at most two) boundary leaves
in the clear. Boundary branches themselves are never keyed to the
recipient: their secrets would unlock out-of-range siblings.

Every path root and boundary bucket is recorded with its version. A
recipient re-checks those versions on each operation, so a grant either
reads what the owner committed or fails with :class:`StaleGrant`.
"""

from __future__ import annotations

import os
from bisect import bisect_left
from collections.abc import Iterator
from dataclasses import dataclass, field
from pathlib import Path

from .btree import BTree, KeyRange, Node, Session, ValueRef, parse, walk
from .btree.node import KEY_SIZE
from .btree.tree import resolve_values
from .crypto import derive_child_key, oid_label, open_sealed
from .errors import NotFound, OutOfGrant, ProtocolError, StaleGrant
from .wire.client import StoreClient
from .wire.protocol import Reader, Writer

MAGIC = b"ZTGR"
VERSION = 1


@dataclass(frozen=True)
class PathKey:
    """Key to a whole subtree whose interval ``[lo, hi)`` lies inside the grant."""

    oid: int
    key: bytes
    version: int
    lo: bytes | None
    hi: bytes | None


@dataclass
class RangeGrant:
    range: KeyRange
    path_keys: list[PathKey] = field(default_factory=list)
    contour_pairs: list[tuple[bytes, bytes | ValueRef]] = field(default_factory=list)
    boundary: list[tuple[int, int]] = field(default_factory=list)  # (oid, version)
    root_hint: int = 0

    def key_count(self) -> int:
        return len(self.path_keys)

    def to_bytes(self) -> bytes:
        w = Writer()
        w.parts.append(MAGIC)
        w.u8(VERSION)
        _opt(w, self.range.start)
        _opt(w, self.range.stop)
        w.u64(self.root_hint)
        w.u32(len(self.path_keys))
        for pk in self.path_keys:
            w.u64(pk.oid)
            w.parts.append(pk.key)
            w.u64(pk.version)
            _opt(w, pk.lo)
            _opt(w, pk.hi)
        w.u32(len(self.boundary))
        for oid, version in self.boundary:
            w.u64(oid).u64(version)
        w.u32(len(self.contour_pairs))
        for k, v in self.contour_pairs:
            w.blob(k)
            if isinstance(v, ValueRef):
                w.u8(1).u64(v.oid)
                w.parts.append(v.key)
                w.u32(v.size)
            else:
                w.u8(0).blob(v)
        return w.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> RangeGrant:
        if data[:4] != MAGIC:
            raise ValueError("not a range grant file")
        r = Reader(data[4:])
        try:
            if r.u8() != VERSION:
                raise ValueError("unsupported grant version")
            grant = cls(KeyRange(_read_opt(r), _read_opt(r)))
            grant.root_hint = r.u64()
            for _ in range(r.u32()):
                oid = r.u64()
                key = bytes(r._take(KEY_SIZE))
                grant.path_keys.append(PathKey(oid, key, r.u64(), _read_opt(r), _read_opt(r)))
            grant.boundary = [(r.u64(), r.u64()) for _ in range(r.u32())]
            for _ in range(r.u32()):
                k = r.blob()
                if r.u8() == 1:
                    oid = r.u64()
                    vkey = bytes(r._take(KEY_SIZE))
                    grant.contour_pairs.append((k, ValueRef(oid, vkey, r.u32())))
                else:
                    grant.contour_pairs.append((k, r.blob()))
            r.done()
        except ProtocolError as exc:
            raise ValueError(f"malformed grant file: {exc}") from None
        return grant

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | os.PathLike) -> RangeGrant:
        return cls.from_bytes(Path(path).read_bytes())


def _opt(w: Writer, b: bytes | None) -> None:
    if b is None:
        w.u8(0)
    else:
        w.u8(1).blob(b)


def _read_opt(r: Reader) -> bytes | None:
    return r.blob() if r.u8() else None


def _cover(tree: BTree, rng: KeyRange, visit) -> None:
    """Walk the two boundary paths, calling ``visit(node, parent, index, lo, hi, covered)``.

    Covered subtrees are reported but not descended into.
    """
    if not tree.root or rng.is_empty():
        return

    def expand(node: Node, ctx):
        parent, index, lo, hi = ctx
        if rng.covers(lo, hi):
            visit(node, parent, index, lo, hi, True)
            return []
        visit(node, parent, index, lo, hi, False)
        if node.leaf:
            return []
        out = []
        for i, child in enumerate(node.children):
            clo, chi = node.child_bounds(i, lo, hi)
            if rng.intersects(clo, chi):
                out.append((child, node.child_key(i), (node, i, clo, chi)))
        return out

    walk(tree.session, [(tree.root, tree.root_key(), (None, -1, None, None))], expand)


def grant_range(tree: BTree, rng: KeyRange) -> RangeGrant:
    """Build a grant for ``rng``: one exchange per level along the two boundary paths."""
    grant = RangeGrant(rng, root_hint=tree.root)

    def visit(node, parent, index, lo, hi, covered):
        if covered:
            grant.path_keys.append(PathKey(node.oid, node.key, node.version, lo, hi))
            return
        grant.boundary.append((node.oid, node.version))
        if node.leaf:
            grant.contour_pairs.extend((k, v) for k, v in zip(node.keys, node.values) if k in rng)

    _cover(tree, rng, visit)
    grant.path_keys.sort(key=lambda pk: (pk.lo is not None, pk.lo or b""))
    grant.contour_pairs.sort(key=lambda kv: kv[0])
    return grant


def revoke(tree: BTree, rng: KeyRange) -> None:
    """Re-key everything a grant for ``rng`` could unlock; stages changes on the session.

    Every node inside a covered subtree gets a fresh child secret and a new
    key, each boundary parent gets a fresh secret (so covered roots move to
    new keys), and in-range large values are copied under fresh keys. Inline
    contour entries were disclosed in the grant itself and stay disclosed.
    """
    session = tree.session
    covered_roots: list[tuple[Node, Node | None, int]] = []
    boundary: dict[int, Node] = {}

    def visit(node, parent, index, lo, hi, covered):
        if covered:
            covered_roots.append((node, parent, index))
        else:
            boundary[node.oid] = node

    _cover(tree, rng, visit)
    if not covered_roots and not boundary:
        return
    session.touch(tree)
    inner: list[Node] = []

    def gather(node: Node, _):
        inner.append(node)
        return [] if node.leaf else [(c, node.child_key(i), None) for i, c in enumerate(node.children)]

    walk(session, [(n.oid, n.key, None) for n, _, _ in covered_roots], gather, pin=True)
    by_oid = {n.oid: n for n in inner}
    for node in inner:
        node.secret = os.urandom(KEY_SIZE)
        session.mark_dirty(node)
    for node in inner:
        for i, c in enumerate(node.children):
            by_oid[c].key = node.child_key(i)
        if node.leaf:
            _rekey_values(session, node, range(len(node.keys)))
    for node in boundary.values():
        if node.leaf:
            _rekey_values(session, node, [i for i, k in enumerate(node.keys) if k in rng])
    rotated: set[int] = set()
    for node, parent, _ in covered_roots:
        if parent is None:
            _relocate_root(tree, by_oid[node.oid])
        elif parent.oid not in rotated:
            rotated.add(parent.oid)
            old = parent.secret
            parent.secret = os.urandom(KEY_SIZE)
            session.mark_dirty(parent)
            for i, c in enumerate(parent.children):
                loaded = by_oid.get(c) or boundary.get(c)
                if loaded is not None:
                    loaded.key = parent.child_key(i)
                    session.mark_dirty(loaded)
                else:
                    session.move(c, derive_child_key(old, oid_label(c)), parent.child_key(i))


def _rekey_values(session: Session, leaf: Node, positions) -> None:
    refs = [(i, leaf.values[i]) for i in positions if isinstance(leaf.values[i], ValueRef)]
    if not refs:
        return
    data = session.fetch_values([v for _, v in refs])
    for i, ref in refs:
        oid = session.new_oid()
        key = derive_child_key(leaf.secret, oid_label(oid))
        session.stage_value(oid, key, data[ref.oid])
        leaf.values[i] = ValueRef(oid, key, ref.size)
    session.mark_dirty(leaf)


def _relocate_root(tree: BTree, node: Node) -> None:
    """The whole tree was shared: copy the root to a fresh oid, whose key the grant never held."""
    copy = Node(node.leaf, node.secret)
    copy.keys, copy.children, copy.values, copy.size = node.keys, node.children, node.values, node.size
    tree.session.adopt(copy, b"")
    copy.key = tree.root_key(copy.oid)
    tree.session._dirty.pop(node.oid, None)
    tree.root = copy.oid


class RestrictedHandle:
    """Read-only view of a granted range, opened without the owner's master key."""

    def __init__(self, grant: RangeGrant, client: StoreClient):
        self.grant = grant
        self.client = client
        self.session = Session(client, b"\x00" * KEY_SIZE, cache_bytes=0)
        self._contour_keys = [k for k, _ in grant.contour_pairs]

    @property
    def range(self) -> KeyRange:
        return self.grant.range

    def _check(self, rng: KeyRange) -> None:
        if not rng.within(self.grant.range):
            raise OutOfGrant(f"{rng} is outside the granted range")

    def _fetch_roots(self, wanted: list[PathKey]) -> dict[int, Node]:
        """First exchange of every operation: the needed path roots plus the boundary buckets.

        A split of a covered root or any edit of a boundary bucket shows up
        as a version change here, before anything is returned.
        """
        expected = dict(self.grant.boundary)
        expected.update((pk.oid, pk.version) for pk in wanted)
        records = self.client.get_objects(sorted(expected)) if expected else []
        for rec in records:
            if rec.blob is None or rec.version != expected[rec.oid]:
                raise StaleGrant(f"bucket {rec.oid} changed since the grant was issued")
        blobs = {rec.oid: rec.blob for rec in records}
        nodes = {}
        for pk in wanted:
            node = parse(open_sealed(pk.key, pk.oid, blobs[pk.oid]))
            node.oid, node.version, node.key = pk.oid, pk.version, pk.key
            nodes[pk.oid] = node
        return nodes

    def _subtrees(self, rng: KeyRange) -> list[PathKey]:
        return [pk for pk in self.grant.path_keys if rng.intersects(pk.lo, pk.hi)]

    def _collect(self, targets: list[tuple[PathKey, KeyRange]]) -> list[tuple[bytes, bytes | ValueRef]]:
        roots = self._fetch_roots([pk for pk, _ in targets])
        out: list[tuple[bytes, bytes | ValueRef]] = []

        def expand(node: Node, rng: KeyRange):
            if node.leaf:
                i = bisect_left(node.keys, rng.start) if rng.start is not None else 0
                j = bisect_left(node.keys, rng.stop) if rng.stop is not None else len(node.keys)
                out.extend(zip(node.keys[i:j], node.values[i:j]))
                return []
            first = node.child_index(rng.start) if rng.start is not None else 0
            last = bisect_left(node.keys, rng.stop) if rng.stop is not None else len(node.keys)
            return [(node.children[i], node.child_key(i), rng) for i in range(first, last + 1)]

        frontier = []
        for pk, rng in targets:
            frontier.extend(expand(roots[pk.oid], rng))
        walk(self.session, frontier, expand)
        return out

    def _contour(self, rng: KeyRange) -> list[tuple[bytes, bytes | ValueRef]]:
        keys = self._contour_keys
        i = bisect_left(keys, rng.start) if rng.start is not None else 0
        j = bisect_left(keys, rng.stop) if rng.stop is not None else len(keys)
        return self.grant.contour_pairs[i:j]

    def search(self, key: bytes) -> bytes:
        if key not in self.grant.range:
            raise OutOfGrant(f"key {key!r} is outside the granted range")
        rng = KeyRange.single(key)
        found = self._collect([(pk, rng) for pk in self._subtrees(rng)])
        found += [(k, v) for k, v in self._contour(rng)]
        if not found:
            raise NotFound(key)
        return resolve_values(self.session, found[:1])[0][1]

    def get(self, key: bytes, default=None):
        try:
            return self.search(key)
        except NotFound:
            return default

    def range_fetch_all(self, rng: KeyRange | None = None) -> list[tuple[bytes, bytes]]:
        """Every granted entry in ``rng``: one exchange per subtree level, all subtrees at once."""
        rng = self.grant.range if rng is None else rng
        self._check(rng)
        entries = self._collect([(pk, rng) for pk in self._subtrees(rng)]) + self._contour(rng)
        entries = [(k, v) for k, v in entries if k in self.grant.range]
        entries.sort(key=lambda kv: kv[0])
        return resolve_values(self.session, entries)

    def iter_range(self, rng: KeyRange | None = None) -> Iterator[tuple[bytes, bytes]]:
        """Lazy variant: downloads one granted subtree at a time, in key order."""
        rng = self.grant.range if rng is None else rng
        self._check(rng)
        pieces: list[tuple[bytes, object]] = [(pk.lo or b"", pk) for pk in self._subtrees(rng)]
        pieces += [(k, (k, v)) for k, v in self._contour(rng)]
        pieces.sort(key=lambda p: p[0])
        for _, piece in pieces:
            if isinstance(piece, PathKey):
                entries = [(k, v) for k, v in self._collect([(piece, rng)]) if k in self.grant.range]
                yield from resolve_values(self.session, sorted(entries, key=lambda kv: kv[0]))
            else:
                yield from resolve_values(self.session, [piece])

    def range_iterate(self, rng: KeyRange | None, limit: int) -> list[tuple[bytes, bytes]]:
        if limit < 1:
            raise ValueError("limit must be >= 1")
        out = []
        for pair in self.iter_range(rng):
            out.append(pair)
            if len(out) >= limit:
                break
        return out


def open_with_grant(grant: RangeGrant, client: StoreClient) -> RestrictedHandle:
    return RestrictedHandle(grant, client)
