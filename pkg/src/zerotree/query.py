"""Multi-index queries over encrypted B-Trees.

Index kinds kept in a catalog (itself a B-Tree named ``<ns>__catalog``):

* ``field``      BTree(value -> TreeSet(ids)); each id-set is a nested tree of 8-byte ids
* ``sort``       BTree(id -> value), used to order AND results
* ``composite``  BTree((v1, v2) -> tree of (v3, id)); answers v1 = a & v2 = b ordered by v3
* ``unfolded``   one tree of (wid, id) tuples with empty values

All reads go level by level, so the cost of a query is counted in tree
heights rather than in result sizes.
"""

from __future__ import annotations

import heapq
import json
import logging
from collections.abc import Iterable, Iterator
from dataclasses import dataclass
from typing import Any

from .btree import (BTree, KeyRange, Session, encode_composite, encode_int, multi_estimate, multi_get, multi_range,
                    open_cursors)
from .btree.keys import decode_composite, decode_uint, encode_uint, successor
from .crypto import derive_child_key
from .errors import MissingIndex

log = logging.getLogger(__name__)

FIELD = "field"
SORT = "sort"
COMPOSITE = "composite"
UNFOLDED = "unfolded"
KINDS = (FIELD, SORT, COMPOSITE, UNFOLDED)

# estimates are approximate; only switch to cond_b when it is clearly smaller
TIE_MARGIN = 1.25

_TAG_INT, _TAG_STR, _TAG_BYTES = 1, 2, 3


def encode_value(value: Any) -> bytes:
    """Order-preserving, type-tagged field value encoding (ints < strings < bytes)."""
    if isinstance(value, bool):
        raise TypeError("booleans are not indexable; use 0/1")
    if isinstance(value, int):
        return bytes((_TAG_INT,)) + encode_int(value)
    if isinstance(value, str):
        return bytes((_TAG_STR,)) + value.encode("utf-8")
    if isinstance(value, (bytes, bytearray)):
        return bytes((_TAG_BYTES,)) + bytes(value)
    raise TypeError(f"cannot index a {type(value).__name__}")


def decode_value(data: bytes) -> Any:
    tag, body = data[0], data[1:]
    if tag == _TAG_INT:
        return int.from_bytes(body, "big") - (1 << 63)
    if tag == _TAG_STR:
        return body.decode("utf-8")
    if tag == _TAG_BYTES:
        return body
    raise ValueError(f"unknown value tag {tag}")


@dataclass(frozen=True)
class Condition:
    """``field = value`` (a single-key range) or ``field in [start, stop)``."""

    field: str
    op: str
    range: KeyRange

    @classmethod
    def eq(cls, field: str, value: Any) -> Condition:
        return cls(field, "eq", KeyRange.single(encode_value(value)))

    @classmethod
    def between(cls, field: str, low: Any = None, high: Any = None, *,
                low_inclusive: bool = True, high_inclusive: bool = True) -> Condition:
        if low is None and high is None:
            raise ValueError("a range condition needs at least one bound")
        lo = encode_value(low) if low is not None else None
        hi = encode_value(high) if high is not None else None
        rng = KeyRange.closed(lo, hi, low_inclusive=low_inclusive, high_inclusive=high_inclusive)
        # an open end stays within the bound's own type
        tag = (lo or hi)[0]
        start = rng.start if rng.start is not None else bytes((tag,))
        stop = rng.stop if rng.stop is not None else bytes((tag + 1,))
        return cls(field, "range", KeyRange(start, stop))

    @property
    def value(self) -> bytes:
        if self.op != "eq":
            raise ValueError("only equality conditions have a single value")
        return self.range.start


class SetIndex:
    """BTree(value -> TreeSet(ids)). Each id-set is a nested tree keyed by 8-byte ids."""

    def __init__(self, session: Session, name: str, bucket_size: int, compression: float):
        self.session = session
        self.outer = BTree(session, name, bucket_size=bucket_size, compression=compression)
        self.bucket_size = bucket_size
        self.compression = compression

    def set_tree(self, value: bytes, root: int = 0) -> BTree:
        key = derive_child_key(self.outer.master_key, b"set:" + value)
        return BTree(self.session, None, master_key=key, root=root,
                     bucket_size=self.bucket_size, compression=self.compression)

    def _current(self, value: bytes) -> BTree:
        raw = self.outer.get(value)
        return self.set_tree(value, decode_uint(raw) if raw else 0)

    def add(self, value: bytes, member: bytes, payload: bytes = b"") -> None:
        tree = self._current(value)
        before = tree.root
        tree.insert(member, payload)
        if tree.root != before:
            self.outer.insert(value, encode_uint(tree.root))

    def remove(self, value: bytes, member: bytes) -> bool:
        tree = self._current(value)
        before = tree.root
        if not tree.delete(member):
            return False
        root = tree.root_node()
        if root.leaf and not root.keys:
            self.outer.delete(value)
        elif tree.root != before:
            self.outer.insert(value, encode_uint(tree.root))
        return True

    def sets(self, rng: KeyRange) -> list[tuple[bytes, BTree]]:
        """Resolve the id-set trees for every value in ``rng`` (H_outer exchanges)."""
        if rng.stop == successor(rng.start or b"") and rng.start is not None:
            raw = multi_get([(self.outer, [rng.start])])[0][rng.start]
            entries = [(rng.start, raw)] if raw else []
        else:
            entries = self.outer.range_fetch_all(rng)
        return [(v, self.set_tree(v, decode_uint(raw))) for v, raw in entries]


class IndexCatalog:
    """Named indexes of one namespace, opened on one session."""

    def __init__(self, session: Session, namespace: str = "", *, bucket_size: int = 8192,
                 compression: float = 3.0):
        self.session = session
        self.ns = namespace
        self.bucket_size = bucket_size
        self.compression = compression
        self._meta = BTree(session, f"{namespace}__catalog", bucket_size=bucket_size, compression=compression)
        self._entries: dict[str, dict] | None = None
        self._open: dict[str, Any] = {}

    def _load(self) -> dict[str, dict]:
        if self._entries is None:
            self._entries = {k.decode(): json.loads(v) for k, v in self._meta.items()}
        return self._entries

    def entries(self) -> dict[str, dict]:
        return dict(self._load())

    def _name(self, kind: str, label: str) -> str:
        return f"{self.ns}{kind}:{label}"

    def _register(self, kind: str, label: str, **meta) -> str:
        name = self._name(kind, label)
        entries = self._load()
        if name not in entries:
            entries[name] = {"kind": kind, **meta}
            self._meta.insert(name.encode(), json.dumps(entries[name], sort_keys=True).encode())
        return name

    def _lookup(self, kind: str, label: str, create: bool, **meta) -> str:
        name = self._name(kind, label)
        if name in self._load():
            return name
        if not create:
            raise MissingIndex(f"no {kind} index {label!r}")
        return self._register(kind, label, **meta)

    def field_index(self, field: str, create: bool = False) -> SetIndex:
        name = self._lookup(FIELD, field, create)
        if name not in self._open:
            self._open[name] = SetIndex(self.session, name, self.bucket_size, self.compression)
        return self._open[name]

    def sort_index(self, field: str, create: bool = False) -> BTree:
        name = self._lookup(SORT, field, create)
        if name not in self._open:
            self._open[name] = BTree(self.session, name, bucket_size=self.bucket_size,
                                     compression=self.compression)
        return self._open[name]

    def composite_index(self, v1: str, v2: str, v3: str, create: bool = False) -> SetIndex:
        name = self._lookup(COMPOSITE, f"{v1},{v2}>{v3}", create, fields=[v1, v2, v3])
        if name not in self._open:
            self._open[name] = SetIndex(self.session, name, self.bucket_size, self.compression)
        return self._open[name]

    def unfolded_index(self, label: str, create: bool = False) -> BTree:
        name = self._lookup(UNFOLDED, label, create)
        if name not in self._open:
            self._open[name] = BTree(self.session, name, bucket_size=self.bucket_size,
                                     compression=self.compression)
        return self._open[name]

    def add_composite(self, v1: str, v2: str, v3: str) -> None:
        self.composite_index(v1, v2, v3, create=True)

    def composites(self) -> list[tuple[str, str, str]]:
        return [tuple(m["fields"]) for m in self._load().values() if m["kind"] == COMPOSITE]

    # -- writes -----------------------------------------------------------

    def index_object(self, oid: int, record: dict[str, Any]) -> None:
        """Add ``record`` under id ``oid`` to every applicable index (staged, not committed)."""
        ident = encode_uint(oid)
        encoded = {f: encode_value(v) for f, v in record.items()}
        for f, v in encoded.items():
            self.field_index(f, create=True).add(v, ident)
            self.sort_index(f, create=True).insert(ident, v)
        for v1, v2, v3 in self.composites():
            if v1 in encoded and v2 in encoded and v3 in encoded:
                group = encode_composite([encoded[v1], encoded[v2]])
                self.composite_index(v1, v2, v3).add(group, encode_composite([encoded[v3], ident]))

    def remove_object(self, oid: int, record: dict[str, Any]) -> None:
        ident = encode_uint(oid)
        encoded = {f: encode_value(v) for f, v in record.items()}
        for f, v in encoded.items():
            self.field_index(f).remove(v, ident)
            self.sort_index(f).delete(ident)
        for v1, v2, v3 in self.composites():
            if v1 in encoded and v2 in encoded and v3 in encoded:
                group = encode_composite([encoded[v1], encoded[v2]])
                self.composite_index(v1, v2, v3).remove(group, encode_composite([encoded[v3], ident]))

    def add_tuple(self, label: str, wid: bytes, oid: int) -> None:
        self.unfolded_index(label, create=True).insert(encode_composite([wid, encode_uint(oid)]), b"")

    def commit(self) -> None:
        self.session.commit()


# -- AND via prefetch ------------------------------------------------------

def _ids(pairs: Iterable[tuple[bytes, Any]]) -> list[int]:
    return [decode_uint(k) for k, _ in pairs]


def query_and_prefetch(catalog: IndexCatalog, cond_a: Condition, cond_b: Condition,
                       sort_field: str, limit: int | None = None) -> list[int]:
    """Ids matching both conditions, ordered by ``(sort value, id)``."""
    index_a = catalog.field_index(cond_a.field)
    index_b = catalog.field_index(cond_b.field)
    sorter = catalog.sort_index(sort_field)

    sets_a = [t for _, t in index_a.sets(cond_a.range)]
    if not sets_a:
        return []
    sets_b = [t for _, t in index_b.sets(cond_b.range)]
    if not sets_b:
        return []

    estimates = multi_estimate([(t, KeyRange()) for t in sets_a + sets_b])
    est_a, est_b = sum(estimates[:len(sets_a)]), sum(estimates[len(sets_a):])
    small, large = (sets_b, sets_a) if est_b * TIE_MARGIN < est_a else (sets_a, sets_b)
    log.debug("prefetch: estimates a=%d b=%d", est_a, est_b)

    # bulk fetch of the smaller id-sets, all of them level by level together
    candidates = sorted({k for part in multi_range([(t, KeyRange()) for t in small], resolve=False)
                         for k, _ in part})
    if not candidates:
        return []
    probes = multi_get([(t, candidates) for t in large], resolve=False)
    survivors = [k for k in candidates if any(p[k] is not None for p in probes)]
    if not survivors:
        return []
    values = sorter.parallel_traverse(survivors)
    ordered = sorted(survivors, key=lambda k: (values[k] is None, values[k] or b"", k))
    ids = [decode_uint(k) for k in ordered]
    return ids[:limit] if limit is not None else ids


# -- AND via preorder composite index -------------------------------------

def query_preorder(catalog: IndexCatalog, v1: tuple[str, Any], v2: tuple[str, Any], sort_field: str,
                   order_limit: int) -> list[int]:
    """Ids with ``v1`` and ``v2`` in ``sort_field`` order, reading only the first ``order_limit``."""
    index = catalog.composite_index(v1[0], v2[0], sort_field)
    group = encode_composite([encode_value(v1[1]), encode_value(v2[1])])
    raw = index.outer.get(group)
    if raw is None:
        return []
    inner = index.set_tree(group, decode_uint(raw))
    return [decode_uint(decode_composite(k)[1]) for k, _ in inner.range_iterate(KeyRange(), order_limit)]


# -- OR via zip-join -------------------------------------------------------

def iter_or(catalog: IndexCatalog, conds: list[Condition]) -> Iterator[int]:
    """Lazily merge the id-ordered streams of every condition, dropping duplicates."""
    if len(conds) < 2:
        raise ValueError("an OR query needs at least two conditions")
    trees = []
    for cond in conds:
        trees.extend(t for _, t in catalog.field_index(cond.field).sets(cond.range))
    heap = []
    for n, cursor in enumerate(open_cursors([(t, KeyRange()) for t in trees])):
        item = cursor.next()
        if item is not None:
            heap.append((item[0], n, cursor))
    heapq.heapify(heap)
    last = None
    while heap:
        key, n, cursor = heap[0]
        item = cursor.next()
        if item is None:
            heapq.heappop(heap)
        else:
            heapq.heapreplace(heap, (item[0], n, cursor))
        if key != last:
            yield decode_uint(key)
            last = key


def query_or(catalog: IndexCatalog, conds: list[Condition], limit: int | None = None) -> list[int]:
    out = []
    for oid in iter_or(catalog, conds):
        out.append(oid)
        if limit is not None and len(out) >= limit:
            break
    return out


# -- unfolded tuple sets ---------------------------------------------------

def unfolded_lookup(catalog: IndexCatalog, label: str, wid: bytes, limit: int,
                    padding: int | None = None) -> list[int]:
    """Ids paired with ``wid``.

    With ``padding`` set, exactly ``padding`` adjacent tuples are read from
    the start of ``wid``'s run whatever the true match count, so lookups on
    different words download about the same number of bytes.
    """
    if limit < 1:
        raise ValueError("limit must be >= 1")
    tree = catalog.unfolded_index(label)
    prefix = KeyRange.prefix(encode_composite([wid]))
    if padding is None:
        pairs = tree.range_iterate(prefix, limit)
    else:
        if padding < limit:
            raise ValueError("padding must be at least the limit")
        pairs = [kv for kv in tree.range_iterate(KeyRange(prefix.start, None), padding) if kv[0] in prefix]
    return [decode_uint(decode_composite(k)[1]) for k, _ in pairs][:limit]
