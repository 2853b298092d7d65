"""Remote encrypted B-Tree.

Reads traverse the tree level by level: every level costs at most one
``get_objects`` exchange, however many buckets that level needs. Writes are
staged in the session and committed as one batch.
"""

from __future__ import annotations

from bisect import bisect_left
from collections import defaultdict
from collections.abc import Callable, Iterator
from dataclasses import dataclass, field
from statistics import harmonic_mean
from typing import Any

from ..crypto import derive_child_key, oid_label
from ..errors import NotFound
from .keys import KeyRange
from .node import INLINE_LIMIT, Node, ValueRef, branch_record_size, compute_size
from .session import Session

Frontier = list[tuple[int, bytes, Any]]


def walk(session: Session, frontier: Frontier, expand: Callable[[Node, Any], Frontier], pin: bool = False) -> int:
    """Breadth-first traversal: fetch a whole level per exchange, let ``expand`` pick the next.

    Returns the number of levels visited.
    """
    levels = 0
    while frontier:
        nodes = session.fetch(((oid, key) for oid, key, _ in frontier), pin=pin)
        levels += 1
        nxt: Frontier = []
        for oid, _, ctx in frontier:
            nxt.extend(expand(nodes[oid], ctx))
        frontier = nxt
    return levels


def resolve_values(session: Session, pairs: list[tuple[bytes, Any]]) -> list[tuple[bytes, bytes]]:
    refs = [v for _, v in pairs if isinstance(v, ValueRef)]
    if not refs:
        return pairs
    data = session.fetch_values(refs)
    return [(k, data[v.oid] if isinstance(v, ValueRef) else v) for k, v in pairs]


@dataclass
class Subtree:
    """A fully downloaded (sub)tree."""

    root: int
    nodes: dict[int, Node]
    height: int

    def items(self) -> Iterator[tuple[bytes, Any]]:
        stack = [self.root]
        while stack:
            node = self.nodes[stack.pop()]
            if node.leaf:
                yield from zip(node.keys, node.values)
            else:
                stack.extend(reversed(node.children))

    def keys(self) -> list[bytes]:
        return [k for k, _ in self.items()]

    def __len__(self) -> int:
        return sum(len(n.keys) for n in self.nodes.values() if n.leaf)


@dataclass
class _Estimate:
    rng: KeyRange
    counted: int = 0
    full: dict[int, int] = field(default_factory=lambda: defaultdict(int))
    fanouts: dict[int, list[int]] = field(default_factory=lambda: defaultdict(list))
    leaf_sizes: list[int] = field(default_factory=list)
    leaf_depth: int = 0

    def result(self) -> int:
        # Sampled nodes are the ones holding the range endpoints, and a fixed key
        # lands in a wide node more often than in a narrow one. The harmonic mean
        # undoes that size bias; a plain mean overestimates by about 10% per level.
        if not self.full:
            return self.counted
        size = {self.leaf_depth: harmonic_mean(self.leaf_sizes)}
        for d in range(self.leaf_depth - 1, -1, -1):
            size[d] = size[d + 1] * harmonic_mean(self.fanouts.get(d) or [1])
        return int(round(self.counted + sum(n * size[d] for d, n in self.full.items())))


class BTree:
    """Handle on one encrypted B-Tree.

    ``bucket_size`` is the transmitted bucket size target s_b; a bucket is
    split once its plaintext exceeds ``bucket_size * compression``.
    Named trees keep their root in the server's root table; nested trees
    (``name=None``) are rooted wherever their owner records ``root``.
    """

    def __init__(self, session: Session, name: str | None = None, *, master_key: bytes | None = None,
                 root: int | None = None, bucket_size: int = 8192, compression: float = 3.0):
        if name is None and master_key is None:
            raise ValueError("nested trees need an explicit master key")
        self.session = session
        self.name = name
        self.master_key = master_key if master_key is not None else session.index_key(name)
        self.bucket_size = bucket_size
        self.compression = compression
        self.split_threshold = int(bucket_size * compression)
        if root is None:
            root = 0
            if name is not None:
                try:
                    root = session.client.get_root(name)
                except NotFound:
                    pass
        self.root = self.committed_root = root

    def __repr__(self) -> str:
        return f"<BTree {self.name or 'nested'} root={self.root}>"

    def reset(self) -> None:
        pass

    @property
    def record_size(self) -> int:
        return branch_record_size()

    def root_key(self, root: int | None = None) -> bytes:
        return derive_child_key(self.master_key, oid_label(self.root if root is None else root))

    def _fetch(self, oid: int, key: bytes, pin: bool = False) -> Node:
        return self.session.fetch([(oid, key)], pin=pin)[oid]

    def root_node(self) -> Node | None:
        return self._fetch(self.root, self.root_key()) if self.root else None

    # -- point reads ------------------------------------------------------

    def search(self, key: bytes) -> bytes:
        """Value stored at ``key``; one exchange per uncached level."""
        node = self.root_node()
        if node is None:
            raise NotFound(key)
        while not node.leaf:
            i = node.child_index(key)
            node = self._fetch(node.children[i], node.child_key(i))
        i = node.find(key)
        if i < 0:
            raise NotFound(key)
        return resolve_values(self.session, [(key, node.values[i])])[0][1]

    def get(self, key: bytes, default: Any = None) -> Any:
        try:
            return self.search(key)
        except NotFound:
            return default

    def __contains__(self, key: bytes) -> bool:
        return self.get(key) is not None

    def parallel_traverse(self, keys: list[bytes]) -> dict[bytes, bytes | None]:
        """Look up many keys in H exchanges; absent keys map to ``None``."""
        return multi_get([(self, keys)])[0]

    def prefetch(self, keys: list[bytes]) -> None:
        """Pin the root-to-leaf paths of ``keys`` for the current transaction."""
        multi_get([(self, keys)], pin=True, resolve=False)

    # -- ranges -----------------------------------------------------------

    def iter_entries(self, rng: KeyRange) -> Iterator[tuple[bytes, Any]]:
        """Lazily yield raw (key, value) pairs, fetching leaves only as consumed."""
        if not self.root or rng.is_empty():
            return
        start, stop = rng.start, rng.stop
        stack: list[list] = []
        lo = hi = None
        node = self._fetch(self.root, self.root_key())
        while True:
            while not node.leaf:
                i = node.child_index(start) if start is not None else 0
                stack.append([node, i, lo, hi])
                lo, hi = node.child_bounds(i, lo, hi)
                node = self._fetch(node.children[i], node.child_key(i))
            j = bisect_left(node.keys, start) if start is not None else 0
            for j in range(j, len(node.keys)):
                k = node.keys[j]
                if stop is not None and k >= stop:
                    return
                yield k, node.values[j]
            if stop is not None and hi is not None and hi >= stop:
                return
            while stack:
                frame = stack[-1]
                parent, i, plo, phi = frame
                if i + 1 < len(parent.children):
                    frame[1] = i = i + 1
                    lo, hi = parent.child_bounds(i, plo, phi)
                    if stop is not None and lo is not None and lo >= stop:
                        return
                    node = self._fetch(parent.children[i], parent.child_key(i))
                    break
                stack.pop()
            else:
                return

    def range_iterate(self, rng: KeyRange, limit: int) -> list[tuple[bytes, bytes]]:
        """First ``limit`` matches in key order, fetching sibling leaves only as needed."""
        if limit < 1:
            raise ValueError("limit must be >= 1")
        out = []
        for pair in self.iter_entries(rng):
            out.append(pair)
            if len(out) >= limit:
                break
        return resolve_values(self.session, out)

    def range_fetch_all(self, rng: KeyRange) -> list[tuple[bytes, bytes]]:
        """Every match, downloaded level by level (H exchanges, +1 for large values)."""
        return multi_range([(self, rng)])[0]

    def items(self) -> list[tuple[bytes, bytes]]:
        return self.range_fetch_all(KeyRange())

    def estimate_count(self, rng: KeyRange) -> int:
        """Approximate number of keys in ``rng`` from the two boundary paths only."""
        return multi_estimate([(self, rng)])[0]

    def height(self) -> int:
        if not self.root:
            return 1

        def expand(node: Node, _):
            return [] if node.leaf else [(node.children[0], node.child_key(0), None)]

        return walk(self.session, [(self.root, self.root_key(), None)], expand)

    def bulk_fetch_subtree(self, subtree_root: int | None = None, key: bytes | None = None) -> Subtree:
        """Download a whole subtree in as many exchanges as it has levels."""
        if subtree_root is None or subtree_root == self.root:
            subtree_root, key = self.root, self.root_key()
        elif key is None:
            raise ValueError("key required for a non-root subtree (see children_of)")
        if not subtree_root:
            return Subtree(0, {}, 0)
        nodes: dict[int, Node] = {}

        def expand(node: Node, _):
            nodes[node.oid] = node
            if node.leaf:
                return []
            return [(c, node.child_key(i), None) for i, c in enumerate(node.children)]

        height = walk(self.session, [(subtree_root, key, None)], expand)
        return Subtree(subtree_root, nodes, height)

    def children_of(self, oid: int, key: bytes) -> list[tuple[int, bytes]]:
        node = self._fetch(oid, key)
        return [(c, node.child_key(i)) for i, c in enumerate(node.children)]

    # -- writes -----------------------------------------------------------

    def _new_root_leaf(self) -> None:
        leaf = Node(True)
        self.session.adopt(leaf, b"")
        leaf.key = self.root_key(leaf.oid)
        self.root = leaf.oid

    def _load_path(self, key: bytes) -> tuple[list[tuple[Node, int]], Node]:
        path = []
        node = self._fetch(self.root, self.root_key(), pin=True)
        while not node.leaf:
            i = node.child_index(key)
            path.append((node, i))
            node = self._fetch(node.children[i], node.child_key(i), pin=True)
        return path, node

    def _make_value(self, leaf: Node, value: bytes) -> bytes | ValueRef:
        if len(value) <= INLINE_LIMIT:
            return value
        oid = self.session.new_oid()
        vkey = derive_child_key(leaf.secret, oid_label(oid))
        self.session.stage_value(oid, vkey, value)
        return ValueRef(oid, vkey, len(value))

    def insert(self, key: bytes, value: bytes = b"") -> None:
        """Stage ``key -> value`` (insert or overwrite)."""
        if not isinstance(key, bytes) or not isinstance(value, bytes):
            raise TypeError("keys and values are bytes")
        self.session.touch(self)
        if not self.root:
            self._new_root_leaf()
        path, leaf = self._load_path(key)
        i = leaf.find(key)
        if i >= 0 and leaf.values[i] == value:
            return
        leaf.leaf_put(key, self._make_value(leaf, value))
        self.session.mark_dirty(leaf)
        self._split_up(path, leaf)

    def _split_up(self, path: list[tuple[Node, int]], node: Node) -> None:
        session = self.session
        while node.size > self.split_threshold and node.can_split():
            separator, right = node.split()
            session.adopt(right, b"")
            for c in right.children:
                session.move(c, derive_child_key(node.secret, oid_label(c)),
                             derive_child_key(right.secret, oid_label(c)))
            if path:
                parent, idx = path.pop()
                right.key = derive_child_key(parent.secret, oid_label(right.oid))
                parent.branch_insert(idx, separator, right.oid)
                session.mark_dirty(parent)
                node = parent
                continue
            top = Node(False)
            session.adopt(top, b"")
            top.children = [node.oid, right.oid]
            top.keys = [separator]
            top.size = compute_size(top)
            top.key = self.root_key(top.oid)
            node.key = derive_child_key(top.secret, oid_label(node.oid))
            right.key = derive_child_key(top.secret, oid_label(right.oid))
            self.root = top.oid
            return

    def delete(self, key: bytes) -> bool:
        """Stage removal of ``key``; returns False (and stages nothing) if absent."""
        if not self.root:
            return False
        path, leaf = self._load_path(key)
        i = leaf.find(key)
        if i < 0:
            return False
        self.session.touch(self)
        leaf.leaf_remove(i)
        self.session.mark_dirty(leaf)
        node = leaf
        while path and (not node.keys if node.leaf else not node.children):
            parent, idx = path.pop()
            parent.branch_remove_child(idx)
            self.session.mark_dirty(parent)
            node = parent
        if not path and not node.leaf and not node.children:
            self._new_root_leaf()
            return True
        self._collapse_root()
        return True

    def _collapse_root(self) -> None:
        root = self._fetch(self.root, self.root_key(), pin=True)
        while not root.leaf and len(root.children) == 1:
            child = root.children[0]
            new_key = self.root_key(child)
            self.session.move(child, root.child_key(0), new_key)
            self.root = child
            root = self._fetch(child, new_key, pin=True)

    def commit(self) -> int:
        """Commit every change staged on this tree's session; returns the new root."""
        self.session.commit()
        return self.root


# -- multi-tree traversals (one exchange per level across all trees) --------


def multi_get(requests: list[tuple[BTree, list[bytes]]], pin: bool = False,
              resolve: bool = True) -> list[dict[bytes, Any]]:
    if not requests:
        return []
    session = requests[0][0].session
    results: list[dict[bytes, Any]] = [dict.fromkeys(keys) for _, keys in requests]

    def expand(node: Node, ctx):
        n, keys = ctx
        if node.leaf:
            for k in keys:
                i = node.find(k)
                if i >= 0:
                    results[n][k] = node.values[i]
            return []
        groups: dict[int, list[bytes]] = defaultdict(list)
        for k in keys:
            groups[node.child_index(k)].append(k)
        return [(node.children[i], node.child_key(i), (n, ks)) for i, ks in groups.items()]

    frontier = [(tree.root, tree.root_key(), (n, sorted(set(keys))))
                for n, (tree, keys) in enumerate(requests) if tree.root and keys]
    walk(session, frontier, expand, pin=pin)
    if resolve:
        refs = [v for r in results for v in r.values() if isinstance(v, ValueRef)]
        if refs:
            data = session.fetch_values(refs)
            for r in results:
                for k, v in r.items():
                    if isinstance(v, ValueRef):
                        r[k] = data[v.oid]
    return results


def multi_range(requests: list[tuple[BTree, KeyRange]], resolve: bool = True) -> list[list[tuple[bytes, Any]]]:
    if not requests:
        return []
    session = requests[0][0].session
    results: list[list[tuple[bytes, Any]]] = [[] for _ in requests]

    def expand(node: Node, ctx):
        n, rng, lo, hi = ctx
        if node.leaf:
            i = bisect_left(node.keys, rng.start) if rng.start is not None else 0
            j = bisect_left(node.keys, rng.stop) if rng.stop is not None else len(node.keys)
            results[n].extend(zip(node.keys[i:j], node.values[i:j]))
            return []
        first = node.child_index(rng.start) if rng.start is not None else 0
        last = bisect_left(node.keys, rng.stop) if rng.stop is not None else len(node.keys)
        return [(node.children[i], node.child_key(i), (n, rng) + node.child_bounds(i, lo, hi))
                for i in range(first, last + 1)]

    frontier = [(tree.root, tree.root_key(), (n, rng, None, None))
                for n, (tree, rng) in enumerate(requests) if tree.root and not rng.is_empty()]
    walk(session, frontier, expand)
    for r in results:
        r.sort(key=lambda kv: kv[0])
    if resolve:
        refs = [v for r in results for _, v in r if isinstance(v, ValueRef)]
        if refs:
            data = session.fetch_values(refs)
            results = [[(k, data[v.oid] if isinstance(v, ValueRef) else v) for k, v in r] for r in results]
    return results


def multi_estimate(requests: list[tuple[BTree, KeyRange]]) -> list[int]:
    if not requests:
        return []
    session = requests[0][0].session
    states = [_Estimate(rng) for _, rng in requests]

    def expand(node: Node, ctx):
        n, role, depth = ctx
        st = states[n]
        start, stop = st.rng.start, st.rng.stop
        if node.leaf:
            st.leaf_depth = depth
            st.leaf_sizes.append(len(node.keys))
            i = bisect_left(node.keys, start) if start is not None and role != "hi" else 0
            j = bisect_left(node.keys, stop) if stop is not None and role != "lo" else len(node.keys)
            st.counted += max(0, j - i)
            return []
        st.fanouts[depth].append(len(node.children))
        i = node.child_index(start) if start is not None else 0
        j = bisect_left(node.keys, stop) if stop is not None else len(node.keys)
        if role == "lo":
            st.full[depth + 1] += len(node.children) - i - 1
            return [(node.children[i], node.child_key(i), (n, "lo", depth + 1))]
        if role == "hi":
            st.full[depth + 1] += j
            return [(node.children[j], node.child_key(j), (n, "hi", depth + 1))]
        if i >= j:
            return [(node.children[i], node.child_key(i), (n, "both", depth + 1))]
        st.full[depth + 1] += j - i - 1
        return [(node.children[i], node.child_key(i), (n, "lo", depth + 1)),
                (node.children[j], node.child_key(j), (n, "hi", depth + 1))]

    frontier = [(tree.root, tree.root_key(), (n, "both", 0))
                for n, (tree, rng) in enumerate(requests) if tree.root and not rng.is_empty()]
    walk(session, frontier, expand)
    return [st.result() for st in states]


class Cursor:
    """Lazy in-order reader of one key range; fetches a sibling leaf only once the current one is used up."""

    def __init__(self, tree: BTree, rng: KeyRange):
        self.tree = tree
        self.rng = rng
        self.stack: list[list] = []
        self.keys: list[bytes] = []
        self.values: list[Any] = []
        self.pos = 0
        self.done = rng.is_empty() or not tree.root
        self.visited = 0

    def _expand(self, node: Node, _=None) -> Frontier:
        start = self.rng.start
        self.visited += 1
        if node.leaf:
            self.keys, self.values = node.keys, node.values
            self.pos = bisect_left(node.keys, start) if start is not None else 0
            return []
        i = node.child_index(start) if start is not None else 0
        self.stack.append([node, i])
        return [(node.children[i], node.child_key(i), None)]

    def _advance(self) -> bool:
        stop = self.rng.stop
        while self.stack and self.stack[-1][1] + 1 >= len(self.stack[-1][0].children):
            self.stack.pop()
        if not self.stack:
            return False
        frame = self.stack[-1]
        node, i = frame[0], frame[1] + 1
        if stop is not None and node.keys[i - 1] >= stop:
            return False
        frame[1] = i
        # descend the new subtree from its leftmost edge
        saved, self.rng = self.rng, KeyRange(None, stop)
        try:
            walk(self.tree.session, [(node.children[i], node.child_key(i), None)], self._expand)
        finally:
            self.rng = saved
        return True

    def next(self) -> tuple[bytes, Any] | None:
        while not self.done:
            if self.pos < len(self.keys):
                key = self.keys[self.pos]
                if self.rng.stop is not None and key >= self.rng.stop:
                    break
                self.pos += 1
                return key, self.values[self.pos - 1]
            if not self._advance():
                break
        self.done = True
        return None

    def __iter__(self) -> Iterator[tuple[bytes, Any]]:
        while (item := self.next()) is not None:
            yield item


def open_cursors(requests: list[tuple[BTree, KeyRange]]) -> list[Cursor]:
    """Position a cursor at the start of every range; one exchange per level for all of them."""
    cursors = [Cursor(tree, rng) for tree, rng in requests]
    live = [c for c in cursors if not c.done]
    if live:
        frontier = [(c.tree.root, c.tree.root_key(), c) for c in live]
        walk(live[0].tree.session, frontier,
             lambda node, c: [(oid, key, c) for oid, key, _ in c._expand(node)])
    return cursors
