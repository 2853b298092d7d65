from __future__ import annotations

from collections import OrderedDict

from .node import Node


class ClientCache:
    """Decrypted buckets bounded by total plaintext bytes.

    Two LRU lists: leaves are evicted before any branch bucket, so under
    random lookups the cache settles on the top of the tree, where every
    query passes.
    """

    def __init__(self, capacity: int = 5 * 1024 * 1024):
        if capacity < 0:
            raise ValueError("cache capacity must be >= 0")
        self.capacity = capacity
        self.used = 0
        self._leaves: OrderedDict[int, tuple[Node, int]] = OrderedDict()
        self._branches: OrderedDict[int, tuple[Node, int]] = OrderedDict()
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self._leaves) + len(self._branches)

    def __contains__(self, oid: int) -> bool:
        return oid in self._leaves or oid in self._branches

    def get(self, oid: int) -> Node | None:
        for lru in (self._branches, self._leaves):
            entry = lru.get(oid)
            if entry is not None:
                lru.move_to_end(oid)
                self.hits += 1
                return entry[0]
        self.misses += 1
        return None

    def put(self, node: Node) -> None:
        self.discard(node.oid)
        size = node.size
        if size > self.capacity:
            return
        (self._leaves if node.leaf else self._branches)[node.oid] = (node, size)
        self.used += size
        while self.used > self.capacity:
            lru = self._leaves or self._branches
            _, (_, evicted) = lru.popitem(last=False)
            self.used -= evicted

    def discard(self, oid: int) -> None:
        entry = self._leaves.pop(oid, None) or self._branches.pop(oid, None)
        if entry is not None:
            self.used -= entry[1]

    def clear(self) -> None:
        self._leaves.clear()
        self._branches.clear()
        self.used = 0
