"""Bucket plaintext model and its bit-exact serialization.

Layout (before compression and encryption)::

    u8  format tag (1)
    u8  kind (0 leaf, 1 branch)
    u16 key count n
    32  child secret: children's keys are SHA256(secret || child oid)
    n x (u16 length, key bytes)
    branch: (n + 1) x u64 child oid
    leaf:   n x value, each either
              u8 0, u32 length, inline bytes
              u8 1, u64 value oid, 32-byte value key, u32 value size
"""

from __future__ import annotations

import os
import struct
from bisect import bisect_left, bisect_right
from dataclasses import dataclass

from ..crypto import KEY_SIZE, derive_child_key, oid_label

FORMAT_TAG = 1
LEAF = 0
BRANCH = 1

HEADER_SIZE = 1 + 1 + 2 + KEY_SIZE
KEY_PREFIX = 2
CHILD_SIZE = 8
INLINE_LIMIT = 256
REF_SIZE = 1 + 8 + KEY_SIZE + 4
MAX_KEY = 0xFFFF

_U16 = struct.Struct(">H")
_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")


def branch_record_size(key_length: int = 8) -> int:
    """Bytes one (separator, child) pair adds to a branch bucket: the s_r constant."""
    return KEY_PREFIX + key_length + CHILD_SIZE


@dataclass(frozen=True)
class ValueRef:
    """Leaf entry pointing at a value stored as its own encrypted object."""

    oid: int
    key: bytes
    size: int


Value = bytes | ValueRef


def value_size(value: Value) -> int:
    if isinstance(value, ValueRef):
        return REF_SIZE
    return 1 + 4 + len(value)


class Node:
    __slots__ = ("leaf", "keys", "children", "values", "secret", "oid", "version", "key", "size")

    def __init__(self, leaf: bool, secret: bytes | None = None):
        self.leaf = leaf
        self.keys: list[bytes] = []
        self.children: list[int] = []
        self.values: list[Value] = []
        self.secret = secret if secret is not None else os.urandom(KEY_SIZE)
        self.oid = 0
        self.version = 0  # 0 until first committed
        self.key = b""
        self.size = HEADER_SIZE + (0 if leaf else CHILD_SIZE)

    def __repr__(self) -> str:
        kind = "leaf" if self.leaf else "branch"
        return f"<Node {kind} oid={self.oid} v{self.version} keys={len(self.keys)}>"

    # -- navigation -------------------------------------------------------

    def child_index(self, key: bytes) -> int:
        return bisect_right(self.keys, key)

    def child_key(self, index: int) -> bytes:
        return derive_child_key(self.secret, oid_label(self.children[index]))

    def child_bounds(self, index: int, lo: bytes | None, hi: bytes | None) -> tuple[bytes | None, bytes | None]:
        """Key interval ``[lo, hi)`` of child ``index`` given this node's own interval."""
        return (self.keys[index - 1] if index > 0 else lo,
                self.keys[index] if index < len(self.keys) else hi)

    def find(self, key: bytes) -> int:
        """Leaf position of ``key`` or -1."""
        i = bisect_left(self.keys, key)
        return i if i < len(self.keys) and self.keys[i] == key else -1

    # -- leaf edits -------------------------------------------------------

    def leaf_put(self, key: bytes, value: Value) -> Value | None:
        """Insert or replace; returns the replaced value, if any."""
        if len(key) > MAX_KEY:
            raise ValueError("key too long")
        i = bisect_left(self.keys, key)
        if i < len(self.keys) and self.keys[i] == key:
            old = self.values[i]
            self.size += value_size(value) - value_size(old)
            self.values[i] = value
            return old
        self.keys.insert(i, key)
        self.values.insert(i, value)
        self.size += KEY_PREFIX + len(key) + value_size(value)
        return None

    def leaf_remove(self, index: int) -> Value:
        key = self.keys.pop(index)
        value = self.values.pop(index)
        self.size -= KEY_PREFIX + len(key) + value_size(value)
        return value

    # -- branch edits -----------------------------------------------------

    def branch_insert(self, index: int, separator: bytes, child: int) -> None:
        """Insert ``separator`` at ``index`` with ``child`` to its right."""
        self.keys.insert(index, separator)
        self.children.insert(index + 1, child)
        self.size += KEY_PREFIX + len(separator) + CHILD_SIZE

    def branch_remove_child(self, index: int) -> None:
        """Drop child ``index`` and the separator that bounds it."""
        self.children.pop(index)
        self.size -= CHILD_SIZE
        if self.keys:
            sep = self.keys.pop(index - 1 if index > 0 else 0)
            self.size -= KEY_PREFIX + len(sep)

    # -- splitting --------------------------------------------------------

    def split_point(self) -> int:
        """Index at which the entries reach half of the node's byte size."""
        half = (self.size - HEADER_SIZE) / 2
        acc = 0
        if self.leaf:
            for i, (k, v) in enumerate(zip(self.keys, self.values)):
                acc += KEY_PREFIX + len(k) + value_size(v)
                if acc >= half:
                    return min(max(i + 1, 1), len(self.keys) - 1)
            return len(self.keys) - 1
        for i, k in enumerate(self.keys):
            acc += KEY_PREFIX + len(k) + CHILD_SIZE
            if acc >= half:
                return min(max(i, 1), len(self.keys) - 2)
        return len(self.keys) - 2

    def can_split(self) -> bool:
        return len(self.keys) >= (2 if self.leaf else 3)

    def split(self) -> tuple[bytes, Node]:
        """Move the upper half into a new sibling; returns (separator, sibling)."""
        m = self.split_point()
        right = Node(self.leaf)
        if self.leaf:
            right.keys, self.keys = self.keys[m:], self.keys[:m]
            right.values, self.values = self.values[m:], self.values[:m]
            separator = right.keys[0]
        else:
            separator = self.keys[m]
            right.keys, self.keys = self.keys[m + 1:], self.keys[:m]
            right.children, self.children = self.children[m + 1:], self.children[:m + 1]
        self.size = compute_size(self)
        right.size = compute_size(right)
        return separator, right


def compute_size(node: Node) -> int:
    size = HEADER_SIZE + sum(KEY_PREFIX + len(k) for k in node.keys)
    if node.leaf:
        size += sum(value_size(v) for v in node.values)
    else:
        size += CHILD_SIZE * len(node.children)
    return size


def serialize(node: Node) -> bytes:
    parts = [bytes((FORMAT_TAG, BRANCH if not node.leaf else LEAF)), _U16.pack(len(node.keys)), node.secret]
    for k in node.keys:
        parts.append(_U16.pack(len(k)))
        parts.append(k)
    if node.leaf:
        for v in node.values:
            if isinstance(v, ValueRef):
                parts.append(b"\x01" + _U64.pack(v.oid) + v.key + _U32.pack(v.size))
            else:
                parts.append(b"\x00" + _U32.pack(len(v)))
                parts.append(v)
    else:
        parts.append(b"".join(_U64.pack(c) for c in node.children))
    return b"".join(parts)


def parse(data: bytes) -> Node:
    if len(data) < HEADER_SIZE or data[0] != FORMAT_TAG:
        raise ValueError("not a bucket of a known format")
    kind = data[1]
    if kind not in (LEAF, BRANCH):
        raise ValueError(f"unknown bucket kind {kind}")
    (n,) = _U16.unpack_from(data, 2)
    node = Node(kind == LEAF, bytes(data[4:HEADER_SIZE]))
    pos = HEADER_SIZE
    keys = node.keys
    for _ in range(n):
        (klen,) = _U16.unpack_from(data, pos)
        pos += 2
        keys.append(bytes(data[pos:pos + klen]))
        pos += klen
    if node.leaf:
        values = node.values
        for _ in range(n):
            tag = data[pos]
            if tag == 0:
                (vlen,) = _U32.unpack_from(data, pos + 1)
                values.append(bytes(data[pos + 5:pos + 5 + vlen]))
                pos += 5 + vlen
            elif tag == 1:
                (oid,) = _U64.unpack_from(data, pos + 1)
                vkey = bytes(data[pos + 9:pos + 9 + KEY_SIZE])
                (size,) = _U32.unpack_from(data, pos + 9 + KEY_SIZE)
                values.append(ValueRef(oid, vkey, size))
                pos += REF_SIZE
            else:
                raise ValueError("bad value tag")
    else:
        node.children = list(struct.unpack_from(f">{n + 1}Q", data, pos))
        pos += CHILD_SIZE * (n + 1)
    if pos != len(data):
        raise ValueError("trailing bytes in bucket")
    node.size = pos
    return node
