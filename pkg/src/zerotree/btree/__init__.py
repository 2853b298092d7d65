from .cache import ClientCache
from .keys import KeyRange, decode_composite, decode_int, encode_composite, encode_int, encode_uint
from .node import INLINE_LIMIT, Node, ValueRef, branch_record_size, parse, serialize
from .session import Session
from .tree import BTree, Cursor, Subtree, multi_estimate, multi_get, multi_range, open_cursors, walk

__all__ = [
    "INLINE_LIMIT",
    "BTree",
    "ClientCache",
    "Cursor",
    "KeyRange",
    "Node",
    "Session",
    "Subtree",
    "ValueRef",
    "branch_record_size",
    "decode_composite",
    "decode_int",
    "encode_composite",
    "encode_int",
    "encode_uint",
    "multi_estimate",
    "multi_get",
    "multi_range",
    "open_cursors",
    "parse",
    "serialize",
    "walk",
]
