from .client import LocalTransport, StoreClient, TcpTransport, Transport, parse_address
from .protocol import NEW, CommitBatch, ObjectRecord, Write
from .server import BlobServer, serve, start_background
from .store import ObjectStore

__all__ = [
    "NEW",
    "BlobServer",
    "CommitBatch",
    "LocalTransport",
    "ObjectRecord",
    "ObjectStore",
    "StoreClient",
    "TcpTransport",
    "Transport",
    "Write",
    "parse_address",
    "serve",
    "start_background",
]
