"""Exception hierarchy shared by client and server code."""


class ZeroTreeError(Exception):
    """Base class for every error raised by this package."""


class AuthenticationFailure(ZeroTreeError):
    """AEAD verification failed: wrong key, tampered bytes, or wrong associated data."""


class StaleGrant(AuthenticationFailure):
    """A range grant no longer matches the buckets it was issued for."""


class InvalidParams(ZeroTreeError):
    pass


class CorruptStream(ZeroTreeError):
    pass


class NonceExhausted(ZeroTreeError):
    """Too many encryptions under one key for random 96-bit nonces to stay safe."""


class DomainError(ZeroTreeError, ValueError):
    pass


class NotFound(ZeroTreeError, KeyError):
    pass


class Conflict(ZeroTreeError):
    """Optimistic commit lost a race; re-read and retry the whole transaction."""

    def __init__(self, oid: int, message: str = ""):
        super().__init__(message or f"version conflict on object {oid}")
        self.oid = oid


class ProtocolError(ZeroTreeError):
    pass


class BindFailure(ZeroTreeError):
    pass


class CorruptLog(ZeroTreeError):
    pass


class MissingIndex(ZeroTreeError):
    pass


class DuplicateDocument(ZeroTreeError):
    pass


class EmptyCorpus(ZeroTreeError):
    pass


class OutOfGrant(ZeroTreeError):
    pass


class ParseError(ZeroTreeError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class EmptyTable(ZeroTreeError):
    pass


class SizeCap(ZeroTreeError):
    pass


class ResourceCap(ZeroTreeError):
    pass
