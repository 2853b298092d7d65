"""Symmetric primitives: AES-256-GCM blobs, scrypt, key-tree derivation, zlib.

Everything here is stateless apart from the per-key nonce budget, which
guards the random-nonce birthday bound.
"""

from __future__ import annotations

import hashlib
import os
import threading
import zlib
from collections import Counter
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.scrypt import Scrypt

from .errors import AuthenticationFailure, CorruptStream, InvalidParams, NonceExhausted

KEY_SIZE = 32
NONCE_SIZE = 12
TAG_SIZE = 16
SALT_SIZE = 16

# random 96-bit nonces stay collision-safe below 2**32 uses of one key
NONCE_LIMIT = 2**32

ZLIB_LEVEL = 6

SymmetricKey = bytes

_nonce_lock = threading.Lock()
_nonce_usage: Counter[bytes] = Counter()


def check_key(key: bytes) -> bytes:
    if not isinstance(key, (bytes, bytearray)) or len(key) != KEY_SIZE:
        raise InvalidParams(f"symmetric keys are exactly {KEY_SIZE} bytes")
    return bytes(key)


def random_key() -> SymmetricKey:
    return os.urandom(KEY_SIZE)


@dataclass(frozen=True)
class EncryptedBlob:
    nonce: bytes
    ciphertext: bytes
    tag: bytes

    def to_bytes(self) -> bytes:
        return self.nonce + self.ciphertext + self.tag

    @classmethod
    def from_bytes(cls, data: bytes) -> EncryptedBlob:
        if len(data) < NONCE_SIZE + TAG_SIZE:
            raise AuthenticationFailure("blob shorter than nonce and tag")
        return cls(data[:NONCE_SIZE], data[NONCE_SIZE:-TAG_SIZE], data[-TAG_SIZE:])

    def __len__(self) -> int:
        return NONCE_SIZE + len(self.ciphertext) + TAG_SIZE


def _spend_nonce(key: bytes) -> None:
    fingerprint = hashlib.blake2b(key, digest_size=8).digest()
    with _nonce_lock:
        used = _nonce_usage[fingerprint]
        if used >= NONCE_LIMIT:
            raise NonceExhausted("nonce budget for this key is spent; rotate the key")
        _nonce_usage[fingerprint] = used + 1


def encrypt_blob(
    key: SymmetricKey, plaintext: bytes, associated_data: bytes = b"", *, nonce: bytes | None = None
) -> EncryptedBlob:
    """AES-256-GCM encrypt ``plaintext``, authenticating ``associated_data``.

    ``nonce`` exists for known-answer tests only; production callers leave it
    unset and get a fresh random nonce.
    """
    key = check_key(key)
    _spend_nonce(key)
    if nonce is None:
        nonce = os.urandom(NONCE_SIZE)
    elif len(nonce) != NONCE_SIZE:
        raise InvalidParams("nonce must be 12 bytes")
    sealed = AESGCM(key).encrypt(nonce, plaintext, associated_data)
    return EncryptedBlob(nonce, sealed[:-TAG_SIZE], sealed[-TAG_SIZE:])


def decrypt_blob(key: SymmetricKey, blob: EncryptedBlob | bytes, associated_data: bytes = b"") -> bytes:
    key = check_key(key)
    if not isinstance(blob, EncryptedBlob):
        blob = EncryptedBlob.from_bytes(blob)
    if len(blob.nonce) != NONCE_SIZE or len(blob.tag) != TAG_SIZE:
        raise AuthenticationFailure("malformed blob")
    try:
        return AESGCM(key).decrypt(blob.nonce, blob.ciphertext + blob.tag, associated_data)
    except InvalidTag:
        raise AuthenticationFailure("authentication failed") from None


@dataclass(frozen=True)
class KdfParams:
    salt: bytes = field(default_factory=lambda: os.urandom(SALT_SIZE))
    n: int = 2**15
    r: int = 8
    p: int = 1

    def validate(self) -> None:
        if len(self.salt) != SALT_SIZE:
            raise InvalidParams(f"salt must be {SALT_SIZE} bytes")
        if self.n < 2 or self.n & (self.n - 1):
            raise InvalidParams("scrypt N must be a power of two >= 2")
        if self.r < 1 or self.p < 1:
            raise InvalidParams("scrypt r and p must be positive")
        if 128 * self.n * self.r > 2**31:
            raise InvalidParams("scrypt memory cost above 2 GiB is not supported")

    def to_bytes(self) -> bytes:
        return self.salt + self.n.to_bytes(8, "big") + self.r.to_bytes(4, "big") + self.p.to_bytes(4, "big")

    @classmethod
    def from_bytes(cls, data: bytes) -> KdfParams:
        if len(data) != SALT_SIZE + 16:
            raise InvalidParams("bad KDF parameter record")
        salt, rest = data[:SALT_SIZE], data[SALT_SIZE:]
        return cls(salt, int.from_bytes(rest[:8], "big"), int.from_bytes(rest[8:12], "big"),
                   int.from_bytes(rest[12:16], "big"))


def derive_key_from_passphrase(passphrase: str, params: KdfParams) -> SymmetricKey:
    if not passphrase:
        raise InvalidParams("passphrase must not be empty")
    params.validate()
    kdf = Scrypt(salt=params.salt, length=KEY_SIZE, n=params.n, r=params.r, p=params.p)
    return kdf.derive(passphrase.encode("utf-8"))


def derive_child_key(parent: SymmetricKey, child_label: bytes) -> SymmetricKey:
    """Key-tree step: SHA-256 over the parent key followed by the child label."""
    if not child_label:
        raise InvalidParams("child label must not be empty")
    return hashlib.sha256(check_key(parent) + child_label).digest()


def oid_label(oid: int) -> bytes:
    return oid.to_bytes(8, "big")


def compress(data: bytes) -> bytes:
    return zlib.compress(data, ZLIB_LEVEL)


def decompress(data: bytes) -> bytes:
    try:
        return zlib.decompress(data)
    except zlib.error as exc:
        raise CorruptStream(str(exc)) from None


def seal(key: SymmetricKey, oid: int, plaintext: bytes) -> bytes:
    """Compress, then encrypt bound to ``oid``; returns the wire encoding."""
    return encrypt_blob(key, compress(plaintext), oid_label(oid)).to_bytes()


def open_sealed(key: SymmetricKey, oid: int, data: bytes) -> bytes:
    return decompress(decrypt_blob(key, EncryptedBlob.from_bytes(data), oid_label(oid)))
