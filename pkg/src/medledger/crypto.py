"""Hashing, identities, signatures, and envelope encryption of record payloads.

SHA-256 is the single hash. Signatures are Ed25519 (deterministic, fixed
64-byte output); encryption key agreement uses X25519 with AES-GCM, so every
identity carries one signing keypair and one encryption keypair, both derived
from the same seed. Addresses are the last 20 bytes of the SHA-256 of the raw
signing public key, rendered as 40 lowercase hex chars.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, replace
from functools import lru_cache

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.hashes import SHA256
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.hazmat.primitives.serialization import (
    Encoding,
    NoEncryption,
    PrivateFormat,
    PublicFormat,
)

from .codec import register_record

DIGEST_SIZE = 32
SIGNATURE_SIZE = 64
ADDRESS_HEX_LEN = 40

_SIGN_DOMAIN = b"medledger/sign:"
_ENCRYPT_DOMAIN = b"medledger/encrypt:"
_WRAP_INFO = b"medledger/record-key-wrap"


class RecordAccessError(Exception):
    """Decryption or grant attempted by an address without a wrapped key."""


def digest(data: bytes) -> bytes:
    """SHA-256 of data; always 32 bytes."""
    return hashlib.sha256(data).digest()


@dataclass(frozen=True)
class Identity:
    """A keyholder: Ed25519 signing pair, X25519 encryption pair, address."""

    address: str
    public_key: bytes
    enc_public_key: bytes
    _signing_key: Ed25519PrivateKey
    _enc_key: X25519PrivateKey

    @property
    def recipient(self) -> "Recipient":
        return Recipient(self.address, self.enc_public_key)

    def private_seed_bytes(self) -> bytes:
        """Raw signing private key; only the demo keystore persists this."""
        return self._signing_key.private_bytes(
            Encoding.Raw, PrivateFormat.Raw, NoEncryption()
        )


@dataclass(frozen=True)
class Recipient:
    """Public half of an identity, enough to wrap a record key to it."""

    address: str
    enc_public_key: bytes


def address_from_public_key(public_key: bytes) -> str:
    return digest(public_key)[-20:].hex()


def generate_identity(seed: bytes | str) -> Identity:
    """Derive a full identity from a non-empty seed; same seed, same identity."""
    if isinstance(seed, str):
        seed = seed.encode("utf-8")
    if not seed:
        raise ValueError("identity seed must be non-empty")
    signing_key = Ed25519PrivateKey.from_private_bytes(digest(_SIGN_DOMAIN + seed))
    enc_key = X25519PrivateKey.from_private_bytes(digest(_ENCRYPT_DOMAIN + seed))
    public_key = signing_key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    enc_public = enc_key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    return Identity(
        address=address_from_public_key(public_key),
        public_key=public_key,
        enc_public_key=enc_public,
        _signing_key=signing_key,
        _enc_key=enc_key,
    )


def sign(identity: Identity, message: bytes) -> bytes:
    return identity._signing_key.sign(message)


def verify(public_key: bytes, message: bytes, signature: bytes) -> bool:
    """True iff signature is valid; malformed inputs return False, never raise."""
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
        return True
    except (InvalidSignature, ValueError, TypeError):
        return False


@lru_cache(maxsize=65536)
def _verify_cached(public_key: bytes, message_digest: bytes, signature: bytes,
                   message: bytes) -> bool:
    return verify(public_key, message, signature)


def verify_cached(public_key: bytes, message: bytes, signature: bytes) -> bool:
    """Cache-backed verify for validation hot paths; same semantics as verify."""
    return _verify_cached(public_key, digest(message), signature, message)


@register_record
@dataclass(frozen=True)
class WrappedKey:
    """A record key wrapped to one grantee via ephemeral X25519 + AES-GCM."""

    grantee_enc_public_key: bytes
    ephemeral_public_key: bytes
    nonce: bytes
    wrapped: bytes


@register_record
@dataclass(frozen=True)
class EncryptedRecord:
    """AES-GCM ciphertext plus the record key wrapped per authorized address."""

    ciphertext: bytes
    nonce: bytes
    wrapped_keys: dict[str, WrappedKey]


def _wrap_key(record_key: bytes, grantee_enc_public: bytes) -> WrappedKey:
    ephemeral = X25519PrivateKey.generate()
    eph_public = ephemeral.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    shared = ephemeral.exchange(X25519PublicKey.from_public_bytes(grantee_enc_public))
    kek = HKDF(algorithm=SHA256(), length=32, salt=None, info=_WRAP_INFO).derive(
        shared + eph_public + grantee_enc_public
    )
    nonce = os.urandom(12)
    wrapped = AESGCM(kek).encrypt(nonce, record_key, None)
    return WrappedKey(grantee_enc_public, eph_public, nonce, wrapped)


def _unwrap_key(entry: WrappedKey, identity: Identity) -> bytes:
    shared = identity._enc_key.exchange(
        X25519PublicKey.from_public_bytes(entry.ephemeral_public_key)
    )
    kek = HKDF(algorithm=SHA256(), length=32, salt=None, info=_WRAP_INFO).derive(
        shared + entry.ephemeral_public_key + entry.grantee_enc_public_key
    )
    try:
        return AESGCM(kek).decrypt(entry.nonce, entry.wrapped, None)
    except Exception as exc:
        raise RecordAccessError(
            f"wrapped key for {identity.address} does not unwrap"
        ) from exc


def encrypt_record(plaintext: bytes, owner: Identity | Recipient) -> EncryptedRecord:
    """Encrypt under a fresh random key wrapped to the owner alone."""
    record_key = os.urandom(32)
    nonce = os.urandom(12)
    ciphertext = AESGCM(record_key).encrypt(nonce, plaintext, None)
    return EncryptedRecord(
        ciphertext=ciphertext,
        nonce=nonce,
        wrapped_keys={owner.address: _wrap_key(record_key, owner.enc_public_key)},
    )


def decrypt_record(record: EncryptedRecord, identity: Identity) -> bytes:
    entry = record.wrapped_keys.get(identity.address)
    if entry is None:
        raise RecordAccessError(f"address {identity.address} holds no key")
    record_key = _unwrap_key(entry, identity)
    try:
        return AESGCM(record_key).decrypt(record.nonce, record.ciphertext, None)
    except Exception as exc:
        raise RecordAccessError("record does not decrypt under held key") from exc


def grant_record_access(
    record: EncryptedRecord, holder: Identity, grantee: Identity | Recipient
) -> EncryptedRecord:
    """Add a grantee; the caller must already hold a wrapped key. Idempotent."""
    entry = record.wrapped_keys.get(holder.address)
    if entry is None:
        raise RecordAccessError(f"address {holder.address} may not grant access")
    record_key = _unwrap_key(entry, holder)
    wrapped = dict(record.wrapped_keys)
    wrapped[grantee.address] = _wrap_key(record_key, grantee.enc_public_key)
    return replace(record, wrapped_keys=wrapped)


def revoke_record_access(
    record: EncryptedRecord, holder: Identity, removed: str
) -> EncryptedRecord:
    """Re-encrypt with a fresh key wrapped only to the remaining grantees.

    Revocation cannot claw back plaintext a grantee already decrypted; it only
    protects the state carried forward in the returned record.
    """
    entry = record.wrapped_keys.get(holder.address)
    if entry is None:
        raise RecordAccessError(f"address {holder.address} may not revoke access")
    plaintext = decrypt_record(record, holder)
    fresh_key = os.urandom(32)
    nonce = os.urandom(12)
    ciphertext = AESGCM(fresh_key).encrypt(nonce, plaintext, None)
    wrapped = {
        addr: _wrap_key(fresh_key, old.grantee_enc_public_key)
        for addr, old in record.wrapped_keys.items()
        if addr != removed
    }
    return EncryptedRecord(ciphertext=ciphertext, nonce=nonce, wrapped_keys=wrapped)
