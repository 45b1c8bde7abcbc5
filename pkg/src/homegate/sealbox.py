"""Anonymous key wrapping (sealed box).

Encrypts small secrets (telemetry keys, export bundle keys) to a recipient
public key: ephemeral X25519 agreement, HKDF-SHA256 to a one-shot key, then
the same ChaCha20-Poly1305 AEAD used on the telemetry wire. The blob is
`ephemeral_pub(32) || ciphertext(len+16)`; the nonce is fixed zero because
the key encrypts exactly one message.

Enrollment identities are Ed25519 keys, so wrapping to a device uses the
standard birational map from the Edwards curve to Curve25519:
`u = (1+y)/(1-y) mod p` for public keys, and the clamped low half of
SHA-512(seed) as the Montgomery scalar for private keys.
"""

from __future__ import annotations

import hashlib
import secrets

from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

_P = 2**255 - 19
_KDF_SALT = b"HGE1-keywrap"
_ZERO_NONCE = b"\x00" * 12

BLOB_OVERHEAD = 32 + 16


class UnwrapError(Exception):
    """Blob failed authentication or is malformed."""


def ed25519_public_to_x25519(ed_public: bytes) -> bytes:
    """Map an Ed25519 public key to the corresponding X25519 public key."""
    if len(ed_public) != 32:
        raise ValueError("ed25519 public key must be 32 bytes")
    y = int.from_bytes(ed_public, "little") & ((1 << 255) - 1)
    if y >= _P:
        raise ValueError("invalid ed25519 public key encoding")
    denom = (1 - y) % _P
    if denom == 0:
        raise ValueError("ed25519 public key has no x25519 equivalent")
    u = (1 + y) * pow(denom, _P - 2, _P) % _P
    return u.to_bytes(32, "little")


def ed25519_seed_to_x25519_private(seed: bytes) -> bytes:
    """Derive the X25519 private scalar matching an Ed25519 seed. The X25519
    implementation clamps on use, so the raw low half of SHA-512 suffices."""
    if len(seed) != 32:
        raise ValueError("ed25519 seed must be 32 bytes")
    return hashlib.sha512(seed).digest()[:32]


def _kek(shared: bytes, eph_pub: bytes, recipient_pub: bytes) -> bytes:
    return HKDF(
        algorithm=hashes.SHA256(),
        length=32,
        salt=_KDF_SALT,
        info=eph_pub + recipient_pub,
    ).derive(shared)


def seal(recipient_x25519_pub: bytes, plaintext: bytes, eph_seed: bytes | None = None) -> bytes:
    """Wrap `plaintext` to an X25519 recipient. `eph_seed` fixes the ephemeral
    key for reproducible tests; production callers leave it None."""
    eph_priv = (
        X25519PrivateKey.from_private_bytes(eph_seed)
        if eph_seed is not None
        else X25519PrivateKey.from_private_bytes(secrets.token_bytes(32))
    )
    eph_pub = eph_priv.public_key().public_bytes_raw()
    shared = eph_priv.exchange(X25519PublicKey.from_public_bytes(recipient_x25519_pub))
    key = _kek(shared, eph_pub, recipient_x25519_pub)
    ct = ChaCha20Poly1305(key).encrypt(_ZERO_NONCE, plaintext, b"")
    return eph_pub + ct


def unseal(recipient_x25519_priv: bytes, blob: bytes) -> bytes:
    if len(blob) < BLOB_OVERHEAD:
        raise UnwrapError("blob too short")
    eph_pub, ct = blob[:32], blob[32:]
    priv = X25519PrivateKey.from_private_bytes(recipient_x25519_priv)
    recipient_pub = priv.public_key().public_bytes_raw()
    try:
        shared = priv.exchange(X25519PublicKey.from_public_bytes(eph_pub))
        key = _kek(shared, eph_pub, recipient_pub)
        return ChaCha20Poly1305(key).decrypt(_ZERO_NONCE, ct, b"")
    except Exception as e:
        raise UnwrapError("unwrap failed") from e


def seal_to_ed25519(recipient_ed_pub: bytes, plaintext: bytes, eph_seed: bytes | None = None) -> bytes:
    return seal(ed25519_public_to_x25519(recipient_ed_pub), plaintext, eph_seed)


def unseal_with_ed25519_seed(recipient_ed_seed: bytes, blob: bytes) -> bytes:
    return unseal(ed25519_seed_to_x25519_private(recipient_ed_seed), blob)
