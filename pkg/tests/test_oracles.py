"""Anchor the pure-Python oracles against the production crypto library.

Two independent implementations (pure Python here, OpenSSL via `cryptography`
in the package) agreeing across randomized inputs is the ground truth that
every frozen golden vector in this suite rests on.
"""

import random

from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from oracles import (
    chacha20poly1305_open,
    chacha20poly1305_seal,
    ed25519_public_key,
    ed25519_sign,
    ed25519_verify,
    hkdf_sha256,
)

rng = random.Random(0xC0FFEE)


def _rand(n: int) -> bytes:
    return rng.randbytes(n)


def test_aead_oracle_agrees_with_library():
    for _ in range(50):
        key, nonce = _rand(32), _rand(12)
        aad = _rand(rng.randrange(0, 40))
        pt = _rand(rng.randrange(0, 200))
        ours = chacha20poly1305_seal(key, nonce, pt, aad)
        theirs = ChaCha20Poly1305(key).encrypt(nonce, pt, aad)
        assert ours == theirs


def test_aead_oracle_roundtrip_and_tamper():
    key, nonce, aad, pt = _rand(32), _rand(12), b"hdr", b"payload"
    sealed = chacha20poly1305_seal(key, nonce, pt, aad)
    assert chacha20poly1305_open(key, nonce, sealed, aad) == pt
    tampered = bytearray(sealed)
    tampered[0] ^= 1
    assert chacha20poly1305_open(key, nonce, bytes(tampered), aad) is None
    assert chacha20poly1305_open(key, nonce, sealed, b"other") is None


def test_ed25519_oracle_agrees_with_library():
    for _ in range(10):
        seed = _rand(32)
        msg = _rand(rng.randrange(0, 100))
        lib_priv = Ed25519PrivateKey.from_private_bytes(seed)
        assert ed25519_public_key(seed) == lib_priv.public_key().public_bytes_raw()
        assert ed25519_sign(seed, msg) == lib_priv.sign(msg)


def test_ed25519_oracle_verify():
    seed, msg = _rand(32), b"hello"
    pub = ed25519_public_key(seed)
    sig = ed25519_sign(seed, msg)
    assert ed25519_verify(pub, msg, sig)
    assert not ed25519_verify(pub, b"other", sig)
    bad = bytearray(sig)
    bad[3] ^= 0x40
    assert not ed25519_verify(pub, msg, bytes(bad))


def test_hkdf_oracle_agrees_with_library():
    for _ in range(20):
        ikm, salt = _rand(32), _rand(16)
        info = _rand(rng.randrange(0, 30))
        length = rng.randrange(16, 80)
        ours = hkdf_sha256(ikm, salt, info, length)
        theirs = HKDF(
            algorithm=hashes.SHA256(), length=length, salt=salt, info=info
        ).derive(ikm)
        assert ours == theirs
