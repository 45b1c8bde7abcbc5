"""Private certificate hierarchy and sealed key vault.

The gateway mints its own root identity and issues device / operator /
repeater certificates from it — a single-level private hierarchy with
X.509-like semantics but a custom canonical binary encoding (deterministic,
bit-exact, no ASN.1). Signing keys live only inside the KeyVault, which is
sealed to disk under a file-kept master secret and never exports key bytes;
callers hold opaque handles and ask the vault to sign.

Signatures are Ed25519 (deterministic, 32-byte public keys, 64-byte
signatures). Validity timestamps are unix seconds from an injected clock.
"""

from __future__ import annotations

import enum
import hmac
import os
import secrets
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .encoding import Reader, bytes_u16, u8, u64
from .errors import InvalidProof, RoleForbidden, UnknownHandle, VaultStorageError

SERIAL_LEN = 16
PUBKEY_LEN = 32
SIG_LEN = 64
MAX_NAME_BYTES = 128

ROOT_VALIDITY_DAYS = 3650  # 10 years

CERT_FILE_EXT = ".hgc"
VAULT_FILE = "vault.hgv"
VAULT_KEY_FILE = "vault.key"
_VAULT_MAGIC = b"HGV1"
_VAULT_VERSION = 1


class Role(enum.IntEnum):
    ROOT = 0
    DEVICE = 1
    OPERATOR = 2
    REPEATER = 3


class VerifyOutcome(enum.Enum):
    VALID = "Valid"
    EXPIRED = "Expired"
    NOT_YET_VALID = "NotYetValid"
    BAD_SIGNATURE = "BadSignature"
    REVOKED = "Revoked"
    UNKNOWN_ISSUER = "UnknownIssuer"


def _encode_name(name: str) -> bytes:
    raw = name.encode("utf-8")
    if len(raw) > MAX_NAME_BYTES:
        raise ValueError(f"name exceeds {MAX_NAME_BYTES} bytes: {name!r}")
    return bytes_u16(raw)


@dataclass(frozen=True)
class Certificate:
    """Immutable credential. `signature` covers the canonical bytes of all
    preceding fields (the to-be-signed region)."""

    serial: bytes
    subject: str
    issuer: str
    role: Role
    not_before: int  # unix seconds
    not_after: int
    public_key: bytes
    signature: bytes

    def __post_init__(self):
        if len(self.serial) != SERIAL_LEN:
            raise ValueError("serial must be 16 bytes")
        if len(self.public_key) != PUBKEY_LEN:
            raise ValueError("public_key must be 32 bytes")
        if len(self.signature) != SIG_LEN:
            raise ValueError("signature must be 64 bytes")
        if self.not_before >= self.not_after:
            raise ValueError("not_before must precede not_after")

    def tbs_bytes(self) -> bytes:
        return (
            self.serial
            + _encode_name(self.subject)
            + _encode_name(self.issuer)
            + u8(int(self.role))
            + u64(self.not_before)
            + u64(self.not_after)
            + self.public_key
        )

    def encode(self) -> bytes:
        return self.tbs_bytes() + self.signature

    @classmethod
    def decode(cls, data: bytes) -> "Certificate":
        r = Reader(data)
        serial = r.take(SERIAL_LEN)
        subject = r.bytes_u16().decode("utf-8")
        issuer = r.bytes_u16().decode("utf-8")
        role = Role(r.u8())
        not_before = r.u64()
        not_after = r.u64()
        public_key = r.take(PUBKEY_LEN)
        signature = r.take(SIG_LEN)
        r.expect_end()
        return cls(serial, subject, issuer, role, not_before, not_after, public_key, signature)


@dataclass(frozen=True)
class CertSigningRequest:
    """Request for a non-ROOT certificate. `proof` is a self-signature over
    the request's canonical bytes, proving possession of the private key."""

    subject: str
    role: Role
    public_key: bytes
    proof: bytes

    def __post_init__(self):
        if len(self.public_key) != PUBKEY_LEN:
            raise ValueError("public_key must be 32 bytes")
        if len(self.proof) != SIG_LEN:
            raise ValueError("proof must be 64 bytes")

    def tbs_bytes(self) -> bytes:
        return _encode_name(self.subject) + u8(int(self.role)) + self.public_key

    def encode(self) -> bytes:
        return self.tbs_bytes() + self.proof

    @classmethod
    def decode(cls, data: bytes) -> "CertSigningRequest":
        r = Reader(data)
        subject = r.bytes_u16().decode("utf-8")
        role = Role(r.u8())
        public_key = r.take(PUBKEY_LEN)
        proof = r.take(SIG_LEN)
        r.expect_end()
        return cls(subject, role, public_key, proof)

    def proof_valid(self) -> bool:
        return verify_signature(self.public_key, self.tbs_bytes(), self.proof)

    @classmethod
    def create(cls, subject: str, role: Role, signing_seed: bytes) -> "CertSigningRequest":
        """Build a CSR on the device side from its 32-byte Ed25519 seed."""
        if role == Role.ROOT:
            raise RoleForbidden("csr may not request ROOT")
        priv = Ed25519PrivateKey.from_private_bytes(signing_seed)
        pub = priv.public_key().public_bytes_raw()
        unsigned = cls(subject, role, pub, b"\x00" * SIG_LEN)
        proof = priv.sign(unsigned.tbs_bytes())
        return cls(subject, role, pub, proof)


def sign_with_seed(seed: bytes, message: bytes) -> bytes:
    return Ed25519PrivateKey.from_private_bytes(seed).sign(message)


def public_key_from_seed(seed: bytes) -> bytes:
    return Ed25519PrivateKey.from_private_bytes(seed).public_key().public_bytes_raw()


def verify_signature(public_key: bytes, message: bytes, signature: bytes) -> bool:
    if len(signature) != SIG_LEN:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
        return True
    except (InvalidSignature, ValueError):
        return False


@dataclass(frozen=True)
class RevocationEntry:
    serial: bytes
    revoked_at: int  # unix seconds
    reason: str


class RevocationList:
    """Append-only set of revoked serials. Membership check is total."""

    def __init__(self, entries: list[RevocationEntry] | None = None):
        self._entries: list[RevocationEntry] = list(entries or [])
        self._serials = {e.serial for e in self._entries}

    def revoke(self, serial: bytes, revoked_at: int, reason: str) -> bool:
        """Add a revocation. Returns False (and appends nothing) if the serial
        is already present — revocation is idempotent."""
        if serial in self._serials:
            return False
        self._entries.append(RevocationEntry(serial, revoked_at, reason))
        self._serials.add(serial)
        return True

    def is_revoked(self, serial: bytes) -> bool:
        return serial in self._serials

    def entries(self) -> list[RevocationEntry]:
        return list(self._entries)

    def __len__(self) -> int:
        return len(self._entries)


def verify_chain(
    cert: Certificate,
    root: Certificate,
    revocations: RevocationList | None = None,
    now: int | None = None,
) -> VerifyOutcome:
    """Validate `cert` against the single-level hierarchy rooted at `root`.

    Check order (first failure wins): UnknownIssuer, BadSignature,
    NotYetValid/Expired, Revoked. Total: never raises on hostile input.
    `now` is unix seconds; omitting it skips the validity-window check only
    if None is explicitly passed by legacy callers — callers should pass it.
    """
    if cert.issuer != root.subject:
        return VerifyOutcome.UNKNOWN_ISSUER
    if not verify_signature(root.public_key, cert.tbs_bytes(), cert.signature):
        return VerifyOutcome.BAD_SIGNATURE
    if now is not None:
        if now < cert.not_before:
            return VerifyOutcome.NOT_YET_VALID
        if now > cert.not_after:
            return VerifyOutcome.EXPIRED
    if revocations is not None and revocations.is_revoked(cert.serial):
        return VerifyOutcome.REVOKED
    return VerifyOutcome.VALID


# --- key vault -------------------------------------------------------------


def _hkdf(ikm: bytes, salt: bytes, info: bytes, length: int = 32) -> bytes:
    return HKDF(algorithm=hashes.SHA256(), length=length, salt=salt, info=info).derive(ikm)


class KeyVault:
    """Software emulation of sealed key storage (the TPM/PUF contract).

    Entries hold a 32-byte Ed25519 signing seed plus 32 bytes of secret key
    material (the telemetry KDF master secret for the root entry). The vault
    state is sealed to `vault.hgv` with ChaCha20-Poly1305 under a master
    secret kept in `vault.key` (0600). No operation returns private bytes;
    callers get opaque 16-byte-hex handles and public keys.
    """

    def __init__(self, path: str | None = None, master_secret: bytes | None = None):
        self._path = path
        self._master = master_secret if master_secret is not None else secrets.token_bytes(32)
        self._entries: dict[str, tuple[bytes, bytes]] = {}

    # -- lifecycle ---------------------------------------------------------

    @classmethod
    def create(cls, directory: str) -> "KeyVault":
        """Create a fresh vault in `directory`, writing the master secret."""
        key_path = os.path.join(directory, VAULT_KEY_FILE)
        master = secrets.token_bytes(32)
        fd = os.open(key_path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
        try:
            os.write(fd, master)
        finally:
            os.close(fd)
        vault = cls(os.path.join(directory, VAULT_FILE), master)
        vault._persist()
        return vault

    @classmethod
    def open(cls, directory: str) -> "KeyVault":
        key_path = os.path.join(directory, VAULT_KEY_FILE)
        vault_path = os.path.join(directory, VAULT_FILE)
        with open(key_path, "rb") as f:
            master = f.read()
        if len(master) != 32:
            raise VaultStorageError("vault master secret must be 32 bytes")
        vault = cls(vault_path, master)
        with open(vault_path, "rb") as f:
            blob = f.read()
        vault._load(blob)
        return vault

    def _seal_key(self) -> bytes:
        return _hkdf(self._master, salt=b"HGV1-seal", info=b"vault-state")

    def _persist(self) -> None:
        if self._path is None:
            return
        inner = b""
        inner += len(self._entries).to_bytes(2, "big")
        for handle, (seed, secret) in sorted(self._entries.items()):
            raw = handle.encode("ascii")
            inner += len(raw).to_bytes(1, "big") + raw + seed + secret
        nonce = secrets.token_bytes(12)
        ct = ChaCha20Poly1305(self._seal_key()).encrypt(nonce, inner, _VAULT_MAGIC)
        blob = _VAULT_MAGIC + bytes([_VAULT_VERSION]) + nonce + ct
        tmp = self._path + ".tmp"
        try:
            with open(tmp, "wb") as f:
                f.write(blob)
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp, self._path)
        except OSError as e:
            raise VaultStorageError(f"cannot persist vault: {e}") from e

    def _load(self, blob: bytes) -> None:
        if blob[:4] != _VAULT_MAGIC or len(blob) < 17:
            raise VaultStorageError("not a vault file")
        if blob[4] != _VAULT_VERSION:
            raise VaultStorageError(f"unsupported vault version {blob[4]}")
        nonce, ct = blob[5:17], blob[17:]
        try:
            inner = ChaCha20Poly1305(self._seal_key()).decrypt(nonce, ct, _VAULT_MAGIC)
        except InvalidSignature:
            raise VaultStorageError("vault seal verification failed")
        except Exception as e:  # cryptography raises InvalidTag
            raise VaultStorageError(f"vault seal verification failed: {e}") from e
        r = Reader(inner)
        count = r.u16()
        entries: dict[str, tuple[bytes, bytes]] = {}
        for _ in range(count):
            handle = r.bytes_u8().decode("ascii")
            seed = r.take(32)
            secret = r.take(32)
            entries[handle] = (seed, secret)
        r.expect_end()
        self._entries = entries

    # -- operations ----------------------------------------------------------

    def store(self, signing_seed: bytes, secret: bytes) -> str:
        """Seal a key pair + secret material; returns the opaque handle."""
        if len(signing_seed) != 32 or len(secret) != 32:
            raise ValueError("vault entries are 32+32 bytes")
        handle = secrets.token_bytes(16).hex()
        self._entries[handle] = (signing_seed, secret)
        self._persist()
        return handle

    def _entry(self, handle: str) -> tuple[bytes, bytes]:
        try:
            return self._entries[handle]
        except KeyError:
            raise UnknownHandle(f"no vault entry {handle!r}")

    def sign(self, handle: str, message: bytes) -> bytes:
        """Deterministic Ed25519 signature under the handle's key."""
        seed, _ = self._entry(handle)
        return Ed25519PrivateKey.from_private_bytes(seed).sign(message)

    def public_key(self, handle: str) -> bytes:
        seed, _ = self._entry(handle)
        return Ed25519PrivateKey.from_private_bytes(seed).public_key().public_bytes_raw()

    def derive_secret(self, handle: str, salt: bytes, info: bytes, length: int = 32) -> bytes:
        """HKDF over the handle's secret material. Derived working keys may
        leave the vault; the root secret itself never does."""
        _, secret = self._entry(handle)
        return _hkdf(secret, salt=salt, info=info, length=length)

    def contains_private_bytes(self, probe: bytes) -> bool:
        """Test helper for the opacity invariant: does any sealed entry equal
        this byte string? Does not reveal which."""
        for seed, secret in self._entries.values():
            if hmac.compare_digest(seed, probe) or hmac.compare_digest(secret, probe):
                return True
        return False


# --- root identity -----------------------------------------------------------


class SerialSource:
    """16-byte serial generator. Random by default; seeded mode counts up so
    reissued hierarchies are byte-reproducible."""

    def __init__(self, counter_start: int | None = None):
        self._counter = counter_start

    @property
    def counter(self) -> int | None:
        return self._counter

    def next(self) -> bytes:
        if self._counter is None:
            return secrets.token_bytes(SERIAL_LEN)
        serial = self._counter.to_bytes(SERIAL_LEN, "big")
        self._counter += 1
        return serial


@dataclass
class GatewayIdentity:
    root_cert: Certificate
    vault_handle: str
    vault: KeyVault
    serials: SerialSource


def generate_root_identity(
    vault: KeyVault,
    now_s: int,
    rng_seed: bytes | None = None,
    subject: str = "homegate-root",
) -> GatewayIdentity:
    """Mint the gateway's self-signed ROOT certificate (10-year validity).

    With `rng_seed` the signing seed, KDF master secret, and serials are all
    derived deterministically, so two runs produce identical cert bytes.
    The private material goes straight into the vault.
    """
    if rng_seed is not None:
        if len(rng_seed) != 32:
            raise ValueError("rng_seed must be 32 bytes")
        signing_seed = _hkdf(rng_seed, salt=b"HGR1-root", info=b"signing")
        master_secret = _hkdf(rng_seed, salt=b"HGR1-root", info=b"telemetry-master")
        serials = SerialSource(counter_start=1)
    else:
        signing_seed = secrets.token_bytes(32)
        master_secret = secrets.token_bytes(32)
        serials = SerialSource()

    handle = vault.store(signing_seed, master_secret)
    pub = vault.public_key(handle)
    not_before = now_s
    not_after = now_s + ROOT_VALIDITY_DAYS * 86400
    unsigned = Certificate(
        serial=serials.next(),
        subject=subject,
        issuer=subject,
        role=Role.ROOT,
        not_before=not_before,
        not_after=not_after,
        public_key=pub,
        signature=b"\x00" * SIG_LEN,
    )
    signature = vault.sign(handle, unsigned.tbs_bytes())
    root_cert = Certificate(
        unsigned.serial,
        unsigned.subject,
        unsigned.issuer,
        unsigned.role,
        unsigned.not_before,
        unsigned.not_after,
        unsigned.public_key,
        signature,
    )
    return GatewayIdentity(root_cert=root_cert, vault_handle=handle, vault=vault, serials=serials)


def issue_certificate(
    csr: CertSigningRequest,
    issuer: GatewayIdentity,
    validity_days: int,
    now_s: int,
) -> Certificate:
    """Issue a certificate from the root for a proven CSR."""
    if validity_days <= 0:
        raise ValueError("validity_days must be positive")
    if csr.role == Role.ROOT:
        raise RoleForbidden("cannot issue ROOT from a csr")
    if not csr.proof_valid():
        raise InvalidProof("csr proof does not verify")
    unsigned = Certificate(
        serial=issuer.serials.next(),
        subject=csr.subject,
        issuer=issuer.root_cert.subject,
        role=csr.role,
        not_before=now_s,
        not_after=now_s + validity_days * 86400,
        public_key=csr.public_key,
        signature=b"\x00" * SIG_LEN,
    )
    signature = issuer.vault.sign(issuer.vault_handle, unsigned.tbs_bytes())
    return Certificate(
        unsigned.serial,
        unsigned.subject,
        unsigned.issuer,
        unsigned.role,
        unsigned.not_before,
        unsigned.not_after,
        unsigned.public_key,
        signature,
    )


def save_certificate(cert: Certificate, path: str) -> None:
    with open(path, "wb") as f:
        f.write(cert.encode())


def load_certificate(path: str) -> Certificate:
    with open(path, "rb") as f:
        return Certificate.decode(f.read())
