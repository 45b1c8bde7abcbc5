"""Telemetry persistence, bucket aggregation, and encrypted batch export.

Readings live in an append-only binary log (`readings.hgr`) mirrored in
memory; (device_id, seq) is unique, so replays and duplicated deliveries
are idempotent no-ops at the storage layer too. Aggregation queries work on
aligned time buckets over the device timestamp.

Export bundles carry the raw readings AEAD-encrypted under a fresh bundle
key that is sealed to the recipient's X25519 public key — plaintext never
leaves the gateway, matching the ciphertext-only contract toward untrusted
cloud sinks.
"""

from __future__ import annotations

import os
import secrets
from dataclasses import dataclass

from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

from . import sealbox
from .encoding import Reader, bytes_u16, bytes_u32, f64, u8, u16, u32, u64, DecodeError
from .errors import BadRange, StorageFailure

READINGS_FILE = "readings.hgr"
BUNDLE_MAGIC = b"HGX1"
BUNDLE_VERSION = 0x01
DEFAULT_MAX_READINGS = 1_000_000

AGGREGATES = ("raw", "mean", "min", "max", "count")


@dataclass(frozen=True)
class StoredReading:
    device_id: bytes
    seq: int
    metric: str
    value: float
    device_ts: int  # unix-ms from the device
    arrival_ts: int  # unix-ms at the gateway

    def encode(self) -> bytes:
        raw = self.metric.encode("utf-8")
        return (
            self.device_id
            + u64(self.seq)
            + u8(len(raw))
            + raw
            + f64(self.value)
            + u64(self.device_ts)
            + u64(self.arrival_ts)
        )

    @classmethod
    def decode(cls, data: bytes) -> "StoredReading":
        r = Reader(data)
        device_id = r.take(8)
        seq = r.u64()
        metric = r.bytes_u8().decode("utf-8")
        value = r.f64()
        device_ts = r.u64()
        arrival_ts = r.u64()
        r.expect_end()
        return cls(device_id, seq, metric, value, device_ts, arrival_ts)

    def to_dict(self) -> dict:
        return {
            "device_id": self.device_id.hex(),
            "seq": self.seq,
            "metric": self.metric,
            "value": self.value,
            "device_ts": self.device_ts,
            "arrival_ts": self.arrival_ts,
        }


@dataclass(frozen=True)
class Bucket:
    start_ms: int
    value: float | int

    def to_dict(self) -> dict:
        return {"start_ms": self.start_ms, "value": self.value}


class ReadingStore:
    """In-memory table with an append-only file behind it. Single writer;
    queries read consistent in-memory state."""

    def __init__(self, directory: str | None = None, max_readings: int = DEFAULT_MAX_READINGS):
        self._dir = directory
        self.max_readings = max_readings
        self._rows: list[StoredReading] = []
        self._seen: set[tuple[bytes, int]] = set()
        self._fh = None
        if directory is not None:
            self._path = os.path.join(directory, READINGS_FILE)
            self._load()
            self._fh = open(self._path, "ab")

    def _load(self) -> None:
        if not os.path.exists(self._path):
            return
        with open(self._path, "rb") as f:
            data = f.read()
        pos = 0
        clean = 0
        while pos + 4 <= len(data):
            rec_len = int.from_bytes(data[pos : pos + 4], "big")
            if pos + 4 + rec_len > len(data):
                break  # torn tail from a crash
            try:
                row = StoredReading.decode(data[pos + 4 : pos + 4 + rec_len])
            except (DecodeError, ValueError):
                break
            key = (row.device_id, row.seq)
            if key not in self._seen:
                self._rows.append(row)
                self._seen.add(key)
            clean = pos + 4 + rec_len
            pos = clean
        if clean < len(data):
            with open(self._path, "r+b") as f:
                f.truncate(clean)

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __len__(self) -> int:
        return len(self._rows)

    def insert_reading(
        self,
        device_id: bytes,
        seq: int,
        metric: str,
        value: float,
        device_ts: int,
        arrival_ts: int,
    ) -> bool:
        """Exactly-once storage: duplicates of (device_id, seq) are no-ops."""
        key = (device_id, seq)
        if key in self._seen:
            return False
        row = StoredReading(device_id, seq, metric, value, device_ts, arrival_ts)
        if self._fh is not None:
            try:
                encoded = row.encode()
                self._fh.write(u32(len(encoded)) + encoded)
                self._fh.flush()
            except OSError as e:
                raise StorageFailure(f"readings append failed: {e}") from e
        self._rows.append(row)
        self._seen.add(key)
        if len(self._rows) > self.max_readings:
            self._prune()
        return True

    def _prune(self) -> None:
        # FIFO prune down to the cap; the file keeps history until compaction,
        # which desk-scale deployments never need.
        drop = len(self._rows) - self.max_readings
        for row in self._rows[:drop]:
            self._seen.discard((row.device_id, row.seq))
        self._rows = self._rows[drop:]

    def count_for_device(self, device_id: bytes) -> int:
        return sum(1 for r in self._rows if r.device_id == device_id)

    def max_seq(self, device_id: bytes) -> int:
        return max((r.seq for r in self._rows if r.device_id == device_id), default=0)

    def device_ids(self) -> set[bytes]:
        return {r.device_id for r in self._rows}

    def rows(self) -> list[StoredReading]:
        return list(self._rows)

    # -- queries ------------------------------------------------------------

    def select(self, device_id: bytes | None, from_ms: int, to_ms: int) -> list[StoredReading]:
        """Rows with device timestamp in [from_ms, to_ms), oldest first."""
        if from_ms > to_ms:
            raise BadRange(f"from {from_ms} > to {to_ms}")
        rows = [
            r
            for r in self._rows
            if (device_id is None or r.device_id == device_id)
            and from_ms <= r.device_ts < to_ms
        ]
        rows.sort(key=lambda r: (r.device_ts, r.seq))
        return rows

    def query_readings(
        self,
        device_id: bytes,
        from_ms: int,
        to_ms: int,
        bucket_s: int = 0,
        aggregate: str = "raw",
    ) -> list[StoredReading] | list[Bucket]:
        if aggregate not in AGGREGATES:
            raise ValueError(f"aggregate must be one of {AGGREGATES}")
        rows = self.select(device_id, from_ms, to_ms)
        if aggregate == "raw":
            return rows
        if bucket_s < 1:
            raise ValueError("bucket must be >= 1 second for aggregates")
        bucket_ms = bucket_s * 1000
        groups: dict[int, list[float]] = {}
        for row in rows:
            start = (row.device_ts // bucket_ms) * bucket_ms
            groups.setdefault(start, []).append(row.value)
        out: list[Bucket] = []
        for start in sorted(groups):
            values = groups[start]
            if aggregate == "mean":
                out.append(Bucket(start, sum(values) / len(values)))
            elif aggregate == "min":
                out.append(Bucket(start, min(values)))
            elif aggregate == "max":
                out.append(Bucket(start, max(values)))
            elif aggregate == "count":
                out.append(Bucket(start, len(values)))
        return out


# --- encrypted export ----------------------------------------------------------


@dataclass(frozen=True)
class EncryptedBundle:
    from_ms: int
    to_ms: int
    created_at: int
    device_ids: tuple[bytes, ...]
    record_count: int
    key_wrap: bytes
    nonce: bytes
    payload: bytes  # AEAD ciphertext || tag

    def header_bytes(self) -> bytes:
        out = (
            BUNDLE_MAGIC
            + u8(BUNDLE_VERSION)
            + u64(self.from_ms)
            + u64(self.to_ms)
            + u64(self.created_at)
            + u16(len(self.device_ids))
        )
        for device_id in self.device_ids:
            out += device_id
        out += u32(self.record_count)
        out += bytes_u16(self.key_wrap)
        return out

    def encode(self) -> bytes:
        return self.header_bytes() + self.nonce + bytes_u32(self.payload)

    @classmethod
    def decode(cls, data: bytes) -> "EncryptedBundle":
        r = Reader(data)
        if r.take(4) != BUNDLE_MAGIC:
            raise DecodeError("not a bundle")
        if r.u8() != BUNDLE_VERSION:
            raise DecodeError("unsupported bundle version")
        from_ms = r.u64()
        to_ms = r.u64()
        created_at = r.u64()
        device_ids = tuple(r.take(8) for _ in range(r.u16()))
        record_count = r.u32()
        key_wrap = r.bytes_u16()
        nonce = r.take(12)
        payload = r.bytes_u32()
        r.expect_end()
        return cls(from_ms, to_ms, created_at, device_ids, record_count, key_wrap, nonce, payload)

    def bundle_hash(self) -> bytes:
        import hashlib

        return hashlib.sha256(self.encode()).digest()


def _encode_rows(rows: list[StoredReading]) -> bytes:
    out = b""
    for row in rows:
        encoded = row.encode()
        out += u32(len(encoded)) + encoded
    return out


def _decode_rows(data: bytes) -> list[StoredReading]:
    r = Reader(data)
    rows = []
    while r.remaining:
        rows.append(StoredReading.decode(r.bytes_u32()))
    return rows


def export_batch(
    store: ReadingStore,
    from_ms: int,
    to_ms: int,
    recipient_public_key: bytes,
    now_ms: int,
    rng_seed: bytes | None = None,
) -> EncryptedBundle:
    """Bundle all readings in [from_ms, to_ms) for an untrusted sink.

    An empty range yields an empty-but-valid bundle. The caller audits the
    bundle hash; decryption requires the recipient's private key.
    """
    if from_ms > to_ms:
        raise BadRange(f"from {from_ms} > to {to_ms}")
    rows = store.select(None, from_ms, to_ms)
    bundle_key = secrets.token_bytes(32) if rng_seed is None else rng_seed
    nonce = b"\x00" * 12  # single-use key
    key_wrap = sealbox.seal(recipient_public_key, bundle_key)
    device_ids = tuple(sorted({r.device_id for r in rows}))
    header = (
        BUNDLE_MAGIC
        + u8(BUNDLE_VERSION)
        + u64(from_ms)
        + u64(to_ms)
        + u64(now_ms)
        + u16(len(device_ids))
        + b"".join(device_ids)
        + u32(len(rows))
        + bytes_u16(key_wrap)
    )
    payload = ChaCha20Poly1305(bundle_key).encrypt(nonce, _encode_rows(rows), header)
    return EncryptedBundle(
        from_ms, to_ms, now_ms, device_ids, len(rows), key_wrap, nonce, payload
    )


class BundleDecryptError(Exception):
    """Wrong key or tampered bundle."""


def open_bundle(bundle: EncryptedBundle, recipient_private_key: bytes) -> list[StoredReading]:
    """Recipient-side decrypt; raises BundleDecryptError on any mismatch."""
    try:
        bundle_key = sealbox.unseal(recipient_private_key, bundle.key_wrap)
    except sealbox.UnwrapError as e:
        raise BundleDecryptError("key unwrap failed") from e
    try:
        plaintext = ChaCha20Poly1305(bundle_key).decrypt(
            bundle.nonce, bundle.payload, bundle.header_bytes()
        )
    except Exception as e:
        raise BundleDecryptError("payload authentication failed") from e
    return _decode_rows(plaintext)
