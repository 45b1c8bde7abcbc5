"""The UDP telemetry protocol: envelope wire format, repeater forwarding,
and the gateway ingestion pipeline.

Wire layout (big-endian), total datagram at most 1074 bytes:

    bytes 0-3    magic "HGT1"
    byte  4      version 0x01
    byte  5      hop_count (mutable by repeaters, excluded from the tag)
    bytes 6-13   device_id
    bytes 14-21  seq (u64, starts at 1, strictly increasing per key epoch)
    bytes 22-33  nonce = epoch (u32) || seq (u64)
    bytes 34-    ChaCha20-Poly1305 ciphertext || 16-byte tag

The AEAD associated data is the 22-byte header with the hop_count byte set
to 0x00, so repeaters can bump hops without holding keys or breaking the
tag. Everything else is tamper-evident: flip any other byte and the tag
check fails with no hint of why.
"""

from __future__ import annotations

import enum
import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable

from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

from .encoding import f64, u32, u64, Reader, DecodeError as _EncDecodeError
from .errors import PayloadTooLarge
from .ids import EventKind, SecurityEvent

MAGIC = b"HGT1"
ENROLL_MAGIC = b"HGE1"
VERSION = 0x01
HEADER_LEN = 22
NONCE_LEN = 12
TAG_LEN = 16
MIN_DATAGRAM = HEADER_LEN + NONCE_LEN + TAG_LEN
MAX_PLAINTEXT = 1024
MAX_DATAGRAM = MIN_DATAGRAM + MAX_PLAINTEXT
MAX_METRIC_BYTES = 64
DEFAULT_MAX_HOPS = 2
HOP_OFFSET = 5


class EnvelopeError(Exception):
    """Decode rejection. `kind` is the stable outcome name."""

    kind = "error"


class BadMagic(EnvelopeError):
    kind = "BadMagic"


class BadVersion(EnvelopeError):
    kind = "BadVersion"


class UnknownDeviceError(EnvelopeError):
    kind = "UnknownDevice"


class AuthFailure(EnvelopeError):
    kind = "AuthFailure"


class MalformedBody(EnvelopeError):
    kind = "MalformedBody"


@dataclass(frozen=True)
class Reading:
    """Plaintext envelope body: one named metric sample."""

    metric: str
    value: float
    timestamp: int  # unix-ms at the device

    def validate(self) -> None:
        raw = self.metric.encode("utf-8")
        if not raw:
            raise ValueError("metric must be non-empty")
        if len(raw) > MAX_METRIC_BYTES:
            raise ValueError(f"metric exceeds {MAX_METRIC_BYTES} bytes")
        if not math.isfinite(self.value):
            raise ValueError("value must be finite")

    def encode(self) -> bytes:
        self.validate()
        raw = self.metric.encode("utf-8")
        return bytes([len(raw)]) + raw + f64(self.value) + u64(self.timestamp)


def decode_reading(body: bytes) -> Reading:
    try:
        r = Reader(body)
        metric_raw = r.bytes_u8()
        metric = metric_raw.decode("utf-8")
        value = r.f64()
        timestamp = r.u64()
        r.expect_end()
    except (_EncDecodeError, UnicodeDecodeError) as e:
        raise MalformedBody(str(e)) from e
    if not metric_raw or len(metric_raw) > MAX_METRIC_BYTES:
        raise MalformedBody("bad metric length")
    if not math.isfinite(value):
        raise MalformedBody("non-finite value")
    return Reading(metric, value, timestamp)


def _header(hop_count: int, device_id: bytes, seq: int) -> bytes:
    return MAGIC + bytes([VERSION, hop_count]) + device_id + u64(seq)


def _nonce(epoch: int, seq: int) -> bytes:
    return u32(epoch) + u64(seq)


def seal_envelope(
    plaintext: bytes, key: bytes, device_id: bytes, seq: int, epoch: int
) -> bytes:
    """Low-level encode: arbitrary plaintext into a fresh (hop 0) envelope."""
    if len(plaintext) > MAX_PLAINTEXT:
        raise PayloadTooLarge(f"plaintext {len(plaintext)} > {MAX_PLAINTEXT}")
    if len(device_id) != 8:
        raise ValueError("device_id must be 8 bytes")
    if seq < 1:
        raise ValueError("seq starts at 1")
    header = _header(0, device_id, seq)
    nonce = _nonce(epoch, seq)
    sealed = ChaCha20Poly1305(key).encrypt(nonce, plaintext, header)
    return header + nonce + sealed


def encode_envelope(
    reading: Reading, key: bytes, device_id: bytes, seq: int, epoch: int
) -> bytes:
    return seal_envelope(reading.encode(), key, device_id, seq, epoch)


@dataclass(frozen=True)
class ParsedEnvelope:
    hop_count: int
    device_id: bytes
    seq: int
    nonce: bytes
    sealed: bytes  # ciphertext || tag

    def aad(self) -> bytes:
        return _header(0, self.device_id, self.seq)


def parse_envelope(datagram: bytes) -> ParsedEnvelope:
    """Structural parse only — no keys involved. Hostile input expected."""
    if len(datagram) < 4 or datagram[:4] != MAGIC:
        raise BadMagic("not a telemetry envelope")
    if len(datagram) < 5 or datagram[4] != VERSION:
        raise BadVersion(f"version {datagram[4] if len(datagram) > 4 else '?'}")
    if len(datagram) < MIN_DATAGRAM:
        raise MalformedBody(f"datagram {len(datagram)} < minimum {MIN_DATAGRAM}")
    if len(datagram) > MAX_DATAGRAM:
        raise MalformedBody(f"datagram {len(datagram)} > maximum {MAX_DATAGRAM}")
    return ParsedEnvelope(
        hop_count=datagram[HOP_OFFSET],
        device_id=datagram[6:14],
        seq=int.from_bytes(datagram[14:22], "big"),
        nonce=datagram[HEADER_LEN : HEADER_LEN + NONCE_LEN],
        sealed=datagram[HEADER_LEN + NONCE_LEN :],
    )


def open_envelope(env: ParsedEnvelope, key: bytes) -> bytes:
    """Authenticate and decrypt. Any tag mismatch — wrong key, tampered
    bytes, altered nonce — surfaces as the same AuthFailure."""
    try:
        return ChaCha20Poly1305(key).decrypt(env.nonce, env.sealed, env.aad())
    except Exception as e:
        raise AuthFailure("tag verification failed") from e


KeyLookup = Callable[[bytes], "tuple[bytes, int] | None"]


def decode_envelope(datagram: bytes, key_lookup: KeyLookup) -> tuple[bytes, int, Reading]:
    """Full decode: parse, look up the device key, authenticate, decrypt,
    and parse the reading. Raises an EnvelopeError subclass on rejection."""
    env = parse_envelope(datagram)
    entry = key_lookup(env.device_id)
    if entry is None:
        raise UnknownDeviceError(env.device_id.hex())
    key, _epoch = entry
    plaintext = open_envelope(env, key)
    return env.device_id, env.seq, decode_reading(plaintext)


# --- repeater ---------------------------------------------------------------


class ForwardAction(enum.Enum):
    FORWARD = "Forward"
    DROP_DUPLICATE = "DropDuplicate"
    DROP_HOPS = "DropHops"
    DROP_MALFORMED = "DropMalformed"


@dataclass(frozen=True)
class ForwardDecision:
    action: ForwardAction
    datagram: bytes | None = None  # set only for FORWARD


class RepeaterState:
    """Keyless store-and-forward relay: dedup by (device_id, seq) with an
    LRU cache, bounded hop depth. Never decrypts — it holds no keys."""

    def __init__(self, max_hops: int = DEFAULT_MAX_HOPS, cache_capacity: int = 1024):
        self.max_hops = max_hops
        self.cache_capacity = cache_capacity
        self._cache: OrderedDict[tuple[bytes, int], None] = OrderedDict()
        self.forwarded_count = 0
        self.dropped_dup_count = 0
        self.dropped_hops_count = 0
        self.dropped_malformed_count = 0

    def _remember(self, key: tuple[bytes, int]) -> None:
        self._cache[key] = None
        self._cache.move_to_end(key)
        while len(self._cache) > self.cache_capacity:
            self._cache.popitem(last=False)

    def seen(self, key: tuple[bytes, int]) -> bool:
        if key in self._cache:
            self._cache.move_to_end(key)
            return True
        return False


def repeater_forward(datagram: bytes, state: RepeaterState) -> ForwardDecision:
    """Fig.-5-style relay step: resend everything once, one hop deeper."""
    try:
        env = parse_envelope(datagram)
    except EnvelopeError:
        state.dropped_malformed_count += 1
        return ForwardDecision(ForwardAction.DROP_MALFORMED)
    key = (env.device_id, env.seq)
    if state.seen(key):
        state.dropped_dup_count += 1
        return ForwardDecision(ForwardAction.DROP_DUPLICATE)
    if env.hop_count >= state.max_hops:
        state.dropped_hops_count += 1
        return ForwardDecision(ForwardAction.DROP_HOPS)
    mutated = bytearray(datagram)
    mutated[HOP_OFFSET] = env.hop_count + 1
    state._remember(key)
    state.forwarded_count += 1
    return ForwardDecision(ForwardAction.FORWARD, bytes(mutated))


# --- gateway ingestion --------------------------------------------------------


class IngestOutcome(enum.Enum):
    STORED = "Stored"
    REJECTED_REPLAY = "RejectedReplay"
    REJECTED_UNKNOWN = "RejectedUnknown"
    REJECTED_AUTH = "RejectedAuth"
    REJECTED_QUARANTINED = "RejectedQuarantined"
    REJECTED_REVOKED = "RejectedRevoked"


def ingest(
    datagram: bytes,
    registry,
    sentinel,
    store,
    now_ms: int,
    source: str = "?",
) -> IngestOutcome:
    """Run one datagram through the gateway pipeline.

    Order is fixed: parse, device lookup, status check, replay check,
    decrypt, store. Every rejection feeds the IDS one event; a stored
    reading feeds it a CLEAN event. last_seq only moves forward, and only
    after the tag has verified.

    `registry` supplies lookup_device / telemetry_key / update_last_seq;
    `sentinel` consumes SecurityEvents; `store` persists readings with
    (device_id, seq) dedup.
    """

    def emit(kind: EventKind, device_id: bytes | None) -> None:
        sentinel.on_event(SecurityEvent(kind=kind, device_id=device_id, source=source, at=now_ms))

    try:
        env = parse_envelope(datagram)
    except EnvelopeError:
        # Structurally broken input from a hostile source: treated exactly
        # like a failed tag, nothing leaked about why.
        emit(EventKind.AUTH_FAILURE, None)
        return IngestOutcome.REJECTED_AUTH

    record = registry.lookup_device(env.device_id)
    if record is None:
        emit(EventKind.UNKNOWN_DEVICE, env.device_id)
        return IngestOutcome.REJECTED_UNKNOWN

    status = record.status.name if hasattr(record.status, "name") else str(record.status)
    if status == "QUARANTINED":
        emit(EventKind.QUARANTINED_TRAFFIC, env.device_id)
        return IngestOutcome.REJECTED_QUARANTINED
    if status == "REVOKED":
        emit(EventKind.REVOKED_TRAFFIC, env.device_id)
        return IngestOutcome.REJECTED_REVOKED

    if env.seq <= record.last_seq:
        emit(EventKind.REPLAY, env.device_id)
        return IngestOutcome.REJECTED_REPLAY

    key, _epoch = registry.telemetry_key(env.device_id)
    try:
        plaintext = open_envelope(env, key)
        reading = decode_reading(plaintext)
    except EnvelopeError:
        emit(EventKind.AUTH_FAILURE, env.device_id)
        return IngestOutcome.REJECTED_AUTH

    store.insert_reading(
        device_id=env.device_id,
        seq=env.seq,
        metric=reading.metric,
        value=reading.value,
        device_ts=reading.timestamp,
        arrival_ts=now_ms,
    )
    registry.update_last_seq(env.device_id, env.seq, now_ms)
    emit(EventKind.CLEAN, env.device_id)
    return IngestOutcome.STORED
