"""Device on-boarding and the fleet registry.

Devices submit a CSR over UDP (magic "HGE1", same port as telemetry); the
request waits PENDING until an operator approves or denies it. Approval
issues a DEVICE certificate, allocates a device id and zone address, derives
the device's telemetry key from the vault-held master secret, and wraps that
key to the device's enrollment public key — end devices stay thin: no key
generation beyond their one Ed25519 seed.

The registry is also the ingest pipeline's view of the fleet: status, key
epoch, and the per-device replay floor (last_seq).
"""

from __future__ import annotations

import enum
import hashlib
import ipaddress
from dataclasses import dataclass
from typing import Callable

from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .encoding import Reader, bytes_u16, u32, u64
from .errors import (
    AlreadyQuarantined,
    DuplicatePending,
    InvalidProof,
    NotPending,
    NotQuarantined,
    RegistryFull,
    RoleForbidden,
    UnknownDevice,
    UnknownRequest,
)
from . import sealbox
from .pki import (
    Certificate,
    CertSigningRequest,
    GatewayIdentity,
    RevocationList,
    Role,
    issue_certificate,
)
from .segmentation import ZoneRegistry

KDF_SALT = b"HGT1-telemetry"
DEFAULT_CERT_VALIDITY_DAYS = 365
DEFAULT_MAX_PENDING = 1024
DEFAULT_PENDING_TTL_S = 600
MAX_REQUESTED_NAME_BYTES = 64

ENROLL_MAGIC = b"HGE1"
ENROLL_VERSION = 0x01
MSG_REQUEST = 1
MSG_APPROVED = 2
MSG_DENIED = 3


def derive_device_key(master_secret: bytes, device_id: bytes, epoch: int) -> bytes:
    """Telemetry key for one (device, epoch): HKDF-SHA256 with a fixed salt
    and info = device_id || epoch, so epochs are domain-separated."""
    if len(device_id) != 8:
        raise ValueError("device_id must be 8 bytes")
    return HKDF(
        algorithm=hashes.SHA256(),
        length=32,
        salt=KDF_SALT,
        info=device_id + u32(epoch),
    ).derive(master_secret)


class RequestState(enum.Enum):
    PENDING = "PENDING"
    APPROVED = "APPROVED"
    DENIED = "DENIED"
    EXPIRED = "EXPIRED"


class DeviceStatus(enum.Enum):
    ACTIVE = "ACTIVE"
    QUARANTINED = "QUARANTINED"
    REVOKED = "REVOKED"


@dataclass
class EnrollmentRequest:
    request_id: bytes  # 16 bytes
    csr: CertSigningRequest
    requested_name: str
    received_at: int  # unix-ms
    source_address: str
    state: RequestState = RequestState.PENDING

    def to_dict(self) -> dict:
        return {
            "request_id": self.request_id.hex(),
            "requested_name": self.requested_name,
            "subject": self.csr.subject,
            "role": self.csr.role.name,
            "public_key": self.csr.public_key.hex(),
            "received_at": self.received_at,
            "source_address": self.source_address,
            "state": self.state.value,
        }


@dataclass
class DeviceRecord:
    device_id: bytes  # 8 bytes
    name: str
    certificate: Certificate
    zone: str
    telemetry_key_epoch: int
    status: DeviceStatus
    last_seq: int
    address: ipaddress.IPv4Address
    last_seen: int = 0  # unix-ms of the newest accepted reading

    def to_dict(self) -> dict:
        return {
            "device_id": self.device_id.hex(),
            "name": self.name,
            "zone": self.zone,
            "status": self.status.value,
            "epoch": self.telemetry_key_epoch,
            "last_seq": self.last_seq,
            "last_seen": self.last_seen,
            "address": str(self.address),
            "cert_serial": self.certificate.serial.hex(),
            "cert_not_after": self.certificate.not_after,
        }


# --- enrollment wire framing -------------------------------------------------


def encode_enroll_request(csr: CertSigningRequest, requested_name: str) -> bytes:
    raw_name = requested_name.encode("utf-8")
    if len(raw_name) > MAX_REQUESTED_NAME_BYTES:
        raise ValueError(f"requested_name exceeds {MAX_REQUESTED_NAME_BYTES} bytes")
    return (
        ENROLL_MAGIC
        + bytes([ENROLL_VERSION, MSG_REQUEST])
        + bytes_u16(csr.encode())
        + bytes_u16(raw_name)
    )


def decode_enroll_request(datagram: bytes) -> tuple[CertSigningRequest, str]:
    if datagram[:4] != ENROLL_MAGIC or len(datagram) < 6:
        raise ValueError("not an enrollment datagram")
    if datagram[4] != ENROLL_VERSION or datagram[5] != MSG_REQUEST:
        raise ValueError("unsupported enrollment message")
    r = Reader(datagram[6:])
    csr = CertSigningRequest.decode(r.bytes_u16())
    name = r.bytes_u16().decode("utf-8")
    r.expect_end()
    return csr, name


@dataclass(frozen=True)
class ApprovalPayload:
    """What an approved device receives: its certificate, identity, address,
    and its telemetry key wrapped to its enrollment public key."""

    certificate: Certificate
    device_id: bytes
    address: ipaddress.IPv4Address
    epoch: int
    key_wrap: bytes

    def encode(self) -> bytes:
        return (
            bytes_u16(self.certificate.encode())
            + self.device_id
            + u32(int(self.address))
            + u32(self.epoch)
            + bytes_u16(self.key_wrap)
        )

    @classmethod
    def decode(cls, data: bytes) -> "ApprovalPayload":
        r = Reader(data)
        cert = Certificate.decode(r.bytes_u16())
        device_id = r.take(8)
        address = ipaddress.IPv4Address(r.u32())
        epoch = r.u32()
        key_wrap = r.bytes_u16()
        r.expect_end()
        return cls(cert, device_id, address, epoch, key_wrap)

    def unwrap_key(self, ed25519_seed: bytes) -> bytes:
        return sealbox.unseal_with_ed25519_seed(ed25519_seed, self.key_wrap)


def encode_enroll_response(payload: ApprovalPayload) -> bytes:
    return ENROLL_MAGIC + bytes([ENROLL_VERSION, MSG_APPROVED]) + bytes_u16(payload.encode())


def encode_enroll_denial(reason: str) -> bytes:
    return ENROLL_MAGIC + bytes([ENROLL_VERSION, MSG_DENIED]) + bytes_u16(reason.encode("utf-8"))


def decode_enroll_response(datagram: bytes) -> ApprovalPayload | str:
    """Returns the payload for an approval, or the reason string for a denial."""
    if datagram[:4] != ENROLL_MAGIC or len(datagram) < 6 or datagram[4] != ENROLL_VERSION:
        raise ValueError("not an enrollment response")
    r = Reader(datagram[6:])
    body = r.bytes_u16()
    r.expect_end()
    if datagram[5] == MSG_APPROVED:
        return ApprovalPayload.decode(body)
    if datagram[5] == MSG_DENIED:
        return body.decode("utf-8")
    raise ValueError("unsupported enrollment message")


# --- decisions ---------------------------------------------------------------


@dataclass(frozen=True)
class Decision:
    approve: bool
    zone: str | None = None
    reason: str | None = None

    @classmethod
    def approval(cls, zone: str) -> "Decision":
        return cls(approve=True, zone=zone)

    @classmethod
    def denial(cls, reason: str) -> "Decision":
        return cls(approve=False, reason=reason)


@dataclass
class EnrollmentOutcome:
    request: EnrollmentRequest
    device: DeviceRecord | None
    response_datagram: bytes


AuditFn = Callable[[str, str], None]


def _noop_audit(_category: str, _body: str) -> None:
    return None


class DeviceRegistry:
    """Fleet state and the enrollment state machine.

    The injected `audit` callable must make the record durable before
    returning; it is invoked after validation and before any state mutation,
    so a storage failure aborts the operation with nothing half-applied.
    """

    def __init__(
        self,
        identity: GatewayIdentity,
        zones: ZoneRegistry,
        audit: AuditFn | None = None,
        max_pending: int = DEFAULT_MAX_PENDING,
        pending_ttl_s: int = DEFAULT_PENDING_TTL_S,
        cert_validity_days: int = DEFAULT_CERT_VALIDITY_DAYS,
    ):
        self.identity = identity
        self.zones = zones
        self.audit = audit or _noop_audit
        self.max_pending = max_pending
        self.pending_ttl_s = pending_ttl_s
        self.cert_validity_days = cert_validity_days
        self.revocations = RevocationList()
        self._requests: dict[bytes, EnrollmentRequest] = {}
        self._devices: dict[bytes, DeviceRecord] = {}
        self._request_counter = 0
        self._device_counter = 0
        self._key_cache: dict[tuple[bytes, int], bytes] = {}

    # -- lookups ------------------------------------------------------------

    def lookup_device(self, device_id: bytes) -> DeviceRecord | None:
        return self._devices.get(device_id)

    def require_device(self, device_id: bytes) -> DeviceRecord:
        record = self._devices.get(device_id)
        if record is None:
            raise UnknownDevice(device_id.hex())
        return record

    def devices(self) -> list[DeviceRecord]:
        return list(self._devices.values())

    def device_status(self, device_id: bytes) -> str | None:
        record = self._devices.get(device_id)
        return record.status.value if record else None

    def requests(self, state: RequestState | None = None) -> list[EnrollmentRequest]:
        if state is None:
            return list(self._requests.values())
        return [r for r in self._requests.values() if r.state == state]

    def get_request(self, request_id: bytes) -> EnrollmentRequest:
        try:
            return self._requests[request_id]
        except KeyError:
            raise UnknownRequest(request_id.hex())

    def telemetry_key(self, device_id: bytes) -> tuple[bytes, int]:
        record = self.require_device(device_id)
        epoch = record.telemetry_key_epoch
        cached = self._key_cache.get((device_id, epoch))
        if cached is None:
            cached = self.identity.vault.derive_secret(
                self.identity.vault_handle, salt=KDF_SALT, info=device_id + u32(epoch)
            )
            self._key_cache[(device_id, epoch)] = cached
        return cached, epoch

    def update_last_seq(self, device_id: bytes, seq: int, at_ms: int = 0) -> None:
        record = self.require_device(device_id)
        if seq > record.last_seq:
            record.last_seq = seq
        if at_ms > record.last_seen:
            record.last_seen = at_ms

    # -- enrollment ---------------------------------------------------------

    def submit_enrollment(
        self, csr: CertSigningRequest, requested_name: str, source_address: str, now_ms: int
    ) -> EnrollmentRequest:
        if csr.role == Role.ROOT:
            raise RoleForbidden("csr may not request ROOT")
        if not csr.proof_valid():
            raise InvalidProof("csr proof does not verify")
        pending = [r for r in self._requests.values() if r.state == RequestState.PENDING]
        for req in pending:
            if req.csr.public_key == csr.public_key:
                raise DuplicatePending(req.request_id.hex())
        if len(pending) >= self.max_pending:
            raise RegistryFull(f"{len(pending)} pending requests")
        request_id = hashlib.sha256(
            b"HGE1-request" + csr.public_key + u64(self._request_counter + 1)
        ).digest()[:16]
        request = EnrollmentRequest(
            request_id=request_id,
            csr=csr,
            requested_name=requested_name,
            received_at=now_ms,
            source_address=source_address,
        )
        self.audit("ENROLL", f"request {request_id.hex()} name={requested_name!r} from {source_address}")
        self._request_counter += 1
        self._requests[request_id] = request
        return request

    def sweep_expired(self, now_ms: int) -> list[EnrollmentRequest]:
        """PENDING requests older than the TTL become EXPIRED."""
        expired = []
        for request in self._requests.values():
            if (
                request.state == RequestState.PENDING
                and now_ms - request.received_at > self.pending_ttl_s * 1000
            ):
                request.state = RequestState.EXPIRED
                expired.append(request)
        return expired

    def decide_enrollment(
        self, request_id: bytes, decision: Decision, now_ms: int
    ) -> EnrollmentOutcome:
        request = self.get_request(request_id)
        if request.state != RequestState.PENDING:
            raise NotPending(f"request is {request.state.value}")

        if not decision.approve:
            self.audit(
                "DECIDE",
                f"deny {request_id.hex()} reason={decision.reason or ''!r}",
            )
            request.state = RequestState.DENIED
            return EnrollmentOutcome(
                request, None, encode_enroll_denial(decision.reason or "denied")
            )

        zone = self.zones.get(decision.zone)  # raises UnknownZone, request stays PENDING
        device_id = u64(self._device_counter + 1)
        # everything that can fail happens before the audit commit point
        address = self.zones.peek_address(device_id, zone.name)
        certificate = issue_certificate(
            request.csr, self.identity, self.cert_validity_days, now_ms // 1000
        )
        epoch = 0
        key = self.identity.vault.derive_secret(
            self.identity.vault_handle, salt=KDF_SALT, info=device_id + u32(epoch)
        )
        key_wrap = sealbox.seal_to_ed25519(request.csr.public_key, key)
        payload = ApprovalPayload(certificate, device_id, address, epoch, key_wrap)

        self.audit(
            "DECIDE",
            f"approve {request_id.hex()} device={device_id.hex()} zone={zone.name} "
            f"serial={certificate.serial.hex()}",
        )
        self._device_counter += 1
        self.zones.assign_device(device_id, zone.name)
        request.state = RequestState.APPROVED
        record = DeviceRecord(
            device_id=device_id,
            name=request.requested_name,
            certificate=certificate,
            zone=zone.name,
            telemetry_key_epoch=epoch,
            status=DeviceStatus.ACTIVE,
            last_seq=0,
            address=address,
        )
        self._devices[device_id] = record
        self._key_cache[(device_id, epoch)] = key
        return EnrollmentOutcome(request, record, encode_enroll_response(payload))

    # -- lifecycle ----------------------------------------------------------

    def revoke_device(self, device_id: bytes, reason: str, now_ms: int) -> bool:
        """Revoke the device's certificate and mark it REVOKED. Idempotent:
        returns False when it was already revoked."""
        record = self.require_device(device_id)
        if record.status == DeviceStatus.REVOKED and self.revocations.is_revoked(
            record.certificate.serial
        ):
            return False
        self.audit("REVOKE", f"device {device_id.hex()} reason={reason!r}")
        self.revocations.revoke(record.certificate.serial, now_ms // 1000, reason)
        record.status = DeviceStatus.REVOKED
        return True

    def quarantine_device(self, device_id: bytes, cause: str) -> DeviceRecord:
        record = self.require_device(device_id)
        if record.status != DeviceStatus.ACTIVE:
            raise AlreadyQuarantined(f"device is {record.status.value}")
        self.audit("QUARANTINE", f"device {device_id.hex()} cause={cause!r}")
        record.status = DeviceStatus.QUARANTINED
        return record

    def release_device(self, device_id: bytes) -> DeviceRecord:
        """Back to ACTIVE with a fresh key epoch — pre-release envelopes and
        the old key die with the epoch bump."""
        record = self.require_device(device_id)
        if record.status != DeviceStatus.QUARANTINED:
            raise NotQuarantined(f"device is {record.status.value}")
        self.audit("RELEASE", f"device {device_id.hex()} epoch={record.telemetry_key_epoch + 1}")
        record.status = DeviceStatus.ACTIVE
        record.telemetry_key_epoch += 1
        return record

    # -- persistence snapshot -------------------------------------------------

    def to_state(self) -> dict:
        return {
            "request_counter": self._request_counter,
            "device_counter": self._device_counter,
            "requests": [
                {**r.to_dict(), "csr": r.csr.encode().hex()} for r in self._requests.values()
            ],
            "devices": [
                {**d.to_dict(), "certificate": d.certificate.encode().hex()}
                for d in self._devices.values()
            ],
            "revocations": [
                {"serial": e.serial.hex(), "revoked_at": e.revoked_at, "reason": e.reason}
                for e in self.revocations.entries()
            ],
        }

    def load_state(self, state: dict) -> None:
        from .pki import RevocationEntry

        self._request_counter = state.get("request_counter", 0)
        self._device_counter = state.get("device_counter", 0)
        self._requests.clear()
        for item in state.get("requests", []):
            request = EnrollmentRequest(
                request_id=bytes.fromhex(item["request_id"]),
                csr=CertSigningRequest.decode(bytes.fromhex(item["csr"])),
                requested_name=item["requested_name"],
                received_at=item["received_at"],
                source_address=item["source_address"],
                state=RequestState(item["state"]),
            )
            self._requests[request.request_id] = request
        self._devices.clear()
        for item in state.get("devices", []):
            record = DeviceRecord(
                device_id=bytes.fromhex(item["device_id"]),
                name=item["name"],
                certificate=Certificate.decode(bytes.fromhex(item["certificate"])),
                zone=item["zone"],
                telemetry_key_epoch=item["epoch"],
                status=DeviceStatus(item["status"]),
                last_seq=item["last_seq"],
                address=ipaddress.IPv4Address(item["address"]),
                last_seen=item.get("last_seen", 0),
            )
            self._devices[record.device_id] = record
            self.zones.restore_assignment(record.device_id, record.zone, record.address)
        self.revocations = RevocationList(
            [
                RevocationEntry(bytes.fromhex(e["serial"]), e["revoked_at"], e["reason"])
                for e in state.get("revocations", [])
            ]
        )
