"""The gateway composition root — the network's "brain".

Owns every subsystem (vault + identity, device registry, zones + active
ruleset, sentinel, audit chain, reading store), serializes mutations behind
one lock, and enforces the durability contract: validate, compute, append
the audit record, then commit in-memory state. A failed audit append aborts
the operation with nothing half-applied.

`run_gateway` binds the real UDP listener and HTTP API; the simulator drives
the same object in-process through `handle_datagram` with a virtual clock.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import os
import queue
import socket
import threading
from dataclasses import dataclass, field

from . import telemetry
from .audit import AuditChain, Category, VerifyResult
from .clock import Clock, SystemClock
from .config import Config, load_config, save_config
from .enrollment import (
    Decision,
    DeviceRegistry,
    EnrollmentOutcome,
    EnrollmentRequest,
    decode_enroll_request,
)
from .errors import HomegateError, PortInUse, Unauthorized, UninitializedDataDir
from .ids import Alert, Sentinel, SentinelConfig
from .pki import (
    KeyVault,
    SerialSource,
    generate_root_identity,
    GatewayIdentity,
    load_certificate,
    save_certificate,
)
from .segmentation import (
    Grant,
    Proto,
    RuleSet,
    ZoneRegistry,
    ZoneRole,
    check_reachability,
    compile_policy,
)
from .store import ReadingStore, export_batch

CONFIG_FILE = "homegate.conf"
ROOT_CERT_FILE = "root.hgc"
STATE_FILE = "state.json"
CERTS_DIR = "certs"

DEFAULT_ZONES = (
    ("gateway", "10.10.0.1/32", ZoneRole.GATEWAY),
    ("operators", "10.10.9.0/24", ZoneRole.OPERATOR),
)


def init_data_dir(
    data_dir: str,
    seed: bytes | None = None,
    clock: Clock | None = None,
    config: Config | None = None,
) -> Config:
    """Create a fresh gateway home: vault + root identity, default zones
    (the gateway's own host zone and an operator zone), a generated operator
    token, and the genesis audit records."""
    clock = clock or SystemClock()
    os.makedirs(data_dir, exist_ok=True)
    os.makedirs(os.path.join(data_dir, CERTS_DIR), exist_ok=True)
    if os.path.exists(os.path.join(data_dir, ROOT_CERT_FILE)):
        raise HomegateError(f"{data_dir} is already initialized")

    vault = KeyVault.create(data_dir)
    identity = generate_root_identity(vault, clock.now_s(), rng_seed=seed)
    save_certificate(identity.root_cert, os.path.join(data_dir, ROOT_CERT_FILE))

    cfg = config or Config()
    cfg.data_dir = data_dir
    if not cfg.operator_token:
        cfg.operator_token = os.urandom(16).hex()
    save_config(cfg, os.path.join(data_dir, CONFIG_FILE))

    audit = AuditChain(data_dir)
    now = clock.now_ms()
    audit.append(
        Category.CONFIG,
        f"init root serial={identity.root_cert.serial.hex()} subject={identity.root_cert.subject}",
        now,
    )
    zones = ZoneRegistry()
    for name, cidr, role in DEFAULT_ZONES:
        zones.define_zone(name, cidr, role)
        audit.append(Category.ZONE, f"define {name} {cidr} {role.value}", now)
    ruleset = compile_policy(zones.zones(), {}, set())
    audit.append(
        Category.POLICY,
        f"initial policy rules={len(ruleset)} sha={hashlib.sha256(ruleset.render().encode()).hexdigest()[:16]}",
        now,
    )
    audit.close()

    state = {
        "vault_handle": identity.vault_handle,
        "seeded": seed is not None,
        "serial_counter": identity.serials.counter,
        "zones": _zones_to_state(zones),
        "registry": {"request_counter": 0, "device_counter": 0, "requests": [], "devices": [], "revocations": []},
        "last_seqs": {},
    }
    _write_state(os.path.join(data_dir, STATE_FILE), state)
    return cfg


def _zones_to_state(zones: ZoneRegistry) -> list[dict]:
    return [
        {
            "name": z.name,
            "range": str(z.network),
            "role": z.role.value,
            "allow_to": [
                {"to_zone": g.to_zone, "port": g.port, "proto": g.proto.value}
                for g in z.allow_to
            ],
        }
        for z in zones.zones()
    ]


def _write_state(path: str, state: dict) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(state, f, indent=1, sort_keys=True)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


@dataclass
class GatewayEvent:
    """One item on the live event stream."""

    event: str  # alert | enrollment | device
    data: dict


class EventBus:
    """Fan-out of gateway events to SSE subscribers."""

    def __init__(self):
        self._subscribers: list[queue.Queue] = []
        self._lock = threading.Lock()

    def subscribe(self) -> queue.Queue:
        q: queue.Queue = queue.Queue(maxsize=1000)
        with self._lock:
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self._lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    def publish(self, event: GatewayEvent) -> None:
        with self._lock:
            targets = list(self._subscribers)
        for q in targets:
            try:
                q.put_nowait(event)
            except queue.Full:
                pass  # a stalled client loses events; it re-syncs via the API


class Gateway:
    """All gateway state and operations. Thread-safe behind one RLock;
    `runtime.single_thread` mode simply never spawns the listener threads."""

    def __init__(self, config: Config, clock: Clock | None = None):
        self.config = config
        self.clock = clock or SystemClock()
        self.data_dir = config.data_dir
        if not os.path.exists(os.path.join(self.data_dir, ROOT_CERT_FILE)):
            raise UninitializedDataDir(self.data_dir)
        self._lock = threading.RLock()
        self.events = EventBus()
        self.send_datagram = None  # set by the UDP server / simulator

        self.vault = KeyVault.open(self.data_dir)
        state = self._read_state()
        root_cert = load_certificate(os.path.join(self.data_dir, ROOT_CERT_FILE))
        serials = SerialSource(counter_start=state.get("serial_counter"))
        self.identity = GatewayIdentity(
            root_cert=root_cert,
            vault_handle=state["vault_handle"],
            vault=self.vault,
            serials=serials,
        )
        self.audit = AuditChain(self.data_dir)
        self.store = ReadingStore(self.data_dir, max_readings=config.store_max_readings)

        self.zones = ZoneRegistry()
        for z in state.get("zones", []):
            zone = self.zones.define_zone(z["name"], z["range"], ZoneRole(z["role"]))
            for g in z.get("allow_to", []):
                zone.allow_to.append(Grant(g["to_zone"], g["port"], Proto(g["proto"])))

        self.registry = DeviceRegistry(
            self.identity,
            self.zones,
            audit=self._audit_fn,
            max_pending=config.enrollment_max_pending,
            pending_ttl_s=config.enrollment_pending_ttl_s,
        )
        self.registry.load_state(state.get("registry", {}))
        # replay floor survives crashes: the readings log is authoritative
        for record in self.registry.devices():
            persisted = state.get("last_seqs", {}).get(record.device_id.hex(), 0)
            record.last_seq = max(persisted, self.store.max_seq(record.device_id))

        self.sentinel = Sentinel(
            SentinelConfig(
                auth_fail_threshold=config.ids_auth_fail_threshold,
                flood_rate=config.ids_flood_rate,
                auto_quarantine=config.ids_auto_quarantine,
                silent_hours=config.ids_silent_hours,
            ),
            status_lookup=self.registry.device_status,
            quarantine_action=self._auto_quarantine,
        )
        now = self.clock.now_ms()
        for record in self.registry.devices():
            if record.status.value == "ACTIVE":
                self.sentinel.device_activated(record.device_id, now)

        self._ruleset: RuleSet = self._compile()

    # -- state persistence ------------------------------------------------------

    def _read_state(self) -> dict:
        with open(os.path.join(self.data_dir, STATE_FILE), "r", encoding="utf-8") as f:
            return json.load(f)

    def _save_state(self) -> None:
        state = {
            "vault_handle": self.identity.vault_handle,
            "seeded": self.identity.serials.counter is not None,
            "serial_counter": self.identity.serials.counter,
            "zones": _zones_to_state(self.zones),
            "registry": self.registry.to_state(),
            "last_seqs": {d.device_id.hex(): d.last_seq for d in self.registry.devices()},
        }
        _write_state(os.path.join(self.data_dir, STATE_FILE), state)

    def _audit_fn(self, category: str, body: str) -> None:
        self.audit.append(Category[category], body, self.clock.now_ms())

    def close(self) -> None:
        with self._lock:
            self._save_state()
            self.audit.close()
            self.store.close()

    # -- policy ------------------------------------------------------------------

    def _quarantined_ids(self) -> set[bytes]:
        return {
            d.device_id for d in self.registry.devices() if d.status.value == "QUARANTINED"
        }

    def _compile(self) -> RuleSet:
        return compile_policy(
            self.zones.zones(), self.zones.assignments(), self._quarantined_ids()
        )

    def policy_rules(self) -> RuleSet:
        with self._lock:
            return self._ruleset

    def reachable(self, src, dst, port: int, proto: Proto):
        return check_reachability(self.policy_rules(), src, dst, port, proto)

    # -- datagram entrypoints ---------------------------------------------------

    def handle_datagram(self, data: bytes, source: str) -> telemetry.IngestOutcome | None:
        """Single UDP entrypoint: telemetry ("HGT1") and enrollment ("HGE1")
        share the socket, split by magic."""
        if data[:4] == telemetry.ENROLL_MAGIC:
            self._handle_enroll_datagram(data, source)
            return None
        return self.ingest(data, source)

    def ingest(self, datagram: bytes, source: str = "?") -> telemetry.IngestOutcome:
        with self._lock:
            now = self.clock.now_ms()
            before = len(self.sentinel.alerts)
            outcome = telemetry.ingest(
                datagram, self.registry, self.sentinel, self.store, now, source
            )
            self._publish_new_alerts(before)
            return outcome

    def _handle_enroll_datagram(self, data: bytes, source: str) -> None:
        try:
            csr, name = decode_enroll_request(data)
        except Exception:
            return  # hostile or garbled enrollment traffic is dropped silently
        try:
            request = self.submit_enrollment(csr, name, source)
        except HomegateError:
            return
        if self.config.enrollment_auto_approve and request is not None:
            zone = next((z.name for z in self.zones.zones() if z.role == ZoneRole.IOT), None)
            if zone is not None:
                try:
                    self.approve_enrollment(request.request_id, zone, self.config.operator_token)
                except HomegateError:
                    pass

    # -- enrollment -----------------------------------------------------------------

    def submit_enrollment(self, csr, name: str, source: str) -> EnrollmentRequest:
        with self._lock:
            request = self.registry.submit_enrollment(csr, name, source, self.clock.now_ms())
            self._save_state()
            self.events.publish(GatewayEvent("enrollment", request.to_dict()))
            return request

    def _require_token(self, token: str | None) -> None:
        expected = self.config.operator_token
        if not expected:
            raise Unauthorized("no operator token configured")
        if token is None or not hmac.compare_digest(expected, token):
            raise Unauthorized("bad operator token")

    def approve_enrollment(self, request_id: bytes, zone: str, token: str | None) -> EnrollmentOutcome:
        self._require_token(token)
        with self._lock:
            outcome = self.registry.decide_enrollment(
                request_id, Decision.approval(zone), self.clock.now_ms()
            )
            record = outcome.device
            save_certificate(
                record.certificate,
                os.path.join(self.data_dir, CERTS_DIR, record.certificate.serial.hex() + ".hgc"),
            )
            self.sentinel.device_activated(record.device_id, self.clock.now_ms())
            self._ruleset = self._compile()
            self._save_state()
            self.events.publish(GatewayEvent("enrollment", outcome.request.to_dict()))
            self.events.publish(GatewayEvent("device", record.to_dict()))
            self._send_response(outcome)
            return outcome

    def deny_enrollment(self, request_id: bytes, reason: str, token: str | None) -> EnrollmentOutcome:
        self._require_token(token)
        with self._lock:
            outcome = self.registry.decide_enrollment(
                request_id, Decision.denial(reason), self.clock.now_ms()
            )
            self._save_state()
            self.events.publish(GatewayEvent("enrollment", outcome.request.to_dict()))
            self._send_response(outcome)
            return outcome

    def _send_response(self, outcome: EnrollmentOutcome) -> None:
        if self.send_datagram is not None and outcome.response_datagram:
            self.send_datagram(outcome.request.source_address, outcome.response_datagram)

    # -- device lifecycle --------------------------------------------------------------

    def quarantine_device(self, device_id: bytes, cause: str, token: str | None = None,
                          by_operator: bool = True) -> None:
        if by_operator:
            self._require_token(token)
        with self._lock:
            record = self.registry.quarantine_device(device_id, cause)
            self._ruleset = self._compile()
            self._save_state()
            self.events.publish(GatewayEvent("device", record.to_dict()))

    def _auto_quarantine(self, device_id: bytes, cause: str) -> None:
        # invoked by the sentinel from inside ingest; the RLock re-enters
        self.quarantine_device(device_id, cause, by_operator=False)

    def release_device(self, device_id: bytes, token: str | None) -> None:
        self._require_token(token)
        with self._lock:
            record = self.registry.release_device(device_id)
            self.sentinel.device_activated(device_id, self.clock.now_ms())
            self._ruleset = self._compile()
            self._save_state()
            self.events.publish(GatewayEvent("device", record.to_dict()))

    def revoke_device(self, device_id: bytes, reason: str, token: str | None) -> None:
        self._require_token(token)
        with self._lock:
            self.registry.revoke_device(device_id, reason, self.clock.now_ms())
            self.sentinel.device_deactivated(device_id)
            self._ruleset = self._compile()
            self._save_state()
            record = self.registry.lookup_device(device_id)
            self.events.publish(GatewayEvent("device", record.to_dict()))

    # -- zones ---------------------------------------------------------------------------

    def define_zone(self, name: str, cidr: str, role: ZoneRole, token: str | None):
        self._require_token(token)
        with self._lock:
            # validate before the audit commit point
            probe = ZoneRegistry()
            for z in self.zones.zones():
                probe.define_zone(z.name, str(z.network), z.role)
            probe.define_zone(name, cidr, role)
            self._audit_fn("ZONE", f"define {name} {cidr} {role.value}")
            zone = self.zones.define_zone(name, cidr, role)
            self._ruleset = self._compile()
            self._save_state()
            return zone

    # -- alerts / telemetry / audit --------------------------------------------------------

    def acknowledge_alert(self, alert_id: int, token: str | None) -> None:
        self._require_token(token)
        with self._lock:
            if not any(a.alert_id == alert_id for a in self.sentinel.alerts.query()):
                raise HomegateError(f"no alert {alert_id}")
            self._audit_fn("ALERT_ACK", f"ack alert {alert_id}")
            self.sentinel.alerts.acknowledge(alert_id)

    def _publish_new_alerts(self, count_before: int) -> None:
        new = self.sentinel.alerts.query()[count_before:]
        for alert in new:
            self.events.publish(GatewayEvent("alert", alert.to_dict()))

    def export(self, from_ms: int, to_ms: int, recipient_pub: bytes, token: str | None):
        self._require_token(token)
        with self._lock:
            bundle = export_batch(self.store, from_ms, to_ms, recipient_pub, self.clock.now_ms())
            self._audit_fn(
                "EXPORT",
                f"range=[{from_ms},{to_ms}) records={bundle.record_count} "
                f"sha={bundle.bundle_hash().hex()}",
            )
            return bundle

    def verify_audit(self) -> VerifyResult:
        with self._lock:
            return self.audit.verify()

    # -- periodic work ----------------------------------------------------------------------

    def sweep(self) -> list[Alert]:
        """Expire stale enrollment requests and run the clock-driven IDS rule."""
        with self._lock:
            now = self.clock.now_ms()
            expired = self.registry.sweep_expired(now)
            for request in expired:
                self.events.publish(GatewayEvent("enrollment", request.to_dict()))
            if expired:
                self._save_state()
            before = len(self.sentinel.alerts)
            alerts = self.sentinel.sweep(now)
            self._publish_new_alerts(before)
            return alerts


def open_gateway(data_dir: str, clock: Clock | None = None, config: Config | None = None) -> Gateway:
    """Open an initialized data dir, reading its config file unless one is
    supplied."""
    if config is None:
        config_path = os.path.join(data_dir, CONFIG_FILE)
        if not os.path.exists(config_path):
            raise UninitializedDataDir(data_dir)
        config = load_config(config_path)
        config.data_dir = data_dir
    return Gateway(config, clock)


# --- live service ---------------------------------------------------------------


@dataclass
class ServiceHandle:
    gateway: Gateway
    udp_socket: socket.socket | None
    http_server: object | None
    threads: list[threading.Thread] = field(default_factory=list)
    _stop: threading.Event = field(default_factory=threading.Event)

    def stop(self) -> None:
        self._stop.set()
        if self.udp_socket is not None:
            self.udp_socket.close()
        if self.http_server is not None:
            self.http_server.shutdown()
        for t in self.threads:
            t.join(timeout=5)
        self.gateway.close()


def run_gateway(config: Config, clock: Clock | None = None) -> ServiceHandle:
    """Bring the whole service up: UDP listener, HTTP API, sweeper. Returns
    a handle whose stop() flushes everything down cleanly."""
    from .api import build_http_server  # late import: api depends on gateway types

    gateway = Gateway(config, clock)

    try:
        udp_sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        udp_sock.bind(config.udp_listen)
    except OSError as e:
        raise PortInUse(f"udp {config.udp_listen}: {e}") from e

    def send_datagram(addr: str, data: bytes) -> None:
        host, _, port = addr.rpartition(":")
        try:
            udp_sock.sendto(data, (host, int(port)))
        except (OSError, ValueError):
            pass

    gateway.send_datagram = send_datagram

    try:
        http_server = build_http_server(gateway, config.http_listen)
    except OSError as e:
        udp_sock.close()
        raise PortInUse(f"http {config.http_listen}: {e}") from e

    handle = ServiceHandle(gateway, udp_sock, http_server)

    def udp_loop():
        while not handle._stop.is_set():
            try:
                data, addr = udp_sock.recvfrom(65535)
            except OSError:
                break
            try:
                gateway.handle_datagram(data, f"{addr[0]}:{addr[1]}")
            except Exception:
                pass  # one bad datagram must never take the listener down

    def sweep_loop():
        while not handle._stop.wait(1.0):
            gateway.sweep()

    threads = [
        threading.Thread(target=udp_loop, name="homegate-udp", daemon=True),
        threading.Thread(target=http_server.serve_forever, name="homegate-http", daemon=True),
        threading.Thread(target=sweep_loop, name="homegate-sweep", daemon=True),
    ]
    handle.threads = threads
    for t in threads:
        t.start()
    return handle
