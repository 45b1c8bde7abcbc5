"""Deterministic virtual network and device fleet.

Reproduces the reference topology — some devices talk to the gateway
directly, the rest sit behind a keyless repeater that resends every UDP
datagram — against the *real* gateway code: datagrams are injected straight
into the ingest pipeline under a virtual clock, so a 60-second scenario
finishes in well under a second of wall time and two runs with the same
seed produce byte-identical reports.

Scenarios script attacks on top of the base fleet: replayed envelopes, a
rogue unenrolled sender, a flooding device, duplicating repeater links, and
a device that keeps using its pre-release key.
"""

from __future__ import annotations

import heapq
import json
import random
import tempfile
import time
from dataclasses import dataclass, field
from typing import Callable

from .clock import VirtualClock
from .config import Config
from .enrollment import ApprovalPayload, decode_enroll_response, encode_enroll_request
from .errors import HomegateError
from .gateway import Gateway, init_data_dir, open_gateway
from .pki import CertSigningRequest, Role
from .segmentation import ZoneRole
from .telemetry import (
    ForwardAction,
    IngestOutcome,
    Reading,
    RepeaterState,
    encode_envelope,
    repeater_forward,
)

SIM_START_MS = 1_700_000_000_000
SIM_OPERATOR_TOKEN = "sim-operator-token-0123456789abcdef"
ENROLL_RETRY_MS = 5_000
ENROLL_MAX_RETRIES = 3
OPERATOR_POLL_MS = 500

SCENARIOS = ("baseline", "replay_attack", "rogue_device", "flood", "dup_repeater", "stale_key")


@dataclass(frozen=True)
class LinkModel:
    loss_prob: float = 0.0
    dup_prob: float = 0.0
    max_delay_ms: int = 20

    def __post_init__(self):
        if not 0.0 <= self.loss_prob <= 1.0 or not 0.0 <= self.dup_prob <= 1.0:
            raise ValueError("probabilities must be in [0, 1]")


@dataclass
class FleetSpec:
    n_direct: int
    n_via_repeater: int
    duration_s: int
    seed: int
    send_interval_ms: int = 1000
    direct_link: LinkModel = field(default_factory=LinkModel)
    repeater_link: LinkModel = field(default_factory=LinkModel)

    def __post_init__(self):
        if self.n_direct < 0 or self.n_via_repeater < 0:
            raise ValueError("device counts must be >= 0")


def virtual_link_deliver(
    datagram: bytes, link: LinkModel, rng: random.Random
) -> list[tuple[bytes, int]]:
    """Network model for one transmission: maybe lost, maybe duplicated,
    each copy delayed uniformly within the link's bound."""
    if rng.random() < link.loss_prob:
        return []
    copies = 2 if rng.random() < link.dup_prob else 1
    return [(datagram, rng.randint(0, link.max_delay_ms)) for _ in range(copies)]


@dataclass
class ScenarioReport:
    scenario: str
    seed: int
    n_direct: int
    n_via_repeater: int
    duration_s: int
    sent: int = 0
    delivered: int = 0
    stored: int = 0
    rejected: dict = field(default_factory=dict)
    alerts: dict = field(default_factory=dict)
    devices: dict = field(default_factory=dict)  # name -> final status
    enrollments_submitted: int = 0
    enrollments_approved: int = 0
    repeater: dict = field(default_factory=dict)
    virtual_ms: int = 0
    wall_s: float = 0.0  # informational only; excluded from the canonical form

    def total_rejected(self) -> int:
        return sum(self.rejected.values())

    def to_dict(self, include_wall: bool = True) -> dict:
        out = {
            "scenario": self.scenario,
            "seed": self.seed,
            "n_direct": self.n_direct,
            "n_via_repeater": self.n_via_repeater,
            "duration_s": self.duration_s,
            "sent": self.sent,
            "delivered": self.delivered,
            "stored": self.stored,
            "rejected": dict(sorted(self.rejected.items())),
            "alerts": dict(sorted(self.alerts.items())),
            "devices": dict(sorted(self.devices.items())),
            "enrollments_submitted": self.enrollments_submitted,
            "enrollments_approved": self.enrollments_approved,
            "repeater": dict(sorted(self.repeater.items())),
            "virtual_ms": self.virtual_ms,
        }
        if include_wall:
            out["wall_s"] = round(self.wall_s, 3)
        return out

    def canonical_json(self) -> str:
        """Deterministic serialization: identical for identical runs."""
        return json.dumps(self.to_dict(include_wall=False), sort_keys=True)


class VirtualDevice:
    """ENROLLING -> SENDING state machine emitting a random-walk temperature
    metric once per interval. A REPEATER-role instance enrolls for its
    certificate and address but never sends telemetry of its own."""

    def __init__(
        self,
        index: int,
        name: str,
        sim: "Simulation",
        via_repeater: bool,
        role: Role = Role.DEVICE,
    ):
        self.index = index
        self.name = name
        self.sim = sim
        self.via_repeater = via_repeater
        self.role = role
        self.rng = random.Random(f"{sim.spec.seed}/device/{name}")
        self.ed_seed = self.rng.randbytes(32)
        self.source = f"{name}:5683"
        self.state = "ENROLLING"
        self.retries = 0
        self.device_id: bytes | None = None
        self.key: bytes | None = None
        self.epoch = 0
        self.seq = 0
        self.value = 20.0 + self.rng.uniform(-2.0, 2.0)

    def csr(self) -> CertSigningRequest:
        return CertSigningRequest.create(self.name, self.role, self.ed_seed)

    def enroll_datagram(self) -> bytes:
        return encode_enroll_request(self.csr(), self.name)

    def on_enroll_response(self, datagram: bytes, now: int) -> None:
        if self.state != "ENROLLING":
            return
        decoded = decode_enroll_response(datagram)
        if not isinstance(decoded, ApprovalPayload):
            self.state = "DENIED"
            return
        self.device_id = decoded.device_id
        self.epoch = decoded.epoch
        self.key = decoded.unwrap_key(self.ed_seed)
        if self.role == Role.REPEATER:
            self.state = "READY"
            return
        self.state = "SENDING"
        self.sim.schedule(now + self.sim.spec.send_interval_ms, self.send_reading)

    def retry_enroll(self, now: int) -> None:
        if self.state != "ENROLLING":
            return
        if self.retries >= ENROLL_MAX_RETRIES:
            self.state = "ENROLL_TIMEOUT"
            return
        self.retries += 1
        self.sim.submit_enrollment(self)
        self.sim.schedule(now + ENROLL_RETRY_MS, self.retry_enroll)

    def next_reading(self, now: int) -> Reading:
        self.value += self.rng.uniform(-0.5, 0.5)
        return Reading("temp_c", round(self.value, 4), now)

    def send_reading(self, now: int) -> None:
        if self.state != "SENDING":
            return
        if now > self.sim.end_ms:
            self.state = "DONE"
            return
        self.seq += 1
        reading = self.next_reading(now)
        envelope = encode_envelope(reading, self.key, self.device_id, self.seq, self.epoch)
        self.sim.device_transmit(self, envelope, now)
        self.sim.schedule(now + self.sim.spec.send_interval_ms, self.send_reading)


class Simulation:
    """Single-threaded event-queue scheduler ordered by (virtual time,
    insertion order) — deterministic by construction."""

    def __init__(
        self,
        spec: FleetSpec,
        scenario: str = "baseline",
        params: dict | None = None,
        data_dir: str | None = None,
    ):
        if scenario not in SCENARIOS:
            raise HomegateError(f"unknown scenario {scenario!r}")
        self.spec = spec
        self.scenario = scenario
        self.params = params or {}
        self.clock = VirtualClock(SIM_START_MS)
        self.end_ms = SIM_START_MS + spec.duration_s * 1000
        self._queue: list[tuple[int, int, Callable[[int], None]]] = []
        self._counter = 0

        self._tmp = None
        if data_dir is None:
            self._tmp = tempfile.TemporaryDirectory(prefix="homegate-sim-")
            data_dir = self._tmp.name
        seed_bytes = spec.seed.to_bytes(32, "big", signed=False)
        config = Config(
            data_dir=data_dir,
            operator_token=SIM_OPERATOR_TOKEN,
            runtime_single_thread=True,
        )
        init_data_dir(data_dir, seed=seed_bytes, clock=self.clock, config=config)
        self.gateway: Gateway = open_gateway(data_dir, clock=self.clock)
        self.gateway.send_datagram = self._gateway_send
        self.gateway.define_zone("sensors", "10.10.1.0/24", ZoneRole.IOT, SIM_OPERATOR_TOKEN)
        self.gateway.define_zone("relay", "10.10.3.0/24", ZoneRole.REPEATER, SIM_OPERATOR_TOKEN)

        if scenario == "dup_repeater":
            self.repeater_link = LinkModel(
                loss_prob=spec.repeater_link.loss_prob,
                dup_prob=float(self.params.get("dup_prob", 0.1)),
                max_delay_ms=spec.repeater_link.max_delay_ms,
            )
        else:
            self.repeater_link = spec.repeater_link

        self.link_rng = random.Random(f"{spec.seed}/links")
        self.attacker_rng = random.Random(f"{spec.seed}/attacker")
        self.repeater_state = RepeaterState(max_hops=self.gateway.config.relay_max_hops)

        self.devices: list[VirtualDevice] = []
        for i in range(spec.n_direct):
            self.devices.append(VirtualDevice(i, f"d{i:03d}", self, via_repeater=False))
        for i in range(spec.n_via_repeater):
            self.devices.append(
                VirtualDevice(spec.n_direct + i, f"r{i:03d}", self, via_repeater=True)
            )
        self.repeater: VirtualDevice | None = None
        if spec.n_via_repeater > 0:
            self.repeater = VirtualDevice(
                len(self.devices), "repeater-0", self, via_repeater=False, role=Role.REPEATER
            )
        self._by_source = {d.source: d for d in self.devices}
        if self.repeater is not None:
            self._by_source[self.repeater.source] = self.repeater

        self.report = ScenarioReport(
            scenario=scenario,
            seed=spec.seed,
            n_direct=spec.n_direct,
            n_via_repeater=spec.n_via_repeater,
            duration_s=spec.duration_s,
        )
        self._captured: list[bytes] = []
        self._capture_target = int(self.params.get("n", 50)) if scenario == "replay_attack" else 0
        self._replays_scheduled = 0

    # -- scheduling --------------------------------------------------------------

    def schedule(self, at_ms: int, fn: Callable[[int], None]) -> None:
        self._counter += 1
        heapq.heappush(self._queue, (at_ms, self._counter, fn))

    def cleanup(self) -> None:
        self.gateway.close()
        if self._tmp is not None:
            self._tmp.cleanup()
            self._tmp = None

    # -- traffic -------------------------------------------------------------------

    def submit_enrollment(self, device: VirtualDevice) -> None:
        datagram = device.enroll_datagram()
        link = self.repeater_link if device.via_repeater else self.spec.direct_link
        for data, delay in virtual_link_deliver(datagram, link, self.link_rng):
            self.schedule(
                self.clock.now_ms() + delay,
                lambda now, d=data, src=device.source: self._gateway_receive(d, src),
            )

    def device_transmit(self, device: VirtualDevice, envelope: bytes, now: int) -> None:
        self.report.sent += 1
        if self._capture_target and len(self._captured) < self._capture_target:
            self._captured.append(envelope)
            if len(self._captured) == self._capture_target:
                self._schedule_replays(now)
        if device.via_repeater:
            for data, delay in virtual_link_deliver(envelope, self.repeater_link, self.link_rng):
                self.schedule(now + delay, lambda t, d=data: self._repeater_receive(d))
        else:
            for data, delay in virtual_link_deliver(envelope, self.spec.direct_link, self.link_rng):
                self.schedule(
                    now + delay,
                    lambda t, d=data, src=device.source: self._gateway_receive(d, src),
                )

    def _repeater_receive(self, datagram: bytes) -> None:
        decision = repeater_forward(datagram, self.repeater_state)
        if decision.action is not ForwardAction.FORWARD:
            return
        now = self.clock.now_ms()
        source = self.repeater.source if self.repeater is not None else "repeater-0:5683"
        for data, delay in virtual_link_deliver(decision.datagram, self.repeater_link, self.link_rng):
            self.schedule(
                now + delay,
                lambda t, d=data: self._gateway_receive(d, source),
            )

    def _gateway_receive(self, datagram: bytes, source: str) -> None:
        outcome = self.gateway.handle_datagram(datagram, source)
        if outcome is None:
            return  # enrollment traffic
        self.report.delivered += 1
        if outcome is IngestOutcome.STORED:
            self.report.stored += 1
        else:
            key = outcome.value
            self.report.rejected[key] = self.report.rejected.get(key, 0) + 1

    def _gateway_send(self, source: str, datagram: bytes) -> None:
        device = self._by_source.get(source)
        if device is None:
            return
        link = self.repeater_link if device.via_repeater else self.spec.direct_link
        now = self.clock.now_ms()
        for data, delay in virtual_link_deliver(datagram, link, self.link_rng):
            self.schedule(now + delay, lambda t, d=data, dev=device: dev.on_enroll_response(d, t))

    # -- scripted operator ------------------------------------------------------------

    def _operator_poll(self, now: int) -> None:
        for request in self.gateway.registry.requests():
            if request.state.value != "PENDING":
                continue
            zone = "relay" if request.csr.role == Role.REPEATER else "sensors"
            try:
                self.gateway.approve_enrollment(request.request_id, zone, SIM_OPERATOR_TOKEN)
                self.report.enrollments_approved += 1
            except HomegateError:
                pass
        if now <= self.end_ms:
            self.schedule(now + OPERATOR_POLL_MS, self._operator_poll)

    def _sweeper(self, now: int) -> None:
        self.gateway.sweep()
        if now <= self.end_ms:
            self.schedule(now + 1000, self._sweeper)

    # -- scenario scripts ----------------------------------------------------------------

    def _schedule_replays(self, now: int) -> None:
        # re-send every captured envelope 5 s later, unmodified, from the
        # attacker's own vantage point on a clean link
        for envelope in self._captured:
            self._replays_scheduled += 1
            self.report.sent += 1
            self.schedule(
                now + 5000,
                lambda t, d=envelope: self._gateway_receive(d, "attacker-1:6666"),
            )

    def _rogue_script(self, now: int) -> None:
        n = int(self.params.get("n", 20))
        rogue_key = self.attacker_rng.randbytes(32)
        rogue_id = self.attacker_rng.randbytes(8)
        for i in range(n):
            reading = Reading("temp_c", 99.9, now + i * 1000)
            envelope = encode_envelope(reading, rogue_key, rogue_id, i + 1, 0)
            self.report.sent += 1
            self.schedule(
                now + i * 1000,
                lambda t, d=envelope: self._gateway_receive(d, "rogue-1:7777"),
            )

    def _flood_script(self, now: int) -> None:
        if not self.devices:
            return
        device = self.devices[0]
        if device.state != "SENDING":
            self.schedule(now + 500, self._flood_script)
            return
        device.state = "FLOODING"  # stop the regular 1 Hz sender
        rate = self.gateway.config.ids_flood_rate * 2
        interval = max(1, 1000 // rate)
        flood_end = min(now + 20_000, self.end_ms)

        def burst(t: int) -> None:
            if t > flood_end or device.state != "FLOODING":
                return
            device.seq += 1
            envelope = encode_envelope(
                device.next_reading(t), device.key, device.device_id, device.seq, device.epoch
            )
            self.device_transmit(device, envelope, t)
            self.schedule(t + interval, burst)

        burst(now)

    def _stale_key_script(self, now: int) -> None:
        if not self.devices:
            return
        device = self.devices[0]
        if device.state != "SENDING":
            self.schedule(now + 500, self._stale_key_script)
            return
        self.gateway.quarantine_device(device.device_id, "operator drill", SIM_OPERATOR_TOKEN)
        # release 10 s later; the device never refetches its key
        self.schedule(now + 10_000, lambda t: self.gateway.release_device(
            device.device_id, SIM_OPERATOR_TOKEN
        ))

    # -- run ----------------------------------------------------------------------------------

    def run(self) -> ScenarioReport:
        wall_start = time.monotonic()
        fleet = list(self.devices)
        if self.repeater is not None:
            fleet.insert(0, self.repeater)  # the relay provisions first
        for i, device in enumerate(fleet):
            self.schedule(SIM_START_MS + 100 + i * 50, lambda t, d=device: self._enroll_start(d, t))
        self.schedule(SIM_START_MS + OPERATOR_POLL_MS, self._operator_poll)
        self.schedule(SIM_START_MS + 1000, self._sweeper)

        if self.scenario == "rogue_device":
            self.schedule(SIM_START_MS + 5000, self._rogue_script)
        elif self.scenario == "flood":
            self.schedule(SIM_START_MS + 5000, self._flood_script)
        elif self.scenario == "stale_key":
            self.schedule(SIM_START_MS + 15_000, self._stale_key_script)

        while self._queue:
            at_ms, _, fn = heapq.heappop(self._queue)
            if at_ms > self.clock.now_ms():
                self.clock.set(at_ms)
            fn(at_ms)

        self.report.virtual_ms = self.clock.now_ms() - SIM_START_MS
        self.report.alerts = self.gateway.sentinel.alerts.count_by_rule()
        fleet = self.devices + ([self.repeater] if self.repeater is not None else [])
        for device in fleet:
            if device.device_id is not None:
                record = self.gateway.registry.lookup_device(device.device_id)
                self.report.devices[device.name] = record.status.value
            else:
                self.report.devices[device.name] = device.state
        self.report.repeater = {
            "forwarded": self.repeater_state.forwarded_count,
            "dropped_dup": self.repeater_state.dropped_dup_count,
            "dropped_hops": self.repeater_state.dropped_hops_count,
        }
        self.report.wall_s = time.monotonic() - wall_start
        return self.report

    def _enroll_start(self, device: VirtualDevice, now: int) -> None:
        self.report.enrollments_submitted += 1
        self.submit_enrollment(device)
        self.schedule(now + ENROLL_RETRY_MS, device.retry_enroll)


def spawn_fleet(spec: FleetSpec, data_dir: str | None = None) -> Simulation:
    return Simulation(spec, "baseline", {}, data_dir)


def run_scenario(
    scenario: str,
    spec: FleetSpec,
    params: dict | None = None,
    data_dir: str | None = None,
    keep: bool = False,
) -> ScenarioReport | tuple[ScenarioReport, Simulation]:
    """Run one named scenario to completion. With `keep` the live Simulation
    (gateway included) is returned for post-run inspection."""
    sim = Simulation(spec, scenario, params, data_dir)
    try:
        report = sim.run()
    except Exception:
        sim.cleanup()
        raise
    if keep:
        return report, sim
    sim.cleanup()
    return report
