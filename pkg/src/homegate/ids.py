"""Rule-based intrusion detection.

The ingest pipeline feeds every datagram's fate here as a SecurityEvent; the
Sentinel turns event streams into alerts under five rules:

    R1  unknown sender          WARN   once per source per 60 s
    R2  replayed sequence       WARN   once per device per 60 s
    R3  repeated auth failures  CRIT   >= threshold within 60 s
    R4  traffic flood           CRIT   rate over a 10 s sliding window,
                                       optionally auto-quarantines
    R5  silent device           INFO   no clean traffic for 24 h (sweep)

Alert storms are bounded by re-arm suppression: after a rule fires for a
subject it stays quiet for the window length. Alerts are append-only;
acknowledgement is the only permitted mutation.
"""

from __future__ import annotations

import enum
from collections import defaultdict, deque
from dataclasses import dataclass
from typing import Callable

WINDOW_MS = 60_000
FLOOD_WINDOW_MS = 10_000


class EventKind(enum.Enum):
    CLEAN = "CLEAN"
    UNKNOWN_DEVICE = "UNKNOWN_DEVICE"
    REPLAY = "REPLAY"
    AUTH_FAILURE = "AUTH_FAILURE"
    QUARANTINED_TRAFFIC = "QUARANTINED_TRAFFIC"
    REVOKED_TRAFFIC = "REVOKED_TRAFFIC"


@dataclass(frozen=True)
class SecurityEvent:
    kind: EventKind
    device_id: bytes | None
    source: str
    at: int  # unix-ms


class RuleId(enum.Enum):
    R1_UNKNOWN = "R1_UNKNOWN"
    R2_REPLAY = "R2_REPLAY"
    R3_AUTH = "R3_AUTH"
    R4_FLOOD = "R4_FLOOD"
    R5_SILENT = "R5_SILENT"


class Severity(enum.Enum):
    INFO = "INFO"
    WARN = "WARN"
    CRIT = "CRIT"


@dataclass
class Alert:
    alert_id: int
    rule: RuleId
    subject: str  # device_id hex or source address
    severity: Severity
    at: int
    detail: str
    acknowledged: bool = False

    def to_dict(self) -> dict:
        return {
            "alert_id": self.alert_id,
            "rule": self.rule.value,
            "subject": self.subject,
            "severity": self.severity.value,
            "at": self.at,
            "detail": self.detail,
            "acknowledged": self.acknowledged,
        }


class AlertLog:
    """Append-only alert store. Acknowledgement is the only mutation."""

    def __init__(self):
        self._alerts: list[Alert] = []

    def append(self, alert: Alert) -> None:
        self._alerts.append(alert)

    def acknowledge(self, alert_id: int) -> bool:
        for alert in self._alerts:
            if alert.alert_id == alert_id:
                alert.acknowledged = True
                return True
        return False

    def query(self, since_ms: int = 0, unacked_only: bool = False) -> list[Alert]:
        return [
            a
            for a in self._alerts
            if a.at >= since_ms and (not unacked_only or not a.acknowledged)
        ]

    def count_by_rule(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for a in self._alerts:
            counts[a.rule.value] = counts.get(a.rule.value, 0) + 1
        return counts

    def __len__(self) -> int:
        return len(self._alerts)


@dataclass
class SentinelConfig:
    auth_fail_threshold: int = 5
    flood_rate: int = 10  # envelopes per second over the 10 s window
    auto_quarantine: bool = True
    silent_hours: int = 24


class Sentinel:
    """Window state plus the five rules. Single-owner: callers serialize."""

    def __init__(
        self,
        config: SentinelConfig | None = None,
        status_lookup: Callable[[bytes], str | None] | None = None,
        quarantine_action: Callable[[bytes, str], None] | None = None,
    ):
        self.config = config or SentinelConfig()
        self.status_lookup = status_lookup or (lambda _d: None)
        self.quarantine_action = quarantine_action
        self.alerts = AlertLog()
        self._next_id = 1
        self._suppress: dict[tuple[RuleId, str], int] = {}
        self._auth_failures: dict[bytes, deque[int]] = defaultdict(deque)
        self._traffic: dict[bytes, deque[int]] = defaultdict(deque)
        self._last_clean: dict[bytes, int] = {}
        self._silent_flagged: set[bytes] = set()

    # -- helpers ------------------------------------------------------------

    def _suppressed(self, rule: RuleId, subject: str, now: int) -> bool:
        last = self._suppress.get((rule, subject))
        return last is not None and now - last < WINDOW_MS

    def _fire(
        self, rule: RuleId, subject: str, severity: Severity, now: int, detail: str
    ) -> Alert:
        alert = Alert(self._next_id, rule, subject, severity, now, detail)
        self._next_id += 1
        self._suppress[(rule, subject)] = now
        self.alerts.append(alert)
        return alert

    @staticmethod
    def _trim(window: deque[int], horizon: int) -> None:
        while window and window[0] < horizon:
            window.popleft()

    # -- the rules ------------------------------------------------------------

    def evaluate(self, event: SecurityEvent) -> list[Alert]:
        """Feed one event through R1-R4. Returns any alerts it raised."""
        now = event.at
        fired: list[Alert] = []
        device = event.device_id
        subject = device.hex() if device is not None else event.source

        if event.kind == EventKind.CLEAN and device is not None:
            self._last_clean[device] = now
            self._silent_flagged.discard(device)

        if event.kind == EventKind.UNKNOWN_DEVICE:
            if not self._suppressed(RuleId.R1_UNKNOWN, event.source, now):
                fired.append(
                    self._fire(
                        RuleId.R1_UNKNOWN,
                        event.source,
                        Severity.WARN,
                        now,
                        f"datagram from unenrolled sender at {event.source}",
                    )
                )

        if event.kind == EventKind.REPLAY and device is not None:
            if not self._suppressed(RuleId.R2_REPLAY, subject, now):
                fired.append(
                    self._fire(
                        RuleId.R2_REPLAY,
                        subject,
                        Severity.WARN,
                        now,
                        f"replayed sequence number from device {subject}",
                    )
                )

        if event.kind == EventKind.AUTH_FAILURE and device is not None:
            window = self._auth_failures[device]
            window.append(now)
            self._trim(window, now - WINDOW_MS)
            if len(window) >= self.config.auth_fail_threshold and not self._suppressed(
                RuleId.R3_AUTH, subject, now
            ):
                fired.append(
                    self._fire(
                        RuleId.R3_AUTH,
                        subject,
                        Severity.CRIT,
                        now,
                        f"{len(window)} authentication failures within 60 s",
                    )
                )

        if device is not None:
            traffic = self._traffic[device]
            traffic.append(now)
            self._trim(traffic, now - FLOOD_WINDOW_MS)
            threshold = self.config.flood_rate * (FLOOD_WINDOW_MS // 1000)
            if (
                len(traffic) > threshold
                and self.status_lookup(device) == "ACTIVE"
                and not self._suppressed(RuleId.R4_FLOOD, subject, now)
            ):
                alert = self._fire(
                    RuleId.R4_FLOOD,
                    subject,
                    Severity.CRIT,
                    now,
                    f"{len(traffic)} envelopes in 10 s exceeds {self.config.flood_rate}/s",
                )
                fired.append(alert)
                if self.config.auto_quarantine and self.quarantine_action is not None:
                    self.quarantine_action(device, f"flood: {alert.detail}")

        return fired

    def device_activated(self, device_id: bytes, now: int) -> None:
        """Baseline for the silence rule: activation counts as last contact."""
        self._last_clean[device_id] = now
        self._silent_flagged.discard(device_id)

    def device_deactivated(self, device_id: bytes) -> None:
        self._last_clean.pop(device_id, None)
        self._silent_flagged.discard(device_id)

    def sweep(self, now: int) -> list[Alert]:
        """Clock-driven rule R5: flag ACTIVE devices gone silent. Fires once
        per silence episode; a clean event re-arms it."""
        fired: list[Alert] = []
        horizon = self.config.silent_hours * 3_600_000
        for device, last in list(self._last_clean.items()):
            if device in self._silent_flagged:
                continue
            if self.status_lookup(device) != "ACTIVE":
                continue
            if now - last > horizon:
                self._silent_flagged.add(device)
                fired.append(
                    self._fire(
                        RuleId.R5_SILENT,
                        device.hex(),
                        Severity.INFO,
                        now,
                        f"no clean traffic for over {self.config.silent_hours} h",
                    )
                )
        return fired

    # the ingest pipeline's entry point
    on_event = evaluate
