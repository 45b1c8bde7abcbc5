"""Default-credential audit.

Factory and backdoor logins are the cheapest way into a fleet, so the
gateway can sweep its own devices for them: every dictionary entry whose
service matches a target's advertised service is tried against that
target's mock login endpoint. This only ever runs against simulator-exposed
endpoints — scanning real networks is out of scope by design.

The dictionary ships as `data/default_creds.txt`
(`service<TAB>username<TAB>password` lines).
"""

from __future__ import annotations

import hashlib
import importlib.resources
import time
from dataclasses import dataclass, field
from typing import Callable

ATTEMPTS_PER_SECOND = 2.0


@dataclass(frozen=True)
class CredentialEntry:
    service: str
    username: str
    password: str
    entry_id: int  # 1-based line position in the dictionary


def parse_dictionary(text: str) -> list[CredentialEntry]:
    entries = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split("\t")
        if len(parts) != 3:
            raise ValueError(f"dictionary line {line_no}: expected service<TAB>user<TAB>password")
        entries.append(CredentialEntry(parts[0], parts[1], parts[2], len(entries) + 1))
    return entries


def load_dictionary(path: str) -> list[CredentialEntry]:
    with open(path, "r", encoding="utf-8") as f:
        return parse_dictionary(f.read())


def load_builtin_dictionary() -> list[CredentialEntry]:
    text = importlib.resources.files("homegate.data").joinpath("default_creds.txt").read_text("utf-8")
    return parse_dictionary(text)


class TargetUnreachable(Exception):
    pass


class MockLoginService:
    """A simulated device's login endpoint. Stores only a salted hash of the
    real credential — mirroring firmware that hard-codes a hashed password."""

    def __init__(self, target_id: str, service: str, username: str, password: str,
                 reachable: bool = True):
        self.target_id = target_id
        self.service = service
        self._username = username
        self._digest = self._hash(password)
        self.reachable = reachable
        self.attempt_log: list[int] = []  # unix-ms per attempt, for pacing checks

    @staticmethod
    def _hash(password: str) -> bytes:
        return hashlib.sha256(b"homegate-mock-login:" + password.encode("utf-8")).digest()

    def try_login(self, username: str, password: str, now_ms: int) -> bool:
        if not self.reachable:
            raise TargetUnreachable(self.target_id)
        self.attempt_log.append(now_ms)
        return username == self._username and self._hash(password) == self._digest


@dataclass(frozen=True)
class CredentialFinding:
    target_id: str
    service: str
    username: str
    password: str  # raw in the record; masked everywhere else
    entry_id: int

    def masked_password(self) -> str:
        if len(self.password) <= 2:
            return "*" * len(self.password)
        return self.password[0] + "*" * (len(self.password) - 2) + self.password[-1]

    def to_dict(self) -> dict:
        return {
            "target_id": self.target_id,
            "service": self.service,
            "username": self.username,
            "password": self.masked_password(),
            "entry_id": self.entry_id,
        }


@dataclass
class ScanReport:
    findings: list[CredentialFinding] = field(default_factory=list)
    unreachable: list[str] = field(default_factory=list)
    attempts: int = 0


def audit_default_credentials(
    targets: list[MockLoginService],
    dictionary: list[CredentialEntry],
    now_ms: int = 0,
    wait_ms: Callable[[int], None] | None = None,
) -> ScanReport:
    """Try every matching dictionary entry against every target, paced at
    two attempts per second per target. `wait_ms` is called with the pause
    between attempts — real deployments sleep, the simulator advances its
    virtual clock, unit tests count."""
    if not dictionary:
        raise ValueError("credential dictionary is empty")
    if wait_ms is None:
        wait_ms = lambda ms: time.sleep(ms / 1000)

    interval_ms = int(1000 / ATTEMPTS_PER_SECOND)
    report = ScanReport()
    clock_ms = now_ms
    for target in targets:
        candidates = [e for e in dictionary if e.service == target.service]
        first_attempt = True
        for entry in candidates:
            if not first_attempt:
                wait_ms(interval_ms)
                clock_ms += interval_ms
            first_attempt = False
            try:
                ok = target.try_login(entry.username, entry.password, clock_ms)
            except TargetUnreachable:
                report.unreachable.append(target.target_id)
                break
            report.attempts += 1
            if ok:
                report.findings.append(
                    CredentialFinding(
                        target.target_id, target.service, entry.username, entry.password, entry.entry_id
                    )
                )
    return report
