"""Gateway configuration: flat `key = value` files with dotted sections.

Unknown keys are rejected at load (a misspelled key must never silently
fall back to a default), values are type- and range-checked, and every
default matches the documented contract.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError


class ParseError(ConfigError):
    def __init__(self, line_no: int, text: str):
        super().__init__(f"line {line_no}: cannot parse {text!r} (expected key = value)")
        self.line_no = line_no


class UnknownKey(ConfigError):
    def __init__(self, name: str, line_no: int):
        super().__init__(f"line {line_no}: unknown key {name!r}")
        self.name = name
        self.line_no = line_no


class InvalidValue(ConfigError):
    def __init__(self, key: str, reason: str):
        super().__init__(f"invalid value for {key!r}: {reason}")
        self.key = key


def _parse_listen(key: str, value: str) -> tuple[str, int]:
    host, sep, port_s = value.rpartition(":")
    if not sep or not host:
        raise InvalidValue(key, "expected host:port")
    try:
        port = int(port_s)
    except ValueError:
        raise InvalidValue(key, f"port {port_s!r} is not an integer")
    if not 1 <= port <= 65535:
        raise InvalidValue(key, f"port {port} out of range")
    return host, port


def _parse_bool(key: str, value: str) -> bool:
    lowered = value.lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise InvalidValue(key, f"expected true/false, got {value!r}")


def _parse_int(key: str, value: str, lo: int, hi: int) -> int:
    try:
        parsed = int(value)
    except ValueError:
        raise InvalidValue(key, f"{value!r} is not an integer")
    if not lo <= parsed <= hi:
        raise InvalidValue(key, f"{parsed} outside [{lo}, {hi}]")
    return parsed


MIN_TOKEN_LEN = 16


@dataclass
class Config:
    data_dir: str = "data"
    udp_listen: tuple[str, int] = ("0.0.0.0", 5683)
    http_listen: tuple[str, int] = ("127.0.0.1", 8080)
    operator_token: str = ""  # set by `homegate init`; mutating APIs refuse to run without it
    enrollment_auto_approve: bool = False
    enrollment_pending_ttl_s: int = 600
    enrollment_max_pending: int = 1024
    ids_auto_quarantine: bool = True
    ids_flood_rate: int = 10
    ids_auth_fail_threshold: int = 5
    ids_silent_hours: int = 24
    relay_max_hops: int = 2
    store_max_readings: int = 1_000_000
    runtime_single_thread: bool = False
    dashboard_dir: str = ""

    def render(self) -> str:
        lines = [
            f"data_dir = {self.data_dir}",
            f"udp_listen = {self.udp_listen[0]}:{self.udp_listen[1]}",
            f"http_listen = {self.http_listen[0]}:{self.http_listen[1]}",
            f"operator_token = {self.operator_token}",
            f"enrollment.auto_approve = {str(self.enrollment_auto_approve).lower()}",
            f"enrollment.pending_ttl_s = {self.enrollment_pending_ttl_s}",
            f"enrollment.max_pending = {self.enrollment_max_pending}",
            f"ids.auto_quarantine = {str(self.ids_auto_quarantine).lower()}",
            f"ids.flood_rate = {self.ids_flood_rate}",
            f"ids.auth_fail_threshold = {self.ids_auth_fail_threshold}",
            f"ids.silent_hours = {self.ids_silent_hours}",
            f"relay.max_hops = {self.relay_max_hops}",
            f"store.max_readings = {self.store_max_readings}",
            f"runtime.single_thread = {str(self.runtime_single_thread).lower()}",
        ]
        if self.dashboard_dir:
            lines.append(f"dashboard.dir = {self.dashboard_dir}")
        return "\n".join(lines) + "\n"


_SETTERS = {
    "data_dir": lambda cfg, k, v: setattr(cfg, "data_dir", v),
    "udp_listen": lambda cfg, k, v: setattr(cfg, "udp_listen", _parse_listen(k, v)),
    "http_listen": lambda cfg, k, v: setattr(cfg, "http_listen", _parse_listen(k, v)),
    "operator_token": lambda cfg, k, v: setattr(cfg, "operator_token", _check_token(k, v)),
    "enrollment.auto_approve": lambda cfg, k, v: setattr(cfg, "enrollment_auto_approve", _parse_bool(k, v)),
    "enrollment.pending_ttl_s": lambda cfg, k, v: setattr(cfg, "enrollment_pending_ttl_s", _parse_int(k, v, 1, 2**32 - 1)),
    "enrollment.max_pending": lambda cfg, k, v: setattr(cfg, "enrollment_max_pending", _parse_int(k, v, 1, 2**32 - 1)),
    "ids.auto_quarantine": lambda cfg, k, v: setattr(cfg, "ids_auto_quarantine", _parse_bool(k, v)),
    "ids.flood_rate": lambda cfg, k, v: setattr(cfg, "ids_flood_rate", _parse_int(k, v, 1, 2**32 - 1)),
    "ids.auth_fail_threshold": lambda cfg, k, v: setattr(cfg, "ids_auth_fail_threshold", _parse_int(k, v, 1, 2**32 - 1)),
    "ids.silent_hours": lambda cfg, k, v: setattr(cfg, "ids_silent_hours", _parse_int(k, v, 1, 2**32 - 1)),
    "relay.max_hops": lambda cfg, k, v: setattr(cfg, "relay_max_hops", _parse_int(k, v, 0, 255)),
    "store.max_readings": lambda cfg, k, v: setattr(cfg, "store_max_readings", _parse_int(k, v, 1, 2**64 - 1)),
    "runtime.single_thread": lambda cfg, k, v: setattr(cfg, "runtime_single_thread", _parse_bool(k, v)),
    "dashboard.dir": lambda cfg, k, v: setattr(cfg, "dashboard_dir", v),
}


def _check_token(key: str, value: str) -> str:
    if value and len(value) < MIN_TOKEN_LEN:
        raise InvalidValue(key, f"operator token must be at least {MIN_TOKEN_LEN} chars")
    return value


def parse_config(text: str) -> Config:
    cfg = Config()
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError(line_no, raw)
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        setter = _SETTERS.get(key)
        if setter is None:
            raise UnknownKey(key, line_no)
        setter(cfg, key, value)
    return cfg


def load_config(path: str) -> Config:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read())


def save_config(cfg: Config, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(cfg.render())
