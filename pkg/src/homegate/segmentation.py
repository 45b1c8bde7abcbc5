"""Virtual subnets and the compiled default-deny policy.

Zones are disjoint IPv4 ranges with a role; devices get the lowest free host
address in their zone (the gateway reserves .1 of every range, since it is
multi-homed into each virtual subnet). The compiler turns zones +
assignments + the quarantine set into an ordered first-match ruleset with an
implicit terminal deny-all, rendered in iptables-like text. Evaluation is
native — no real firewall is driven — so reachability is testable anywhere.
"""

from __future__ import annotations

import enum
import ipaddress
from dataclasses import dataclass, field

from .errors import DuplicateName, OverlappingRange, UnknownZone, ZoneExhausted

GATEWAY_UDP_PORT = 5683
OPERATOR_TCP_PORT = 8080

MAX_ZONE_NAME_BYTES = 32


class ZoneRole(enum.Enum):
    IOT = "IOT"
    REPEATER = "REPEATER"
    OPERATOR = "OPERATOR"
    GATEWAY = "GATEWAY"


class Proto(enum.Enum):
    UDP = "udp"
    TCP = "tcp"
    ANY = "any"


class Action(enum.Enum):
    ALLOW = "ACCEPT"
    DENY = "DROP"


@dataclass(frozen=True)
class Grant:
    to_zone: str
    port: int | None  # None = any
    proto: Proto = Proto.ANY


@dataclass
class Zone:
    name: str
    network: ipaddress.IPv4Network
    role: ZoneRole
    allow_to: list[Grant] = field(default_factory=list)

    def reserved_gateway_leg(self) -> ipaddress.IPv4Address:
        """Host .1 of the range — the gateway's own address in this subnet."""
        return self.network.network_address + 1

    def assignable_capacity(self) -> int:
        if self.network.prefixlen >= 31:
            return 0
        # exclude network, broadcast, and the reserved .1 leg
        return self.network.num_addresses - 3

    def first_assignable(self) -> ipaddress.IPv4Address:
        return self.network.network_address + 2

    def last_assignable(self) -> ipaddress.IPv4Address:
        return self.network.broadcast_address - 1


@dataclass(frozen=True)
class Rule:
    action: Action
    src: ipaddress.IPv4Network | None  # None = any
    dst: ipaddress.IPv4Network | None
    port: int | None
    proto: Proto
    comment: str = ""

    def matches(
        self,
        src: ipaddress.IPv4Address,
        dst: ipaddress.IPv4Address,
        port: int,
        proto: Proto,
    ) -> bool:
        if self.src is not None and src not in self.src:
            return False
        if self.dst is not None and dst not in self.dst:
            return False
        if self.port is not None and port != self.port:
            return False
        if self.proto != Proto.ANY and proto != self.proto:
            return False
        return True

    def render(self) -> str:
        parts = ["-A", "FORWARD"]
        if self.src is not None:
            parts += ["-s", str(self.src)]
        if self.dst is not None:
            parts += ["-d", str(self.dst)]
        if self.proto != Proto.ANY:
            parts += ["-p", self.proto.value]
        if self.port is not None:
            parts += ["--dport", str(self.port)]
        if self.comment:
            parts += ["-m", "comment", "--comment", f'"{self.comment}"']
        parts += ["-j", self.action.value]
        return " ".join(parts)


_DENY_ALL = Rule(Action.DENY, None, None, None, Proto.ANY, "default deny")


class RuleSet:
    """Ordered first-match rules; the last effective rule is always deny-all."""

    def __init__(self, rules: list[Rule]):
        self.rules = list(rules) + [_DENY_ALL]

    def evaluate(
        self,
        src: ipaddress.IPv4Address | str,
        dst: ipaddress.IPv4Address | str,
        port: int,
        proto: Proto,
    ) -> Action:
        src = ipaddress.IPv4Address(src)
        dst = ipaddress.IPv4Address(dst)
        for rule in self.rules:
            if rule.matches(src, dst, port, proto):
                return rule.action
        return Action.DENY  # unreachable: _DENY_ALL matches everything

    def render(self) -> str:
        return "\n".join(r.render() for r in self.rules) + "\n"

    def __len__(self) -> int:
        return len(self.rules)


def check_reachability(
    ruleset: RuleSet,
    src: ipaddress.IPv4Address | str,
    dst: ipaddress.IPv4Address | str,
    port: int,
    proto: Proto,
) -> Action:
    return ruleset.evaluate(src, dst, port, proto)


def _host(addr: ipaddress.IPv4Address) -> ipaddress.IPv4Network:
    return ipaddress.IPv4Network(f"{addr}/32")


class ZoneRegistry:
    """Zone definitions plus deterministic per-zone address allocation.
    Mutations are expected to be serialized by the owning gateway."""

    def __init__(self):
        self._zones: dict[str, Zone] = {}
        self._assignments: dict[bytes, tuple[str, ipaddress.IPv4Address]] = {}

    # -- zones ---------------------------------------------------------------

    def define_zone(self, name: str, cidr: str, role: ZoneRole) -> Zone:
        if len(name.encode("utf-8")) > MAX_ZONE_NAME_BYTES or not name:
            raise ValueError(f"zone name must be 1..{MAX_ZONE_NAME_BYTES} bytes")
        if name in self._zones:
            raise DuplicateName(f"zone {name!r} already defined")
        network = ipaddress.IPv4Network(cidr, strict=True)
        if role == ZoneRole.GATEWAY and network.prefixlen != 32:
            raise ValueError("GATEWAY zone must contain exactly the gateway address")
        for existing in self._zones.values():
            if network.overlaps(existing.network):
                raise OverlappingRange(f"{cidr} overlaps zone {existing.name!r}")
        zone = Zone(name=name, network=network, role=role)
        self._zones[name] = zone
        return zone

    def zones(self) -> list[Zone]:
        """Zones in definition order."""
        return list(self._zones.values())

    def get(self, name: str) -> Zone:
        try:
            return self._zones[name]
        except KeyError:
            raise UnknownZone(f"no zone {name!r}")

    def has(self, name: str) -> bool:
        return name in self._zones

    def add_grant(self, zone_name: str, to_zone: str, port: int | None, proto: Proto) -> None:
        zone = self.get(zone_name)
        self.get(to_zone)  # must exist
        zone.allow_to.append(Grant(to_zone, port, proto))

    def gateway_address(self) -> ipaddress.IPv4Address | None:
        for zone in self._zones.values():
            if zone.role == ZoneRole.GATEWAY:
                return zone.network.network_address
        return None

    # -- assignment -------------------------------------------------------------

    def peek_address(self, device_id: bytes, zone_name: str) -> ipaddress.IPv4Address:
        """The address assign_device would hand out, without committing it."""
        zone = self.get(zone_name)
        existing = self._assignments.get(device_id)
        if existing is not None:
            if existing[0] != zone_name:
                raise ValueError(f"device already assigned in zone {existing[0]!r}")
            return existing[1]
        used = {addr for (zn, addr) in self._assignments.values() if zn == zone_name}
        addr = zone.first_assignable()
        last = zone.last_assignable()
        while addr <= last:
            if addr not in used:
                return addr
            addr += 1
        raise ZoneExhausted(f"zone {zone_name!r} has no free address")

    def assign_device(self, device_id: bytes, zone_name: str) -> ipaddress.IPv4Address:
        """Lowest free host address; idempotent per device."""
        addr = self.peek_address(device_id, zone_name)
        self._assignments[device_id] = (zone_name, addr)
        return addr

    def restore_assignment(
        self, device_id: bytes, zone_name: str, addr: ipaddress.IPv4Address
    ) -> None:
        """Re-attach a persisted assignment on startup."""
        self.get(zone_name)
        self._assignments[device_id] = (zone_name, addr)

    def assignment(self, device_id: bytes) -> tuple[str, ipaddress.IPv4Address] | None:
        return self._assignments.get(device_id)

    def assignments(self) -> dict[bytes, tuple[str, ipaddress.IPv4Address]]:
        return dict(self._assignments)


def compile_policy(
    zones: list[Zone],
    assignments: dict[bytes, tuple[str, ipaddress.IPv4Address]],
    quarantined: set[bytes],
) -> RuleSet:
    """Deterministic compile. Rule order:

      1. per-quarantined-device deny (everything from its address)
      2. IOT/REPEATER zone -> gateway on UDP 5683, then IOT zones -> each
         repeater device on UDP 5683 (devices behind a repeater send to it)
      3. OPERATOR zone -> gateway on TCP 8080
      4. explicit allow_to grants, in zone definition then grant order
      5. implicit deny-all

    Identical inputs render byte-identical text.
    """
    by_name = {z.name: z for z in zones}
    gateway_addr = next(
        (z.network.network_address for z in zones if z.role == ZoneRole.GATEWAY), None
    )
    rules: list[Rule] = []

    for device_id in sorted(quarantined):
        entry = assignments.get(device_id)
        if entry is None:
            continue
        rules.append(
            Rule(
                Action.DENY,
                _host(entry[1]),
                None,
                None,
                Proto.ANY,
                f"quarantine {device_id.hex()}",
            )
        )

    if gateway_addr is not None:
        gw = _host(gateway_addr)
        for zone in zones:
            if zone.role in (ZoneRole.IOT, ZoneRole.REPEATER):
                rules.append(
                    Rule(
                        Action.ALLOW,
                        zone.network,
                        gw,
                        GATEWAY_UDP_PORT,
                        Proto.UDP,
                        f"{zone.name} telemetry",
                    )
                )
        repeater_devices = [
            (device_id, addr)
            for device_id, (zone_name, addr) in assignments.items()
            if zone_name in by_name and by_name[zone_name].role == ZoneRole.REPEATER
        ]
        for device_id, addr in repeater_devices:
            for zone in zones:
                if zone.role == ZoneRole.IOT:
                    rules.append(
                        Rule(
                            Action.ALLOW,
                            zone.network,
                            _host(addr),
                            GATEWAY_UDP_PORT,
                            Proto.UDP,
                            f"{zone.name} via repeater {device_id.hex()}",
                        )
                    )
        for zone in zones:
            if zone.role == ZoneRole.OPERATOR:
                rules.append(
                    Rule(
                        Action.ALLOW,
                        zone.network,
                        gw,
                        OPERATOR_TCP_PORT,
                        Proto.TCP,
                        f"{zone.name} operator api",
                    )
                )

    for zone in zones:
        for grant in zone.allow_to:
            target = by_name.get(grant.to_zone)
            if target is None:
                continue
            rules.append(
                Rule(
                    Action.ALLOW,
                    zone.network,
                    target.network,
                    grant.port,
                    grant.proto,
                    f"grant {zone.name} to {grant.to_zone}",
                )
            )

    return RuleSet(rules)
