"""The `homegate` command line.

Administrative subcommands (`enroll`, `zones`) drive a running gateway over
its HTTP API; `init`, `run`, and `audit verify` work on the data directory
directly; `sim` runs the virtual fleet; `credscan` sweeps a simulated fleet
for factory credentials.
"""

from __future__ import annotations

import argparse
import json
import os
import signal
import sys
import time
import urllib.error
import urllib.request

from .audit import verify_directory
from .config import load_config
from .credscan import MockLoginService, audit_default_credentials, load_builtin_dictionary, load_dictionary
from .errors import HomegateError
from .gateway import CONFIG_FILE, init_data_dir, run_gateway
from .simfleet import SCENARIOS, FleetSpec, run_scenario


def _api_call(base: str, token: str | None, method: str, path: str, body: dict | None = None):
    url = base.rstrip("/") + path
    data = json.dumps(body).encode("utf-8") if body is not None else None
    request = urllib.request.Request(url, data=data, method=method)
    request.add_header("Content-Type", "application/json")
    if token:
        request.add_header("Authorization", f"Bearer {token}")
    try:
        with urllib.request.urlopen(request, timeout=10) as response:
            raw = response.read()
            ctype = response.headers.get("Content-Type", "")
            return json.loads(raw) if "json" in ctype else raw.decode("utf-8")
    except urllib.error.HTTPError as e:
        detail = e.read().decode("utf-8", errors="replace")
        raise SystemExit(f"error: {e.code} {detail}")
    except urllib.error.URLError as e:
        raise SystemExit(f"error: cannot reach gateway at {base}: {e.reason}")


def _resolve_token(args) -> str | None:
    if getattr(args, "token", None):
        return args.token
    env = os.environ.get("HOMEGATE_TOKEN")
    if env:
        return env
    config_path = getattr(args, "config", None)
    if config_path and os.path.exists(config_path):
        return load_config(config_path).operator_token
    return None


def _print_table(rows: list[dict], columns: list[str]) -> None:
    if not rows:
        print("(none)")
        return
    widths = {c: max(len(c), *(len(str(r.get(c, ""))) for r in rows)) for c in columns}
    print("  ".join(c.ljust(widths[c]) for c in columns))
    for row in rows:
        print("  ".join(str(row.get(c, "")).ljust(widths[c]) for c in columns))


# --- subcommands ----------------------------------------------------------------


def cmd_init(args) -> int:
    seed = bytes.fromhex(args.seed) if args.seed else None
    if seed is not None and len(seed) != 32:
        raise SystemExit("error: --seed must be 64 hex chars (32 bytes)")
    cfg = init_data_dir(args.data_dir, seed=seed)
    print(f"initialized {args.data_dir}")
    print(f"operator token: {cfg.operator_token}")
    print(f"config: {os.path.join(args.data_dir, CONFIG_FILE)}")
    return 0


def cmd_run(args) -> int:
    config = load_config(args.config)
    handle = run_gateway(config)
    host, port = config.http_listen
    print(f"homegate up: udp {config.udp_listen[0]}:{config.udp_listen[1]}, "
          f"http http://{host}:{port}/api/v1")
    stop = {"flag": False}

    def on_signal(_sig, _frame):
        stop["flag"] = True

    signal.signal(signal.SIGINT, on_signal)
    signal.signal(signal.SIGTERM, on_signal)
    try:
        while not stop["flag"]:
            time.sleep(0.2)
    finally:
        handle.stop()
        print("homegate stopped")
    return 0


def cmd_enroll(args) -> int:
    token = _resolve_token(args)
    if args.action == "list":
        payload = _api_call(args.api, token, "GET", "/api/v1/enrollments?state=pending")
        if args.json:
            print(json.dumps(payload))
        else:
            _print_table(payload["enrollments"], ["request_id", "requested_name", "source_address", "received_at"])
    elif args.action == "approve":
        payload = _api_call(
            args.api, token, "POST", f"/api/v1/enrollments/{args.id}/approve", {"zone": args.zone}
        )
        device = payload["device"]
        print(f"approved: device {device['device_id']} in {device['zone']} at {device['address']}")
    elif args.action == "deny":
        _api_call(args.api, token, "POST", f"/api/v1/enrollments/{args.id}/deny",
                  {"reason": args.reason})
        print("denied")
    return 0


def cmd_zones(args) -> int:
    token = _resolve_token(args)
    if args.action == "list":
        payload = _api_call(args.api, token, "GET", "/api/v1/zones")
        if args.json:
            print(json.dumps(payload))
        else:
            _print_table(payload["zones"], ["name", "range", "role", "capacity"])
    elif args.action == "add":
        payload = _api_call(
            args.api, token, "PUT", f"/api/v1/zones/{args.name}",
            {"range": args.range, "role": args.role},
        )
        print(f"zone {payload['name']}: {payload['range']} ({payload['role']})")
    return 0


def cmd_audit_verify(args) -> int:
    result = verify_directory(args.data_dir)
    if result.ok:
        print(f"OK n={result.count}")
        return 0
    print(f"BROKEN index={result.broken_index}")
    return 1


def cmd_credscan(args) -> int:
    dictionary = load_dictionary(args.dict) if args.dict else load_builtin_dictionary()
    if args.clean:
        targets = [
            MockLoginService("demo-cam-1", "http-admin", "admin", "rotated-9f2#kq"),
            MockLoginService("demo-lock-1", "ssh", "pi", "rotated-77!aa"),
            MockLoginService("demo-fw-1", "fortios-ssh", "Fortimanager_Access", "rotated-x1$z"),
        ]
    else:
        # demo fleet with two planted weaknesses, including the firmware backdoor
        targets = [
            MockLoginService("demo-cam-1", "http-admin", "admin", "admin"),
            MockLoginService("demo-lock-1", "ssh", "pi", "rotated-77!aa"),
            MockLoginService("demo-fw-1", "fortios-ssh", "Fortimanager_Access", "FGTAbc11*xy+Qqz27"),
        ]
    report = audit_default_credentials(targets, dictionary, wait_ms=lambda ms: None)
    findings = [f.to_dict() for f in report.findings]
    if args.json:
        print(json.dumps({"findings": findings, "unreachable": report.unreachable,
                          "attempts": report.attempts}))
    else:
        _print_table(findings, ["target_id", "service", "username", "password", "entry_id"])
        print(f"{len(findings)} finding(s) from {report.attempts} attempts")
    return 1 if findings else 0


def cmd_sim_run(args) -> int:
    spec = FleetSpec(
        n_direct=args.devices,
        n_via_repeater=args.via_repeater,
        duration_s=args.duration,
        seed=args.seed,
        send_interval_ms=args.interval_ms,
    )
    params = {}
    if args.n is not None:
        params["n"] = args.n
    report = run_scenario(args.scenario, spec, params)
    if args.json:
        print(json.dumps(report.to_dict()))
        return 0
    d = report.to_dict()
    print(f"scenario {d['scenario']} seed {d['seed']} "
          f"({d['n_direct']} direct + {d['n_via_repeater']} via repeater, {d['duration_s']}s virtual)")
    print(f"  sent {d['sent']}  delivered {d['delivered']}  stored {d['stored']}")
    if d["rejected"]:
        print("  rejected: " + ", ".join(f"{k}={v}" for k, v in d["rejected"].items()))
    if d["alerts"]:
        print("  alerts:   " + ", ".join(f"{k}={v}" for k, v in d["alerts"].items()))
    print(f"  repeater: forwarded={d['repeater'].get('forwarded', 0)} "
          f"dropped_dup={d['repeater'].get('dropped_dup', 0)}")
    statuses = {}
    for status in d["devices"].values():
        statuses[status] = statuses.get(status, 0) + 1
    print("  devices:  " + ", ".join(f"{k}={v}" for k, v in sorted(statuses.items())))
    print(f"  time:     {d['virtual_ms']} ms virtual, {d['wall_s']} s wall")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="homegate", description="self-hosted IoT gateway")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="initialize a gateway data directory")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--seed", help="64 hex chars for a reproducible identity")
    p.set_defaults(fn=cmd_init)

    p = sub.add_parser("run", help="run the gateway service")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("enroll", help="manage enrollment requests (live gateway)")
    p.add_argument("action", choices=["list", "approve", "deny"])
    p.add_argument("id", nargs="?", help="request id (hex) for approve/deny")
    p.add_argument("--zone", help="zone name for approve")
    p.add_argument("--reason", default="", help="reason for deny")
    p.add_argument("--api", default="http://127.0.0.1:8080")
    p.add_argument("--token")
    p.add_argument("--config")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_enroll)

    p = sub.add_parser("zones", help="manage zones (live gateway)")
    p.add_argument("action", choices=["list", "add"])
    p.add_argument("name", nargs="?")
    p.add_argument("range", nargs="?")
    p.add_argument("role", nargs="?", choices=["IOT", "REPEATER", "OPERATOR", "GATEWAY"])
    p.add_argument("--api", default="http://127.0.0.1:8080")
    p.add_argument("--token")
    p.add_argument("--config")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_zones)

    p = sub.add_parser("audit", help="audit chain tools")
    audit_sub = p.add_subparsers(dest="audit_command", required=True)
    pv = audit_sub.add_parser("verify", help="verify the hash chain")
    pv.add_argument("--data-dir", required=True)
    pv.set_defaults(fn=cmd_audit_verify)

    p = sub.add_parser("credscan", help="default-credential audit of a demo fleet")
    p.add_argument("--dict", help="dictionary file (service<TAB>user<TAB>password)")
    p.add_argument("--clean", action="store_true", help="demo fleet with rotated credentials")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_credscan)

    p = sub.add_parser("sim", help="deterministic fleet simulator")
    sim_sub = p.add_subparsers(dest="sim_command", required=True)
    pr = sim_sub.add_parser("run", help="run a scenario")
    pr.add_argument("--devices", type=int, default=2)
    pr.add_argument("--via-repeater", type=int, default=0)
    pr.add_argument("--duration", type=int, default=10, help="virtual seconds")
    pr.add_argument("--scenario", choices=SCENARIOS, default="baseline")
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--interval-ms", type=int, default=1000)
    pr.add_argument("--n", type=int, help="scenario size parameter (replays, rogue datagrams)")
    pr.add_argument("--json", action="store_true")
    pr.set_defaults(fn=cmd_sim_run)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    enroll_needs_id = args.command == "enroll" and args.action in ("approve", "deny")
    if enroll_needs_id and not args.id:
        raise SystemExit("error: request id required")
    if args.command == "enroll" and args.action == "approve" and not args.zone:
        raise SystemExit("error: --zone required for approve")
    if args.command == "zones" and args.action == "add" and not (args.name and args.range and args.role):
        raise SystemExit("error: zones add needs <name> <range> <role>")
    try:
        return args.fn(args)
    except HomegateError as e:
        raise SystemExit(f"error: {e}")


if __name__ == "__main__":
    sys.exit(main())
