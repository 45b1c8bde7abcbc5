"""Operator HTTP API and the live event stream.

Plain HTTP/1.1 with JSON bodies under /api/v1, served by the stdlib
threading server — the dashboard is a pure client of these endpoints plus
the SSE stream at /api/v1/events. Every mutating route demands
`Authorization: Bearer <operator_token>`; the route table is data, so the
authorization test can enumerate it and no new route can dodge the check.
"""

from __future__ import annotations

import base64
import json
import queue
import re
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from .enrollment import RequestState
from .errors import (
    AlreadyQuarantined,
    BadRange,
    DuplicateName,
    DuplicatePending,
    HomegateError,
    NotPending,
    NotQuarantined,
    OverlappingRange,
    Unauthorized,
    UnknownDevice,
    UnknownRequest,
    UnknownZone,
)
from .segmentation import ZoneRole

HEARTBEAT_S = 15.0


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message

    def body(self) -> dict:
        return {"code": self.code, "message": self.message}


_ERROR_STATUS = [
    (Unauthorized, 401),
    ((UnknownDevice, UnknownRequest, UnknownZone), 404),
    (
        (
            NotPending,
            AlreadyQuarantined,
            NotQuarantined,
            DuplicateName,
            DuplicatePending,
            OverlappingRange,
        ),
        409,
    ),
    (BadRange, 422),
]


def _to_api_error(e: HomegateError) -> ApiError:
    for types, status in _ERROR_STATUS:
        if isinstance(e, types):
            return ApiError(status, e.code, str(e))
    return ApiError(409, e.code, str(e))


def _hex_bytes(value: str, length: int, what: str) -> bytes:
    try:
        raw = bytes.fromhex(value)
    except ValueError:
        raise ApiError(422, "bad_id", f"{what} must be hex")
    if len(raw) != length:
        raise ApiError(422, "bad_id", f"{what} must be {length} bytes")
    return raw


def _int_param(params: dict, name: str, default: int | None = None) -> int | None:
    values = params.get(name)
    if not values:
        return default
    try:
        return int(values[0])
    except ValueError:
        raise ApiError(422, "bad_param", f"{name} must be an integer")


class Route:
    def __init__(self, method: str, pattern: str, handler, mutating: bool):
        self.method = method
        self.pattern = pattern
        self.regex = re.compile("^" + re.sub(r"\{(\w+)\}", r"(?P<\1>[^/]+)", pattern) + "$")
        self.handler = handler
        self.mutating = mutating


class Api:
    """Routing and handlers, independent of the transport so tests can call
    `dispatch` directly and the server stays a thin shell."""

    def __init__(self, gateway):
        self.gw = gateway
        self.routes: list[Route] = []
        self._register()

    def _add(self, method: str, pattern: str, handler, mutating: bool = False):
        self.routes.append(Route(method, pattern, handler, mutating))

    def _register(self):
        self._add("GET", "/api/v1/health", self.health)
        self._add("GET", "/api/v1/devices", self.list_devices)
        self._add("GET", "/api/v1/devices/{id}", self.get_device)
        self._add("GET", "/api/v1/enrollments", self.list_enrollments)
        self._add("POST", "/api/v1/enrollments/{id}/approve", self.approve, mutating=True)
        self._add("POST", "/api/v1/enrollments/{id}/deny", self.deny, mutating=True)
        self._add("POST", "/api/v1/devices/{id}/quarantine", self.quarantine, mutating=True)
        self._add("POST", "/api/v1/devices/{id}/release", self.release, mutating=True)
        self._add("POST", "/api/v1/devices/{id}/revoke", self.revoke, mutating=True)
        self._add("GET", "/api/v1/alerts", self.list_alerts)
        self._add("POST", "/api/v1/alerts/{id}/ack", self.ack_alert, mutating=True)
        self._add("GET", "/api/v1/telemetry/{id}", self.telemetry)
        self._add("GET", "/api/v1/zones", self.list_zones)
        self._add("PUT", "/api/v1/zones/{name}", self.put_zone, mutating=True)
        self._add("GET", "/api/v1/policy/rules", self.policy_rules)
        self._add("GET", "/api/v1/audit/verify", self.audit_verify)
        self._add("GET", "/api/v1/audit/records", self.audit_records)
        self._add("POST", "/api/v1/export", self.export, mutating=True)

    # -- dispatch -----------------------------------------------------------

    def dispatch(self, method: str, path: str, params: dict, body: dict, token: str | None):
        """Returns (status, payload) where payload is a dict for JSON or a
        (content_type, text) pair."""
        matched_path = False
        for route in self.routes:
            m = route.regex.match(path)
            if m is None:
                continue
            matched_path = True
            if route.method != method:
                continue
            try:
                return route.handler(args=m.groupdict(), params=params, body=body, token=token)
            except ApiError:
                raise
            except HomegateError as e:
                raise _to_api_error(e)
        if matched_path:
            raise ApiError(405, "method_not_allowed", f"{method} not allowed here")
        raise ApiError(404, "not_found", f"no route {path}")

    # -- read handlers --------------------------------------------------------

    def health(self, **_):
        return 200, {"status": "ok"}

    def list_devices(self, **_):
        return 200, {"devices": [d.to_dict() for d in self.gw.registry.devices()]}

    def get_device(self, args, **_):
        device_id = _hex_bytes(args["id"], 8, "device id")
        record = self.gw.registry.require_device(device_id)
        return 200, record.to_dict()

    def list_enrollments(self, params, **_):
        wanted = params.get("state", [None])[0]
        if wanted is not None:
            try:
                state = RequestState(wanted.upper())
            except ValueError:
                raise ApiError(422, "bad_param", f"unknown state {wanted!r}")
            requests = self.gw.registry.requests(state)
        else:
            requests = self.gw.registry.requests()
        return 200, {"enrollments": [r.to_dict() for r in requests]}

    def list_alerts(self, params, **_):
        since = _int_param(params, "since", 0)
        ack = params.get("ack", [None])[0]
        unacked_only = ack == "false"
        alerts = self.gw.sentinel.alerts.query(since_ms=since, unacked_only=unacked_only)
        return 200, {"alerts": [a.to_dict() for a in alerts]}

    def telemetry(self, args, params, **_):
        device_id = _hex_bytes(args["id"], 8, "device id")
        self.gw.registry.require_device(device_id)
        from_ms = _int_param(params, "from", 0)
        to_ms = _int_param(params, "to", 2**63)
        bucket = _int_param(params, "bucket", 0)
        agg = params.get("agg", ["raw"])[0]
        if agg not in ("raw", "mean", "min", "max", "count"):
            raise ApiError(422, "bad_param", f"unknown aggregate {agg!r}")
        if agg != "raw" and bucket < 1:
            raise ApiError(422, "bad_param", "aggregates need bucket >= 1")
        try:
            series = self.gw.store.query_readings(device_id, from_ms, to_ms, bucket, agg)
        except ValueError as e:
            raise ApiError(422, "bad_param", str(e))
        if agg == "raw":
            return 200, {"series": [r.to_dict() for r in series]}
        return 200, {"series": [b.to_dict() for b in series]}

    def list_zones(self, **_):
        zones = [
            {
                "name": z.name,
                "range": str(z.network),
                "role": z.role.value,
                "capacity": z.assignable_capacity(),
            }
            for z in self.gw.zones.zones()
        ]
        return 200, {"zones": zones}

    def policy_rules(self, **_):
        return 200, ("text/plain; charset=utf-8", self.gw.policy_rules().render())

    def audit_verify(self, **_):
        result = self.gw.verify_audit()
        payload = {"ok": result.ok, "count": result.count}
        if not result.ok:
            payload["broken_index"] = result.broken_index
        return 200, payload

    def audit_records(self, params, **_):
        limit = _int_param(params, "limit", 100)
        records = self.gw.audit.records()[-limit:]
        return 200, {"records": [r.to_dict() for r in records]}

    # -- mutating handlers -------------------------------------------------------

    def approve(self, args, body, token, **_):
        zone = body.get("zone")
        if not isinstance(zone, str) or not zone:
            raise ApiError(422, "bad_body", 'expected {"zone": "<name>"}')
        request_id = _hex_bytes(args["id"], 16, "request id")
        outcome = self.gw.approve_enrollment(request_id, zone, token)
        return 200, {"request": outcome.request.to_dict(), "device": outcome.device.to_dict()}

    def deny(self, args, body, token, **_):
        request_id = _hex_bytes(args["id"], 16, "request id")
        reason = body.get("reason", "")
        outcome = self.gw.deny_enrollment(request_id, str(reason), token)
        return 200, {"request": outcome.request.to_dict()}

    def quarantine(self, args, token, **_):
        device_id = _hex_bytes(args["id"], 8, "device id")
        self.gw.quarantine_device(device_id, "operator action", token)
        return 200, self.gw.registry.require_device(device_id).to_dict()

    def release(self, args, token, **_):
        device_id = _hex_bytes(args["id"], 8, "device id")
        self.gw.release_device(device_id, token)
        return 200, self.gw.registry.require_device(device_id).to_dict()

    def revoke(self, args, body, token, **_):
        device_id = _hex_bytes(args["id"], 8, "device id")
        reason = str(body.get("reason", ""))
        self.gw.revoke_device(device_id, reason, token)
        return 200, self.gw.registry.require_device(device_id).to_dict()

    def ack_alert(self, args, token, **_):
        try:
            alert_id = int(args["id"])
        except ValueError:
            raise ApiError(422, "bad_id", "alert id must be an integer")
        self.gw.acknowledge_alert(alert_id, token)
        return 200, {"acknowledged": alert_id}

    def put_zone(self, args, body, token, **_):
        cidr = body.get("range")
        role_name = body.get("role")
        if not isinstance(cidr, str) or not isinstance(role_name, str):
            raise ApiError(422, "bad_body", 'expected {"range": "...", "role": "..."}')
        try:
            role = ZoneRole(role_name.upper())
        except ValueError:
            raise ApiError(422, "bad_body", f"unknown role {role_name!r}")
        try:
            zone = self.gw.define_zone(args["name"], cidr, role, token)
        except ValueError as e:
            raise ApiError(422, "bad_body", str(e))
        return 200, {"name": zone.name, "range": str(zone.network), "role": zone.role.value}

    def export(self, body, token, **_):
        try:
            from_ms = int(body["from"])
            to_ms = int(body["to"])
            recipient = base64.b64decode(body["recipient_pub"], validate=True)
        except (KeyError, ValueError, TypeError):
            raise ApiError(422, "bad_body", 'expected {"from", "to", "recipient_pub"}')
        if len(recipient) != 32:
            raise ApiError(422, "bad_body", "recipient_pub must be 32 bytes base64")
        bundle = self.gw.export(from_ms, to_ms, recipient, token)
        return 200, {
            "bundle": base64.b64encode(bundle.encode()).decode("ascii"),
            "sha256": bundle.bundle_hash().hex(),
            "records": bundle.record_count,
        }


# --- http plumbing -----------------------------------------------------------------


def build_http_server(gateway, listen: tuple[str, int], heartbeat_s: float = HEARTBEAT_S):
    api = Api(gateway)

    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"
        server_version = "homegate"

        def log_message(self, *args):  # quiet by default
            pass

        def _token(self) -> str | None:
            header = self.headers.get("Authorization", "")
            if header.startswith("Bearer "):
                return header[len("Bearer "):]
            return None

        def _write_json(self, status: int, payload: dict) -> None:
            raw = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(raw)))
            self.end_headers()
            self.wfile.write(raw)

        def _write_text(self, status: int, content_type: str, text: str) -> None:
            raw = text.encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(raw)))
            self.end_headers()
            self.wfile.write(raw)

        def _read_body(self) -> dict:
            length = int(self.headers.get("Content-Length") or 0)
            if length == 0:
                return {}
            raw = self.rfile.read(length)
            try:
                parsed = json.loads(raw)
            except json.JSONDecodeError:
                raise ApiError(422, "bad_json", "request body is not valid JSON")
            if not isinstance(parsed, dict):
                raise ApiError(422, "bad_json", "request body must be a JSON object")
            return parsed

        def _serve(self, method: str) -> None:
            parsed = urlparse(self.path)
            path = parsed.path
            if path == "/api/v1/events" and method == "GET":
                self._serve_events()
                return
            if method == "GET" and not path.startswith("/api/"):
                self._serve_static(path)
                return
            try:
                body = self._read_body() if method in ("POST", "PUT") else {}
                route = next(
                    (
                        r
                        for r in api.routes
                        if r.regex.match(path) and r.method == method
                    ),
                    None,
                )
                if route is not None and route.mutating:
                    # authorization is checked before anything else happens
                    gateway._require_token(self._token())
                status, payload = api.dispatch(
                    method, path, parse_qs(parsed.query), body, self._token()
                )
            except ApiError as e:
                self._write_json(e.status, e.body())
                return
            except Unauthorized as e:
                self._write_json(401, {"code": "unauthorized", "message": str(e)})
                return
            except HomegateError as e:
                err = _to_api_error(e)
                self._write_json(err.status, err.body())
                return
            if isinstance(payload, tuple):
                self._write_text(status, payload[0], payload[1])
            else:
                self._write_json(status, payload)

        def _serve_static(self, path: str) -> None:
            import os

            root = getattr(gateway.config, "dashboard_dir", "")
            if not root or not os.path.isdir(root):
                self._write_text(404, "text/plain; charset=utf-8", "no dashboard installed\n")
                return
            rel = "index.html" if path == "/" else path.lstrip("/")
            full = os.path.realpath(os.path.join(root, rel))
            if not full.startswith(os.path.realpath(root)) or not os.path.isfile(full):
                self._write_text(404, "text/plain; charset=utf-8", "not found\n")
                return
            ctype = {
                ".html": "text/html; charset=utf-8",
                ".js": "text/javascript; charset=utf-8",
                ".css": "text/css; charset=utf-8",
                ".json": "application/json",
                ".svg": "image/svg+xml",
            }.get(os.path.splitext(full)[1], "application/octet-stream")
            with open(full, "rb") as f:
                raw = f.read()
            self.send_response(200)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(raw)))
            self.end_headers()
            self.wfile.write(raw)

        def _serve_events(self) -> None:
            q = gateway.events.subscribe()
            try:
                self.send_response(200)
                self.send_header("Content-Type", "text/event-stream")
                self.send_header("Cache-Control", "no-cache")
                self.send_header("Connection", "keep-alive")
                self.end_headers()
                self.wfile.write(b": connected\n\n")
                self.wfile.flush()
                while True:
                    try:
                        event = q.get(timeout=heartbeat_s)
                    except queue.Empty:
                        self.wfile.write(b": heartbeat\n\n")
                        self.wfile.flush()
                        continue
                    frame = (
                        f"event: {event.event}\n"
                        f"data: {json.dumps(event.data)}\n\n"
                    ).encode("utf-8")
                    self.wfile.write(frame)
                    self.wfile.flush()
            except (BrokenPipeError, ConnectionResetError, OSError):
                pass
            finally:
                gateway.events.unsubscribe(q)

        def do_GET(self):
            self._serve("GET")

        def do_POST(self):
            self._serve("POST")

        def do_PUT(self):
            self._serve("PUT")

    server = ThreadingHTTPServer(listen, Handler)
    server.daemon_threads = True
    return server
