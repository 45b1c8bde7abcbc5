import base64
import json
import socket
import threading
import time
import urllib.error
import urllib.request

import pytest

from homegate.api import Api, build_http_server
from homegate.audit import Category
from homegate.clock import VirtualClock
from homegate.config import Config
from homegate.enrollment import decode_enroll_response
from homegate.gateway import init_data_dir, open_gateway
from homegate.pki import CertSigningRequest, Role
from homegate.segmentation import ZoneRole
from homegate.telemetry import Reading, encode_envelope

START = 1_700_000_000_000
TOKEN = "test-operator-token-0123456789ab"
SEED = bytes([0x11] * 32)


@pytest.fixture
def server(tmp_path):
    clock = VirtualClock(START)
    data_dir = str(tmp_path / "gw")
    init_data_dir(data_dir, seed=SEED, clock=clock,
                  config=Config(data_dir=data_dir, operator_token=TOKEN))
    gateway = open_gateway(data_dir, clock=clock)
    gateway.define_zone("sensors", "10.10.1.0/24", ZoneRole.IOT, TOKEN)
    httpd = build_http_server(gateway, ("127.0.0.1", 0), heartbeat_s=0.2)
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    base = f"http://127.0.0.1:{httpd.server_address[1]}"
    yield gateway, base
    httpd.shutdown()
    gateway.close()


def call(base, method, path, body=None, token=None):
    data = json.dumps(body).encode() if body is not None else None
    request = urllib.request.Request(base + path, data=data, method=method)
    request.add_header("Content-Type", "application/json")
    if token:
        request.add_header("Authorization", f"Bearer {token}")
    try:
        with urllib.request.urlopen(request, timeout=5) as response:
            raw = response.read()
            ctype = response.headers.get("Content-Type", "")
            payload = json.loads(raw) if "json" in ctype else raw.decode()
            return response.status, payload
    except urllib.error.HTTPError as e:
        raw = e.read()
        try:
            return e.code, json.loads(raw)
        except json.JSONDecodeError:
            return e.code, raw.decode()


def enroll_pending(gateway, name="lamp", seed=bytes([0x22] * 32)):
    csr = CertSigningRequest.create(name, Role.DEVICE, seed)
    return gateway.submit_enrollment(csr, name, f"{name}:5683"), seed


def enrolled_device(gateway, name="lamp", seed=bytes([0x22] * 32)):
    request, seed = enroll_pending(gateway, name, seed)
    outcome = gateway.approve_enrollment(request.request_id, "sensors", TOKEN)
    payload = decode_enroll_response(outcome.response_datagram)
    return outcome.device, payload.unwrap_key(seed)


def test_health(server):
    _, base = server
    status, payload = call(base, "GET", "/api/v1/health")
    assert status == 200
    assert payload == {"status": "ok"}


def test_enrollment_http_flow(server):
    gateway, base = server
    request, _ = enroll_pending(gateway)
    status, payload = call(base, "GET", "/api/v1/enrollments?state=pending")
    assert status == 200
    assert len(payload["enrollments"]) == 1
    rid = payload["enrollments"][0]["request_id"]

    status, _ = call(base, "POST", f"/api/v1/enrollments/{rid}/approve", {"zone": "sensors"})
    assert status == 401  # no token: request must stay pending
    assert gateway.registry.get_request(request.request_id).state.value == "PENDING"

    status, payload = call(base, "POST", f"/api/v1/enrollments/{rid}/approve",
                           {"zone": "sensors"}, token=TOKEN)
    assert status == 200
    assert payload["device"]["status"] == "ACTIVE"

    # second decision: 409
    status, payload = call(base, "POST", f"/api/v1/enrollments/{rid}/approve",
                           {"zone": "sensors"}, token=TOKEN)
    assert status == 409

    status, payload = call(base, "GET", "/api/v1/devices")
    assert status == 200
    assert len(payload["devices"]) == 1


def test_device_lifecycle_http(server):
    gateway, base = server
    device, _ = enrolled_device(gateway)
    did = device.device_id.hex()

    status, payload = call(base, "POST", f"/api/v1/devices/{did}/quarantine", {}, token=TOKEN)
    assert status == 200 and payload["status"] == "QUARANTINED"
    status, payload = call(base, "POST", f"/api/v1/devices/{did}/release", {}, token=TOKEN)
    assert status == 200 and payload["status"] == "ACTIVE"
    status, payload = call(base, "POST", f"/api/v1/devices/{did}/revoke",
                           {"reason": "end of life"}, token=TOKEN)
    assert status == 200 and payload["status"] == "REVOKED"
    status, payload = call(base, "GET", f"/api/v1/devices/{did}")
    assert status == 200 and payload["status"] == "REVOKED"
    status, _ = call(base, "GET", "/api/v1/devices/ffffffffffffffff")
    assert status == 404


def test_telemetry_endpoint_matches_store_oracle(server):
    gateway, base = server
    device, key = enrolled_device(gateway)
    base_ts = START
    for seq in range(1, 61):
        gateway.clock.set(base_ts + seq * 1000)
        envelope = encode_envelope(Reading("temp_c", float(seq), base_ts + seq * 1000),
                                   key, device.device_id, seq, 0)
        gateway.ingest(envelope, "t:1")
    did = device.device_id.hex()
    status, payload = call(
        base, "GET",
        f"/api/v1/telemetry/{did}?from={base_ts}&to={base_ts + 61_000}&bucket=60&agg=mean",
    )
    assert status == 200
    oracle = gateway.store.query_readings(device.device_id, base_ts, base_ts + 61_000, 60, "mean")
    assert payload["series"] == [b.to_dict() for b in oracle]

    status, payload = call(base, "GET", f"/api/v1/telemetry/{did}?agg=mean")
    assert status == 422  # aggregate without bucket


def test_zones_and_policy_endpoints(server):
    gateway, base = server
    status, payload = call(base, "PUT", "/api/v1/zones/cams",
                           {"range": "10.10.2.0/24", "role": "IOT"}, token=TOKEN)
    assert status == 200
    status, payload = call(base, "GET", "/api/v1/zones")
    names = [z["name"] for z in payload["zones"]]
    assert names == ["gateway", "operators", "sensors", "cams"]

    status, text = call(base, "GET", "/api/v1/policy/rules")
    assert status == 200
    assert isinstance(text, str)
    assert text.rstrip("\n").endswith("-j DROP")
    assert text == gateway.policy_rules().render()

    status, payload = call(base, "PUT", "/api/v1/zones/bad",
                           {"range": "10.10.2.128/25", "role": "IOT"}, token=TOKEN)
    assert status == 409  # overlap

    status, payload = call(base, "PUT", "/api/v1/zones/worse",
                           {"range": "not-a-cidr", "role": "IOT"}, token=TOKEN)
    assert status == 422


def test_alerts_and_ack(server):
    gateway, base = server
    # unknown-device traffic raises R1
    envelope = encode_envelope(Reading("t", 1.0, START), bytes(32), bytes([9] * 8), 1, 0)
    gateway.ingest(envelope, "rogue:1")
    status, payload = call(base, "GET", "/api/v1/alerts?since=0")
    assert status == 200
    assert len(payload["alerts"]) == 1
    alert_id = payload["alerts"][0]["alert_id"]

    status, _ = call(base, "POST", f"/api/v1/alerts/{alert_id}/ack", {}, token=TOKEN)
    assert status == 200
    status, payload = call(base, "GET", "/api/v1/alerts?ack=false")
    assert payload["alerts"] == []


def test_audit_verify_endpoint(server):
    gateway, base = server
    status, payload = call(base, "GET", "/api/v1/audit/verify")
    assert status == 200
    assert payload["ok"] is True
    assert payload["count"] == len(gateway.audit)


def test_export_endpoint_roundtrip(server):
    from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey
    from homegate.store import EncryptedBundle, open_bundle

    gateway, base = server
    device, key = enrolled_device(gateway)
    envelope = encode_envelope(Reading("temp_c", 7.5, START), key, device.device_id, 1, 0)
    gateway.ingest(envelope, "t:1")

    priv = bytes([5] * 32)
    pub = X25519PrivateKey.from_private_bytes(priv).public_key().public_bytes_raw()
    body = {"from": 0, "to": 2**62, "recipient_pub": base64.b64encode(pub).decode()}
    status, payload = call(base, "POST", "/api/v1/export", body, token=TOKEN)
    assert status == 200
    bundle = EncryptedBundle.decode(base64.b64decode(payload["bundle"]))
    rows = open_bundle(bundle, priv)
    assert len(rows) == 1 and rows[0].value == 7.5
    assert payload["sha256"] == bundle.bundle_hash().hex()


def test_authorization_totality_from_route_table(server):
    """Every mutating route in the table answers 401 without a token; the
    route table itself drives the enumeration, so a new route cannot dodge
    this test."""
    gateway, base = server
    api = Api(gateway)
    filler = {
        "{id}": "00" * 8,
        "{name}": "zz",
    }
    for route in api.routes:
        if not route.mutating:
            continue
        path = route.pattern
        for placeholder, value in filler.items():
            path = path.replace(placeholder, value)
        status, payload = call(base, route.method, path, {})
        assert status == 401, f"{route.method} {route.pattern} answered {status} without token"
        # and with a wrong token
        status, _ = call(base, route.method, path, {}, token="wrong-token-0123456789abcdef")
        assert status == 401, f"{route.method} {route.pattern} accepted a bad token"


def test_audit_coverage_of_http_mutations(server):
    """Replay a representative mutating-API session and diff the audit chain:
    every 2xx mutation leaves a record with the right category."""
    gateway, base = server
    request, _ = enroll_pending(gateway, "covered", bytes([0x31] * 32))
    rid = request.request_id.hex()
    start_len = len(gateway.audit)

    expectations = []  # (category, call result status)
    status, payload = call(base, "POST", f"/api/v1/enrollments/{rid}/approve",
                           {"zone": "sensors"}, token=TOKEN)
    assert status == 200
    expectations.append(Category.DECIDE)
    did = payload["device"]["device_id"]

    status, _ = call(base, "POST", f"/api/v1/devices/{did}/quarantine", {}, token=TOKEN)
    assert status == 200
    expectations.append(Category.QUARANTINE)
    status, _ = call(base, "POST", f"/api/v1/devices/{did}/release", {}, token=TOKEN)
    assert status == 200
    expectations.append(Category.RELEASE)
    status, _ = call(base, "POST", f"/api/v1/devices/{did}/revoke", {"reason": "eol"}, token=TOKEN)
    assert status == 200
    expectations.append(Category.REVOKE)
    status, _ = call(base, "PUT", "/api/v1/zones/extra",
                     {"range": "10.10.5.0/24", "role": "IOT"}, token=TOKEN)
    assert status == 200
    expectations.append(Category.ZONE)

    new_categories = [r.category for r in gateway.audit.records()[start_len:]]
    for expected in expectations:
        assert expected in new_categories, f"missing audit record for {expected}"


def test_sse_stream_delivers_alert_events(server):
    gateway, base = server
    received = {}

    def reader():
        request = urllib.request.Request(base + "/api/v1/events")
        with urllib.request.urlopen(request, timeout=5) as response:
            buffer = b""
            deadline = time.monotonic() + 5
            while time.monotonic() < deadline:
                chunk = response.read1(1024)
                if not chunk:
                    break
                buffer += chunk
                if b"event: alert" in buffer and b"\n\n" in buffer.split(b"event: alert", 1)[1]:
                    received["raw"] = buffer
                    return

    thread = threading.Thread(target=reader, daemon=True)
    thread.start()
    time.sleep(0.3)  # let the subscriber attach
    envelope = encode_envelope(Reading("t", 1.0, START), bytes(32), bytes([9] * 8), 1, 0)
    gateway.ingest(envelope, "rogue:1")
    thread.join(timeout=6)
    assert "raw" in received, "alert event never arrived on the stream"
    raw = received["raw"].decode()
    frame = [f for f in raw.split("\n\n") if f.startswith("event: alert")][0]
    data_line = [l for l in frame.splitlines() if l.startswith("data: ")][0]
    alert = json.loads(data_line[len("data: "):])
    assert alert["rule"] == "R1_UNKNOWN"


def test_sse_heartbeat(server):
    _, base = server
    request = urllib.request.Request(base + "/api/v1/events")
    with urllib.request.urlopen(request, timeout=5) as response:
        buffer = b""
        deadline = time.monotonic() + 3
        while time.monotonic() < deadline and b": heartbeat" not in buffer:
            buffer += response.read1(256)
    assert b": heartbeat" in buffer


def test_unknown_route_and_bad_json(server):
    _, base = server
    status, _ = call(base, "GET", "/api/v1/nope")
    assert status == 404
    request = urllib.request.Request(
        f"{base}/api/v1/export", data=b"not json", method="POST",
        headers={"Authorization": f"Bearer {TOKEN}", "Content-Type": "application/json",
                 "Content-Length": "8"},
    )
    try:
        with urllib.request.urlopen(request, timeout=5) as response:
            status = response.status
    except urllib.error.HTTPError as e:
        status = e.code
    assert status == 422


def test_run_gateway_liveness_and_udp(tmp_path):
    """Full service smoke: real UDP datagram end to end, health within 2 s."""
    from homegate.gateway import run_gateway
    from homegate.errors import PortInUse

    data_dir = str(tmp_path / "live")
    cfg = Config(data_dir=data_dir, operator_token=TOKEN,
                 udp_listen=("127.0.0.1", 0), http_listen=("127.0.0.1", 0))
    init_data_dir(data_dir, config=cfg)
    cfg.dashboard_dir = ""
    handle = run_gateway(cfg)
    try:
        udp_port = handle.udp_socket.getsockname()[1]
        http_port = handle.http_server.server_address[1]
        base = f"http://127.0.0.1:{http_port}"

        deadline = time.monotonic() + 2
        status = None
        while time.monotonic() < deadline:
            try:
                status, payload = call(base, "GET", "/api/v1/health")
                break
            except Exception:
                time.sleep(0.05)
        assert status == 200 and payload == {"status": "ok"}

        call(base, "PUT", "/api/v1/zones/sensors",
             {"range": "10.10.1.0/24", "role": "IOT"}, token=TOKEN)

        # enroll over real UDP
        seed = bytes([0x51] * 32)
        csr = CertSigningRequest.create("real-lamp", Role.DEVICE, seed)
        from homegate.enrollment import encode_enroll_request

        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        sock.bind(("127.0.0.1", 0))
        sock.settimeout(5)
        sock.sendto(encode_enroll_request(csr, "real-lamp"), ("127.0.0.1", udp_port))
        deadline = time.monotonic() + 2
        rid = None
        while time.monotonic() < deadline and rid is None:
            _, payload = call(base, "GET", "/api/v1/enrollments?state=pending")
            if payload["enrollments"]:
                rid = payload["enrollments"][0]["request_id"]
            else:
                time.sleep(0.05)
        assert rid is not None
        status, payload = call(base, "POST", f"/api/v1/enrollments/{rid}/approve",
                               {"zone": "sensors"}, token=TOKEN)
        assert status == 200
        response, _ = sock.recvfrom(65535)
        approval = decode_enroll_response(response)
        key = approval.unwrap_key(seed)

        envelope = encode_envelope(Reading("temp_c", 21.5, 1), key, approval.device_id, 1, 0)
        sock.sendto(envelope, ("127.0.0.1", udp_port))
        deadline = time.monotonic() + 2
        stored = 0
        while time.monotonic() < deadline and stored == 0:
            stored = len(handle.gateway.store)
            time.sleep(0.05)
        assert stored == 1
        sock.close()

        # a second service on the same ports must fail
        cfg2 = Config(data_dir=data_dir, operator_token=TOKEN,
                      udp_listen=("127.0.0.1", udp_port), http_listen=("127.0.0.1", 0))
        with pytest.raises(PortInUse):
            run_gateway(cfg2)
    finally:
        handle.stop()
