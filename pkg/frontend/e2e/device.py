"""A real-UDP virtual device for dashboard end-to-end tests.

Enrolls against a live gateway, prints its identity as JSON once approved,
then optionally sends readings (`--send`) or floods (`--flood`).
"""

import argparse
import json
import os
import socket
import sys
import time

from homegate.enrollment import ApprovalPayload, decode_enroll_response, encode_enroll_request
from homegate.pki import CertSigningRequest, Role
from homegate.telemetry import Reading, encode_envelope


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--udp-port", type=int, required=True)
    parser.add_argument("--name", default="e2e-device")
    parser.add_argument("--send", type=int, default=0, help="readings at 1/s after approval")
    parser.add_argument("--flood", type=int, default=0, help="seconds of 25/s flood after approval")
    args = parser.parse_args()

    seed = os.urandom(32)
    csr = CertSigningRequest.create(args.name, Role.DEVICE, seed)
    request = encode_enroll_request(csr, args.name)
    gateway = ("127.0.0.1", args.udp_port)

    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    sock.bind(("127.0.0.1", 0))
    sock.settimeout(2.0)

    payload = None
    for _ in range(10):  # retry the request until the operator approves
        sock.sendto(request, gateway)
        try:
            data, _ = sock.recvfrom(65535)
        except socket.timeout:
            continue
        decoded = decode_enroll_response(data)
        if isinstance(decoded, ApprovalPayload):
            payload = decoded
            break
        sys.stdout.write(json.dumps({"denied": decoded}) + "\n")
        return 1
    if payload is None:
        sys.stdout.write(json.dumps({"error": "enrollment timeout"}) + "\n")
        return 1

    key = payload.unwrap_key(seed)
    sys.stdout.write(
        json.dumps({"device_id": payload.device_id.hex(), "address": str(payload.address)}) + "\n"
    )
    sys.stdout.flush()

    seq = 0

    def emit(value: float) -> None:
        nonlocal seq
        seq += 1
        now_ms = int(time.time() * 1000)
        envelope = encode_envelope(
            Reading("temp_c", value, now_ms), key, payload.device_id, seq, payload.epoch
        )
        sock.sendto(envelope, gateway)

    for i in range(args.send):
        emit(20.0 + i * 0.1)
        time.sleep(1.0)

    if args.flood:
        deadline = time.time() + args.flood
        while time.time() < deadline:
            emit(99.0)
            time.sleep(0.04)  # 25/s, over the 10/s limit

    sys.stdout.write(json.dumps({"done": True, "sent": seq}) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
