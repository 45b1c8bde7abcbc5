"""Spawn a throwaway live gateway for dashboard end-to-end tests.

Prints one JSON line with the bound ports and operator token, then serves
until stdin closes.
"""

import json
import sys
import tempfile

from homegate.config import Config
from homegate.gateway import init_data_dir, run_gateway
from homegate.segmentation import ZoneRole

TOKEN = "e2e-operator-token-0123456789abcd"


def main() -> int:
    with tempfile.TemporaryDirectory(prefix="homegate-e2e-") as data_dir:
        cfg = Config(
            data_dir=data_dir,
            operator_token=TOKEN,
            udp_listen=("127.0.0.1", 0),
            http_listen=("127.0.0.1", 0),
        )
        init_data_dir(data_dir, config=cfg)
        handle = run_gateway(cfg)
        try:
            handle.gateway.define_zone("sensors", "10.10.1.0/24", ZoneRole.IOT, TOKEN)
            info = {
                "http_port": handle.http_server.server_address[1],
                "udp_port": handle.udp_socket.getsockname()[1],
                "token": TOKEN,
                "data_dir": data_dir,
            }
            sys.stdout.write(json.dumps(info) + "\n")
            sys.stdout.flush()
            sys.stdin.read()  # parent closes stdin to stop us
        finally:
            handle.stop()
    return 0


if __name__ == "__main__":
    sys.exit(main())
