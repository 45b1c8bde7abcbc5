"""homegate: a self-hosted IoT gateway that keeps smart-home data local.

Devices on-board through a private certificate hierarchy with human
approval, send authenticated-encrypted UDP telemetry (directly or through a
keyless repeater), live inside segmented virtual subnets compiled to a
default-deny ruleset, get quarantined when they misbehave, and leave only
ciphertext toward untrusted clouds. A deterministic simulated fleet makes
all of it testable without hardware.
"""

__version__ = "0.1.0"
