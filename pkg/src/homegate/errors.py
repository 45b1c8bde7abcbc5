"""Exception hierarchy shared across homegate modules."""

from __future__ import annotations


class HomegateError(Exception):
    """Base class for all homegate errors. `code` is the stable machine name."""

    code = "error"

    def __init__(self, message: str = ""):
        super().__init__(message or self.__doc__ or self.code)


# --- identity / vault ----------------------------------------------------

class InvalidProof(HomegateError):
    """CSR possession proof does not verify under its public key."""

    code = "invalid_proof"


class RoleForbidden(HomegateError):
    """Requested certificate role is not allowed."""

    code = "role_forbidden"


class UnknownHandle(HomegateError):
    """Vault handle does not exist."""

    code = "unknown_handle"


class VaultStorageError(HomegateError):
    """Vault state could not be persisted."""

    code = "vault_storage"


# --- enrollment ----------------------------------------------------------

class DuplicatePending(HomegateError):
    """A PENDING enrollment already exists for this public key."""

    code = "duplicate_pending"


class RegistryFull(HomegateError):
    """Too many pending enrollment requests."""

    code = "registry_full"


class UnknownRequest(HomegateError):
    """No enrollment request with this id."""

    code = "unknown_request"


class NotPending(HomegateError):
    """Enrollment request is already decided or expired."""

    code = "not_pending"


class UnknownDevice(HomegateError):
    """No device with this id."""

    code = "unknown_device"


class UnknownZone(HomegateError):
    """No zone with this name."""

    code = "unknown_zone"


class Unauthorized(HomegateError):
    """Operator token missing or wrong."""

    code = "unauthorized"


# --- telemetry -----------------------------------------------------------

class PayloadTooLarge(HomegateError):
    """Envelope plaintext exceeds the protocol maximum."""

    code = "payload_too_large"


# --- segmentation --------------------------------------------------------

class DuplicateName(HomegateError):
    """Zone name already defined."""

    code = "duplicate_name"


class OverlappingRange(HomegateError):
    """Zone address range overlaps an existing zone."""

    code = "overlapping_range"


class ZoneExhausted(HomegateError):
    """No free host address left in the zone."""

    code = "zone_exhausted"


# --- ids -----------------------------------------------------------------

class AlreadyQuarantined(HomegateError):
    """Device is already quarantined."""

    code = "already_quarantined"


class NotQuarantined(HomegateError):
    """Device is not quarantined."""

    code = "not_quarantined"


# --- store / audit -------------------------------------------------------

class StorageFailure(HomegateError):
    """Append to durable storage failed; the triggering operation must fail."""

    code = "storage_failure"


class BadRange(HomegateError):
    """Query range is invalid (from > to)."""

    code = "bad_range"


# --- gateway core --------------------------------------------------------

class ConfigError(HomegateError):
    """Configuration file is invalid."""

    code = "config_error"


class UninitializedDataDir(HomegateError):
    """Data directory has not been initialized (no root identity)."""

    code = "uninitialized_data_dir"


class PortInUse(HomegateError):
    """Listen address is already bound."""

    code = "port_in_use"
