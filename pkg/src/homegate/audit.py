"""Tamper-evident hash-chained audit log.

Every security-relevant gateway action appends one record; each record's
hash covers its predecessor's hash, so any later edit breaks the chain from
that point on. Plain chains cannot detect truncation, so the newest record
hash (the "head") is additionally persisted in a separate single-slot file
updated atomically; verification compares the log tail against it.

On-disk layout: `audit.hgl` holds `u32 length || canonical record` entries,
`audit.head` holds exactly 32 bytes. Appends are fsynced before the
triggering operation may report success.
"""

from __future__ import annotations

import enum
import hashlib
import os
from dataclasses import dataclass

from .encoding import Reader, bytes_u16, u8, u32, u64, DecodeError
from .errors import StorageFailure

AUDIT_LOG_FILE = "audit.hgl"
AUDIT_HEAD_FILE = "audit.head"
GENESIS_PREV = b"\x00" * 32


class Category(enum.Enum):
    ENROLL = 0
    DECIDE = 1
    REVOKE = 2
    QUARANTINE = 3
    RELEASE = 4
    ZONE = 5
    POLICY = 6
    EXPORT = 7
    CONFIG = 8
    ALERT_ACK = 9


@dataclass(frozen=True)
class ChainedAuditRecord:
    index: int
    at: int  # unix-ms
    category: Category
    body: bytes
    prev_hash: bytes
    record_hash: bytes

    def compute_hash(self) -> bytes:
        return record_hash(self.prev_hash, self.index, self.at, self.category, self.body)

    def encode(self) -> bytes:
        return (
            u64(self.index)
            + u64(self.at)
            + u8(self.category.value)
            + bytes_u16(self.body)
            + self.prev_hash
            + self.record_hash
        )

    @classmethod
    def decode(cls, data: bytes) -> "ChainedAuditRecord":
        r = Reader(data)
        index = r.u64()
        at = r.u64()
        category = Category(r.u8())
        body = r.bytes_u16()
        prev_hash = r.take(32)
        rec_hash = r.take(32)
        r.expect_end()
        return cls(index, at, category, body, prev_hash, rec_hash)

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "at": self.at,
            "category": self.category.name,
            "body": self.body.decode("utf-8", errors="replace"),
            "prev_hash": self.prev_hash.hex(),
            "record_hash": self.record_hash.hex(),
        }


def record_hash(prev_hash: bytes, index: int, at: int, category: Category, body: bytes) -> bytes:
    return hashlib.sha256(prev_hash + u64(index) + u64(at) + u8(category.value) + body).digest()


@dataclass(frozen=True)
class VerifyResult:
    ok: bool
    count: int
    broken_index: int | None = None

    @classmethod
    def good(cls, count: int) -> "VerifyResult":
        return cls(True, count, None)

    @classmethod
    def broken(cls, index: int, count: int) -> "VerifyResult":
        return cls(False, count, index)


def verify_records(records: list[ChainedAuditRecord], head: bytes | None) -> VerifyResult:
    """Recompute every hash and chain link; compare the tail to the persisted
    head. Truncation (or a missing head over a non-empty log) reports
    Broken at the log length."""
    prev = GENESIS_PREV
    for i, record in enumerate(records):
        if record.index != i or record.prev_hash != prev or record.compute_hash() != record.record_hash:
            return VerifyResult.broken(i, len(records))
        prev = record.record_hash
    if records:
        if head is None or head != records[-1].record_hash:
            return VerifyResult.broken(len(records), len(records))
    elif head is not None and head != GENESIS_PREV:
        return VerifyResult.broken(0, 0)
    return VerifyResult.good(len(records))


class AuditChain:
    """Single-writer append-only chain with file persistence.

    A crash between the record append and the head update is repaired on
    open by rolling the head forward over the one valid, linked record it
    is missing; anything else is left for verify to report.
    """

    def __init__(self, directory: str | None = None):
        self._dir = directory
        self._records: list[ChainedAuditRecord] = []
        self._log_fh = None
        if directory is not None:
            self._log_path = os.path.join(directory, AUDIT_LOG_FILE)
            self._head_path = os.path.join(directory, AUDIT_HEAD_FILE)
            self._recover_and_open()

    # -- persistence ----------------------------------------------------------

    def _read_log_records(self) -> tuple[list[ChainedAuditRecord], int]:
        """Parse the log file. Returns (records, clean_length_in_bytes); a
        structurally incomplete tail (torn write) is excluded from both."""
        records: list[ChainedAuditRecord] = []
        clean_len = 0
        if not os.path.exists(self._log_path):
            return records, clean_len
        with open(self._log_path, "rb") as f:
            data = f.read()
        pos = 0
        while pos + 4 <= len(data):
            rec_len = int.from_bytes(data[pos : pos + 4], "big")
            if pos + 4 + rec_len > len(data):
                break  # torn tail
            try:
                record = ChainedAuditRecord.decode(data[pos + 4 : pos + 4 + rec_len])
            except (DecodeError, ValueError):
                # Structurally unparseable record: keep raw position; verify
                # will report it. Represent as a poisoned record.
                record = None
            if record is None:
                # can't continue parsing reliably past garbage
                records.append(
                    ChainedAuditRecord(-1, 0, Category.CONFIG, b"", GENESIS_PREV, GENESIS_PREV)
                )
                clean_len = pos + 4 + rec_len
                pos = clean_len
                continue
            records.append(record)
            clean_len = pos + 4 + rec_len
            pos = clean_len
        return records, clean_len

    def _read_head(self) -> bytes | None:
        if not os.path.exists(self._head_path):
            return None
        with open(self._head_path, "rb") as f:
            head = f.read()
        return head if len(head) == 32 else None

    def _write_head(self, head: bytes) -> None:
        tmp = self._head_path + ".tmp"
        with open(tmp, "wb") as f:
            f.write(head)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, self._head_path)

    def _recover_and_open(self) -> None:
        records, clean_len = self._read_log_records()
        # drop a torn tail from the file itself
        if os.path.exists(self._log_path) and clean_len < os.path.getsize(self._log_path):
            with open(self._log_path, "r+b") as f:
                f.truncate(clean_len)
        head = self._read_head()
        if records:
            last = records[-1]
            if head != last.record_hash:
                # roll forward iff exactly the newest record is missing from
                # the head and that record is valid and linked
                expected_prev = records[-2].record_hash if len(records) >= 2 else GENESIS_PREV
                crash_gap = (
                    (head == expected_prev or (head is None and len(records) == 1))
                    and last.prev_hash == expected_prev
                    and last.compute_hash() == last.record_hash
                    and last.index == len(records) - 1
                )
                if crash_gap:
                    self._write_head(last.record_hash)
        elif head is None:
            self._write_head(GENESIS_PREV)
        self._records = records
        self._log_fh = open(self._log_path, "ab")

    def close(self) -> None:
        if self._log_fh is not None:
            self._log_fh.close()
            self._log_fh = None

    # -- operations -------------------------------------------------------------

    def __len__(self) -> int:
        return len(self._records)

    def records(self) -> list[ChainedAuditRecord]:
        return list(self._records)

    def head(self) -> bytes:
        return self._records[-1].record_hash if self._records else GENESIS_PREV

    def append(self, category: Category, body: bytes | str, now_ms: int) -> ChainedAuditRecord:
        """Append one record; durable (record fsynced, head updated) before
        returning. Raises StorageFailure without mutating in-memory state."""
        if isinstance(body, str):
            body = body.encode("utf-8")
        index = len(self._records)
        prev = self.head()
        rec = ChainedAuditRecord(
            index, now_ms, category, body, prev, record_hash(prev, index, now_ms, category, body)
        )
        if self._log_fh is not None:
            offset = self._log_fh.tell()
            try:
                encoded = rec.encode()
                self._log_fh.write(u32(len(encoded)) + encoded)
                self._log_fh.flush()
                os.fsync(self._log_fh.fileno())
                self._write_head(rec.record_hash)
            except OSError as e:
                try:  # undo the partial write; open()-time recovery covers the rest
                    self._log_fh.truncate(offset)
                except OSError:
                    pass
                raise StorageFailure(f"audit append failed: {e}") from e
        self._records.append(rec)
        return rec

    def verify(self) -> VerifyResult:
        if self._dir is not None:
            # verify what is actually on disk, not the in-memory mirror
            records, _ = self._read_log_records()
            return verify_records(records, self._read_head())
        return verify_records(self._records, self.head() if self._records else None)


def verify_directory(directory: str) -> VerifyResult:
    """Offline `audit verify`: no recovery, no mutation — reads and reports."""
    log_path = os.path.join(directory, AUDIT_LOG_FILE)
    head_path = os.path.join(directory, AUDIT_HEAD_FILE)
    records: list[ChainedAuditRecord] = []
    if os.path.exists(log_path):
        with open(log_path, "rb") as f:
            data = f.read()
        pos = 0
        while pos + 4 <= len(data):
            rec_len = int.from_bytes(data[pos : pos + 4], "big")
            if pos + 4 + rec_len > len(data):
                return VerifyResult.broken(len(records), len(records))
            try:
                records.append(ChainedAuditRecord.decode(data[pos + 4 : pos + 4 + rec_len]))
            except (DecodeError, ValueError):
                return VerifyResult.broken(len(records), len(records))
            pos += 4 + rec_len
    head: bytes | None = None
    if os.path.exists(head_path):
        with open(head_path, "rb") as f:
            raw = f.read()
        head = raw if len(raw) == 32 else None
    return verify_records(records, head)
