import hashlib
import os

import pytest

from homegate.audit import (
    AUDIT_HEAD_FILE,
    AUDIT_LOG_FILE,
    AuditChain,
    Category,
    ChainedAuditRecord,
    GENESIS_PREV,
    record_hash,
    verify_directory,
    verify_records,
)
from homegate.errors import StorageFailure


def build_chain(directory=None, n=10, start_ms=1000) -> AuditChain:
    chain = AuditChain(directory)
    categories = list(Category)
    for i in range(n):
        chain.append(categories[i % len(categories)], f"event {i}".encode(), start_ms + i)
    return chain


def test_genesis_record():
    chain = build_chain(n=1)
    rec = chain.records()[0]
    assert rec.index == 0
    assert rec.prev_hash == GENESIS_PREV


def test_chain_links():
    chain = build_chain(n=2)
    first, second = chain.records()
    assert second.prev_hash == first.record_hash


def test_record_hash_matches_independent_recomputation():
    """The hash input layout is prev || index || at || category || body;
    recomputed here with hashlib directly from the raw pieces."""
    prev = bytes(range(32))
    body = b"fixed body"
    got = record_hash(prev, 42, 1_700_000_000_123, Category.EXPORT, body)
    expected = hashlib.sha256(
        prev
        + (42).to_bytes(8, "big")
        + (1_700_000_000_123).to_bytes(8, "big")
        + bytes([Category.EXPORT.value])
        + body
    ).digest()
    assert got == expected


def test_verify_ok_untouched():
    chain = build_chain(n=100)
    result = chain.verify()
    assert result.ok and result.count == 100


def test_record_encode_roundtrip():
    chain = build_chain(n=3)
    for rec in chain.records():
        assert ChainedAuditRecord.decode(rec.encode()) == rec


def _mutate_field(rec: ChainedAuditRecord, field_name: str, value) -> ChainedAuditRecord:
    kwargs = {
        "index": rec.index,
        "at": rec.at,
        "category": rec.category,
        "body": rec.body,
        "prev_hash": rec.prev_hash,
        "record_hash": rec.record_hash,
    }
    kwargs[field_name] = value
    return ChainedAuditRecord(**kwargs)


def test_mutation_sweep_reports_exact_index():
    """Mutate every byte of every record (via each field) and check Broken(i)
    lands exactly on the mutated record."""
    chain = build_chain(n=30)
    records = chain.records()
    head = chain.head()
    for i, rec in enumerate(records):
        mutants = [
            _mutate_field(rec, "index", rec.index + 1),
            _mutate_field(rec, "at", rec.at ^ 1),
            _mutate_field(rec, "category", Category((rec.category.value + 1) % len(Category))),
        ]
        for pos in range(len(rec.body)):
            body = bytearray(rec.body)
            body[pos] ^= 0x01
            mutants.append(_mutate_field(rec, "body", bytes(body)))
        for pos in range(32):
            prev = bytearray(rec.prev_hash)
            prev[pos] ^= 0x01
            mutants.append(_mutate_field(rec, "prev_hash", bytes(prev)))
            rh = bytearray(rec.record_hash)
            rh[pos] ^= 0x01
            mutants.append(_mutate_field(rec, "record_hash", bytes(rh)))
        for mutant in mutants:
            tampered = records[:i] + [mutant] + records[i + 1 :]
            result = verify_records(tampered, head)
            assert not result.ok
            assert result.broken_index == i, f"record {i} mutation reported {result.broken_index}"


def test_truncation_detected_via_head():
    chain = build_chain(n=10)
    records = chain.records()
    head = chain.head()
    truncated = records[:-1]
    result = verify_records(truncated, head)
    assert not result.ok
    assert result.broken_index == len(truncated)
    # without the head defense the prefix alone would verify
    assert verify_records(truncated, truncated[-1].record_hash).ok


def test_file_persistence_and_offline_verify(tmp_path):
    directory = str(tmp_path)
    chain = build_chain(directory, n=25)
    chain.close()
    result = verify_directory(directory)
    assert result.ok and result.count == 25

    reopened = AuditChain(directory)
    assert len(reopened) == 25
    reopened.append(Category.CONFIG, b"after reopen", 99_999)
    reopened.close()
    assert verify_directory(directory).ok


def test_file_tamper_detected(tmp_path):
    directory = str(tmp_path)
    chain = build_chain(directory, n=10)
    chain.close()
    log_path = os.path.join(directory, AUDIT_LOG_FILE)
    raw = bytearray(open(log_path, "rb").read())
    # find a body byte of some middle record and flip it
    raw[len(raw) // 2] ^= 0x01
    with open(log_path, "wb") as f:
        f.write(bytes(raw))
    result = verify_directory(directory)
    assert not result.ok


def test_file_truncation_detected(tmp_path):
    directory = str(tmp_path)
    chain = build_chain(directory, n=10)
    last_len = len(chain.records()[-1].encode()) + 4
    chain.close()
    log_path = os.path.join(directory, AUDIT_LOG_FILE)
    size = os.path.getsize(log_path)
    with open(log_path, "r+b") as f:
        f.truncate(size - last_len)  # cleanly delete the last record
    result = verify_directory(directory)
    assert not result.ok
    assert result.broken_index == 9


def test_crash_between_append_and_head_is_repaired(tmp_path):
    directory = str(tmp_path)
    chain = build_chain(directory, n=5)
    records = chain.records()
    chain.close()
    # simulate the crash: head still points at record 3 while record 4 is on disk
    with open(os.path.join(directory, AUDIT_HEAD_FILE), "wb") as f:
        f.write(records[-2].record_hash)
    assert not verify_directory(directory).ok  # offline verify reports it
    reopened = AuditChain(directory)  # ...but open() rolls the head forward
    reopened.close()
    assert verify_directory(directory).ok


def test_torn_tail_is_recovered_on_open(tmp_path):
    directory = str(tmp_path)
    chain = build_chain(directory, n=5)
    chain.close()
    log_path = os.path.join(directory, AUDIT_LOG_FILE)
    with open(log_path, "ab") as f:
        f.write(b"\x00\x00\x01\x00partial")  # length promises more than exists
    reopened = AuditChain(directory)
    assert len(reopened) == 5
    reopened.append(Category.CONFIG, b"continues", 1)
    reopened.close()
    assert verify_directory(directory).ok


def test_append_failure_leaves_state_unchanged(tmp_path, monkeypatch):
    chain = build_chain(str(tmp_path), n=3)
    before = chain.records()

    def boom(_fd):
        raise OSError("disk full")

    monkeypatch.setattr(os, "fsync", boom)
    with pytest.raises(StorageFailure):
        chain.append(Category.ENROLL, b"doomed", 123)
    monkeypatch.undo()
    assert chain.records() == before
    assert chain.verify().ok


def test_empty_directory_verifies(tmp_path):
    assert verify_directory(str(tmp_path)).ok
    chain = AuditChain(str(tmp_path))
    chain.close()
    assert verify_directory(str(tmp_path)).ok
