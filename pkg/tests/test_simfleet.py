import random
import time

import pytest

from homegate.errors import HomegateError
from homegate.segmentation import Action, Proto
from homegate.simfleet import (
    FleetSpec,
    LinkModel,
    Simulation,
    run_scenario,
    spawn_fleet,
    virtual_link_deliver,
)
from homegate.telemetry import IngestOutcome, Reading, encode_envelope


def small_spec(seed=7, direct=2, via=0, duration=5, **kw):
    return FleetSpec(n_direct=direct, n_via_repeater=via, duration_s=duration, seed=seed, **kw)


# --- virtual link ---------------------------------------------------------------


def test_link_lossless_single_delivery():
    link = LinkModel(loss_prob=0.0, dup_prob=0.0, max_delay_ms=30)
    rng = random.Random(1)
    for _ in range(100):
        deliveries = virtual_link_deliver(b"x", link, rng)
        assert len(deliveries) == 1
        assert 0 <= deliveries[0][1] <= 30


def test_link_total_loss():
    link = LinkModel(loss_prob=1.0)
    rng = random.Random(1)
    for _ in range(100):
        assert virtual_link_deliver(b"x", link, rng) == []


def test_link_duplicate_fraction_statistics():
    link = LinkModel(dup_prob=0.1)
    rng = random.Random(99)
    dups = 0
    trials = 10_000
    for _ in range(trials):
        if len(virtual_link_deliver(b"x", link, rng)) == 2:
            dups += 1
    assert abs(dups / trials - 0.1) < 0.02


def test_link_model_validation():
    with pytest.raises(ValueError):
        LinkModel(loss_prob=1.5)
    with pytest.raises(ValueError):
        FleetSpec(n_direct=-1, n_via_repeater=0, duration_s=1, seed=0)


# --- fleet ----------------------------------------------------------------------


def test_determinism_byte_identical_reports(tmp_path):
    spec = small_spec(seed=7, direct=2, via=0, duration=5)
    r1 = run_scenario("baseline", spec, data_dir=str(tmp_path / "a"))
    r2 = run_scenario("baseline", spec, data_dir=str(tmp_path / "b"))
    assert r1.canonical_json() == r2.canonical_json()


def test_empty_fleet_all_zero(tmp_path):
    report = run_scenario("baseline", small_spec(direct=0, via=0), data_dir=str(tmp_path / "z"))
    assert report.sent == 0
    assert report.delivered == 0
    assert report.stored == 0
    assert report.devices == {}


def test_lossless_run_exact_accounting(tmp_path):
    spec = FleetSpec(n_direct=5, n_via_repeater=5, duration_s=20, seed=3)
    report = run_scenario("baseline", spec, data_dir=str(tmp_path / "l"))
    assert report.stored == report.sent
    assert report.delivered == report.stored + report.total_rejected()
    assert report.enrollments_approved == 11  # 10 devices + the repeater
    assert all(status == "ACTIVE" for status in report.devices.values())


def test_conservation_under_loss(tmp_path):
    spec = FleetSpec(
        n_direct=5, n_via_repeater=5, duration_s=20, seed=3,
        direct_link=LinkModel(loss_prob=0.2),
        repeater_link=LinkModel(loss_prob=0.2),
    )
    report = run_scenario("baseline", spec, data_dir=str(tmp_path / "lossy"))
    assert report.delivered == report.stored + report.total_rejected()
    assert report.stored < report.sent


def test_replay_attack_exact_counts(tmp_path):
    spec = FleetSpec(n_direct=5, n_via_repeater=0, duration_s=30, seed=11)
    baseline = run_scenario("baseline", spec, data_dir=str(tmp_path / "b"))
    attacked = run_scenario("replay_attack", spec, {"n": 50}, data_dir=str(tmp_path / "r"))
    assert attacked.rejected.get("RejectedReplay") == 50
    assert attacked.stored == baseline.stored  # legit traffic untouched
    assert attacked.alerts.get("R2_REPLAY", 0) >= 1
    assert attacked.sent == baseline.sent + 50


def test_rogue_device_scenario(tmp_path):
    spec = small_spec(seed=5, direct=2, duration=30)
    report = run_scenario("rogue_device", spec, {"n": 20}, data_dir=str(tmp_path / "g"))
    assert report.rejected.get("RejectedUnknown") == 20
    assert report.alerts.get("R1_UNKNOWN", 0) >= 1


def test_flood_scenario_quarantines_exactly_once(tmp_path):
    spec = FleetSpec(n_direct=3, n_via_repeater=0, duration_s=40, seed=2)
    report, sim = run_scenario("flood", spec, data_dir=str(tmp_path / "f"), keep=True)
    try:
        assert report.alerts.get("R4_FLOOD") == 1
        assert report.devices["d000"] == "QUARANTINED"
        assert report.rejected.get("RejectedQuarantined", 0) > 0
        # post-run: ingest still rejects and the compiled policy denies
        device = sim.devices[0]
        record = sim.gateway.registry.lookup_device(device.device_id)
        envelope = encode_envelope(
            Reading("temp_c", 1.0, sim.clock.now_ms()),
            device.key, device.device_id, device.seq + 1, device.epoch,
        )
        assert sim.gateway.ingest(envelope, device.source) is IngestOutcome.REJECTED_QUARANTINED
        assert sim.gateway.reachable(record.address, "10.10.0.1", 5683, Proto.UDP) is Action.DENY
    finally:
        sim.cleanup()


def test_dup_repeater_exactly_once(tmp_path):
    spec = FleetSpec(n_direct=0, n_via_repeater=10, duration_s=30, seed=13)
    report = run_scenario("dup_repeater", spec, {"dup_prob": 0.1}, data_dir=str(tmp_path / "d"))
    assert report.stored == report.sent  # every distinct send stored exactly once
    assert report.delivered == report.stored + report.total_rejected()
    assert report.repeater["dropped_dup"] > 0


def test_stale_key_scenario(tmp_path):
    spec = small_spec(seed=17, direct=2, duration=45)
    report = run_scenario("stale_key", spec, data_dir=str(tmp_path / "s"))
    assert report.rejected.get("RejectedQuarantined", 0) > 0  # while isolated
    assert report.rejected.get("RejectedAuth", 0) > 0  # stale key after release
    assert report.devices["d000"] == "ACTIVE"  # released
    assert report.devices["d001"] == "ACTIVE"  # bystander unaffected


def test_unknown_scenario_rejected(tmp_path):
    with pytest.raises(HomegateError):
        Simulation(small_spec(), "made_up", data_dir=str(tmp_path / "u"))


def test_spawn_fleet_handle(tmp_path):
    sim = spawn_fleet(small_spec(seed=1, direct=1), data_dir=str(tmp_path / "h"))
    try:
        report = sim.run()
        assert report.stored > 0
        assert sim.gateway.registry.devices()
    finally:
        sim.cleanup()


def test_virtual_time_fast_wall_time(tmp_path):
    """60 virtual seconds with 50 devices in well under 5 s of wall time."""
    spec = FleetSpec(n_direct=25, n_via_repeater=25, duration_s=60, seed=1)
    start = time.monotonic()
    report = run_scenario("baseline", spec, data_dir=str(tmp_path / "t"))
    wall = time.monotonic() - start
    assert wall < 5.0
    assert report.virtual_ms >= 60_000
    assert report.stored == report.sent
