import math

import pytest

from skyrise_lab.errors import QuotaExceeded, ValidationError
from skyrise_lab.faassim import (
    ColdStartModel,
    ConcurrencyScaler,
    FaasPlatform,
    FunctionSpec,
    PlatformConfig,
    VmPool,
    billing_meter,
    load_platform_calibration,
    provision_pool,
    run_task,
)
from skyrise_lab.units import MINUTE, US_PER_S, to_s, to_us


def test_vcpus_from_memory():
    assert FunctionSpec("w", memory_mib=7076).vcpus == pytest.approx(4.0)


def test_memory_limits():
    with pytest.raises(ValidationError):
        FunctionSpec("w", memory_mib=64)
    with pytest.raises(ValidationError):
        FunctionSpec("w", memory_mib=20_000)


def test_cold_latency_grows_with_binary():
    small = FunctionSpec("a", binary_mib=10)
    large = FunctionSpec("b", binary_mib=100)
    assert large.cold_latency > small.cold_latency > PlatformConfig().warm_start


def test_scaler_step_function():
    scaler = ConcurrencyScaler()
    scaler.admits(0, 0)
    assert scaler.ceiling(0) == 3000
    assert scaler.ceiling(to_us(59.9)) == 3000
    assert scaler.ceiling(to_us(60)) == 3500
    assert scaler.ceiling(to_us(60 * 60)) == 10_000


def test_burst_then_minute_admission(sim):
    platform = FaasPlatform(sim)
    fn = FunctionSpec("f")
    for _ in range(3500):
        sim.process(platform.run_invocation(fn, body_seconds=120, mode="async"))
    sim.run_until(to_us(30))
    assert platform.in_flight == 3000
    sim.run_until(to_us(61))
    assert platform.in_flight == 3500
    admitted = sorted(r.admitted_at for r in platform.records)
    assert admitted[2999] == 0
    assert admitted[3000] == to_us(60)


def test_sync_rejected_over_ceiling(sim):
    platform = FaasPlatform(sim, PlatformConfig(burst_limit=1, account_quota=1))
    fn = FunctionSpec("f")
    sim.process(platform.run_invocation(fn, body_seconds=1))
    sim.run_until(to_us(0.001))
    with pytest.raises(QuotaExceeded):
        sim.run_process(platform.invoke(fn))


def test_admission_change_fires_on_release(sim):
    platform = FaasPlatform(sim, PlatformConfig(burst_limit=1, account_quota=1))
    fn = FunctionSpec("f")
    sim.process(platform.run_invocation(fn, body_seconds=2))
    sim.run_until(to_us(0.001))
    with pytest.raises(QuotaExceeded):
        sim.run_process(platform.invoke(fn))
    changed = platform.admission_changed()
    sim.run_until(to_us(5))
    assert changed.triggered
    assert changed.value == platform.records[0].finished_at
    record = sim.run_process(platform.invoke(fn))
    assert not record.cold


def test_admission_change_fires_at_ceiling_step(sim):
    platform = FaasPlatform(sim, PlatformConfig(burst_limit=1, scale_rate_per_min=1, account_quota=2))
    fn = FunctionSpec("f")
    sim.process(platform.run_invocation(fn, body_seconds=300))
    sim.run_until(to_us(1))
    changed = platform.admission_changed()
    sim.run_until(to_us(61))
    assert changed.value == MINUTE * US_PER_S
    assert sim.run_process(platform.invoke(fn)).admitted_at == to_us(61)


def test_scale_in_starts_a_new_burst_window(sim):
    scaler = ConcurrencyScaler(burst_limit=2, scale_rate=1, account_quota=10)
    scaler.admits(0, 0)
    assert scaler.ceiling(to_us(300)) == 7
    scaler.settle()
    assert scaler.ceiling(to_us(300)) == 2

    platform = FaasPlatform(sim, PlatformConfig(burst_limit=2, scale_rate_per_min=1, account_quota=10))
    fn = FunctionSpec("f")
    sim.run_process(platform.run_invocation(fn, body_seconds=1))
    assert platform.scaler.burst_start is None
    sim.run_until(to_us(300))
    sim.process(platform.run_invocation(fn, body_seconds=1))
    sim.run_until(to_us(300.5))
    assert platform.scaler.burst_start == to_us(300)
    assert platform.scaler.ceiling(sim.now) == 2


def test_second_invocation_is_warm(sim):
    platform = FaasPlatform(sim)
    fn = FunctionSpec("f")
    first = sim.run_process(platform.run_invocation(fn, body_seconds=1))
    second = sim.run_process(platform.run_invocation(fn, body_seconds=1))
    assert first.cold and not second.cold
    assert second.sandbox_id == first.sandbox_id
    assert second.start_latency == pytest.approx(PlatformConfig().warm_start)


def test_async_adds_polling_delay(sim):
    platform = FaasPlatform(sim)
    fn = FunctionSpec("f")
    sim.run_process(platform.run_invocation(fn))
    record = sim.run_process(platform.run_invocation(fn, mode="async"))
    assert record.start_latency == pytest.approx(0.005 + 0.05)


def test_mru_reuse(sim):
    platform = FaasPlatform(sim)
    fn = FunctionSpec("f")
    a = sim.process(platform.run_invocation(fn, body_seconds=1))
    b = sim.process(platform.run_invocation(fn, body_seconds=2))
    sim.run_until(to_us(5))
    latest = b.value.sandbox_id
    again = sim.run_process(platform.run_invocation(fn))
    assert again.sandbox_id == latest != a.value.sandbox_id


def test_reclaim_idle(sim):
    platform = FaasPlatform(sim)
    fn = FunctionSpec("f")
    sim.process(platform.run_invocation(fn))
    busy = sim.process(platform.run_invocation(fn, body_seconds=10_000))
    sim.run_until(to_us(602))
    assert platform.reclaim_idle() == 1
    assert len(platform.sandboxes) == 1
    assert not busy.triggered


def test_infinite_lifetime_never_reclaims(sim):
    platform = FaasPlatform(sim, PlatformConfig(idle_lifetime=math.inf))
    sim.run_process(platform.run_invocation(FunctionSpec("f")))
    sim.run_until(sim.now + to_us(10**6))
    assert platform.reclaim_idle() == 0


def test_pool_slots_and_fifo(sim, catalog):
    pool = provision_pool(sim, "c6g.xlarge", 284, catalog)
    assert pool.total_slots == 284
    small = provision_pool(sim, "c6g.xlarge", 1, catalog)
    first = sim.process(run_task(small, 10))
    second = sim.process(run_task(small, 10))
    sim.run_until(to_us(200))
    assert to_s(first.value) == pytest.approx(45 + 10)
    assert to_s(second.value) == pytest.approx(45 + 20)


def test_empty_pool_rejected(sim):
    with pytest.raises(ValidationError):
        VmPool(sim, "c6g.xlarge", 0, 4)


def test_billing_faas_and_vm(sim, catalog):
    platform = FaasPlatform(sim)
    fn = FunctionSpec("f", memory_mib=7076)
    record = sim.run_process(platform.run_invocation(fn, body_seconds=0))
    assert record.billed_ms >= 1
    report = billing_meter(platform.records, catalog)
    assert report.compute > 0

    pool = provision_pool(sim, "c6g.xlarge", 1, catalog)
    sim.run_until(sim.now + to_us(3600))
    pool.shutdown()
    assert billing_meter(pool, catalog).total == 13_600


def test_platform_calibration_file():
    calibration = load_platform_calibration()
    assert calibration.faas.burst_limit == 3000
    assert calibration.faas.account_quota == 10_000
    assert calibration.worker.memory_mib == 7076
    assert calibration.engine["fanout_threshold"] == 256
