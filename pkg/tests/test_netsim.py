import numpy as np
import pytest

from skyrise_lab.errors import ValidationError
from skyrise_lab.netsim import (
    BucketState,
    TokenBucketSpec,
    VpcGroup,
    bin_segments,
    fleet_throughput,
    idle_refill,
    lambda_default_spec,
    lambda_link_spec,
    load_link_specs,
    saturate,
    transfer,
    vpc_grant,
)
from skyrise_lab.units import GiB, MiB, to_s, to_us


def test_lambda_default_spec_budget():
    spec = lambda_default_spec()
    assert spec.initial_budget == 300 * MiB
    assert spec.refill_amount == pytest.approx(7.5 * MiB)
    assert spec.burst_rate == pytest.approx(1.2 * GiB)
    assert lambda_default_spec("out").burst_rate == pytest.approx(0.8 * GiB)


def test_spec_rejects_burst_not_above_baseline():
    with pytest.raises(ValidationError):
        TokenBucketSpec(burst_rate=MiB, baseline_rate=2 * MiB, rechargeable_capacity=MiB, one_off_capacity=0)


def test_transfer_within_budget():
    link = lambda_link_spec().new_link()
    done = transfer(link, "in", 300 * MiB, 0)
    assert to_s(done) == pytest.approx(300 / 1228.8, abs=1e-5)
    assert link.inbound.budget == pytest.approx(0)


def test_transfer_beyond_budget_drops_to_baseline():
    link = lambda_link_spec().new_link()
    done = transfer(link, "in", 400 * MiB, 0)
    assert to_s(done) == pytest.approx(300 / 1228.8 + 100 / 75, abs=1e-5)


def test_zero_byte_transfer_completes_at_start():
    link = lambda_link_spec().new_link()
    assert transfer(link, "in", 0, 5_000) == 5_000


def test_directions_are_independent():
    link = lambda_link_spec().new_link()
    transfer(link, "in", 300 * MiB, 0)
    assert link.outbound.budget == 300 * MiB


def test_busy_link_queues_fifo():
    link = lambda_link_spec().new_link()
    first = transfer(link, "in", 100 * MiB, 0)
    second = transfer(link, "in", 100 * MiB, 0)
    assert second == pytest.approx(2 * first, abs=2)


def test_idle_refill_restores_only_rechargeable_part():
    link = lambda_link_spec().new_link()
    done = transfer(link, "in", 400 * MiB, 0)
    idle_refill(link, done + to_us(3.0))
    assert link.inbound.tokens == 150 * MiB
    assert link.inbound.one_off_remaining == 0


def test_idle_refill_zero_elapsed_is_noop():
    link = lambda_link_spec().new_link()
    transfer(link, "in", 400 * MiB, 0)
    before = link.inbound.tokens
    idle_refill(link, link.inbound.last_update)
    assert link.inbound.tokens == before


def test_short_gap_refills_at_baseline():
    link = lambda_link_spec().new_link()
    done = transfer(link, "in", 400 * MiB, 0)
    idle_refill(link, done + to_us(0.1))
    assert link.inbound.tokens == pytest.approx(7.5 * MiB)


def test_long_transfer_converges_to_baseline():
    link = lambda_link_spec().new_link()
    nbytes = 100 * GiB
    done = transfer(link, "in", nbytes, 0)
    assert nbytes / to_s(done) == pytest.approx(75 * MiB, rel=0.01)


def test_conservation_over_window():
    link = lambda_link_spec(quantized=True).new_link()
    plan = saturate(link, "in", 0, 2.0)
    moved = sum(seg.nbytes for seg in plan.segments)
    assert moved <= 300 * MiB + 75 * MiB * 2.0 + 1


def test_quantized_trace_sends_chunks_every_interval():
    link = lambda_link_spec(quantized=True).new_link()
    plan = saturate(link, "in", 0, 1.0)
    chunks = [seg for seg in plan.segments if seg.start > 0.25]
    assert len(chunks) >= 7
    assert all(seg.nbytes == pytest.approx(7.5 * MiB) for seg in chunks)


def test_trace_bins_show_burst_then_baseline():
    link = lambda_link_spec().new_link()
    plan = saturate(link, "in", 0, 1.0)
    rates = bin_segments(plan.segments, 0.0, 1.0) / 0.02
    assert rates[0] == pytest.approx(1.2 * GiB)
    assert rates[-1] == pytest.approx(75 * MiB)


def test_vpc_grant_proportional():
    group = VpcGroup({"a", "b"}, 20 * GiB)
    grants = vpc_grant(group, {"a": 15 * GiB, "b": 15 * GiB})
    assert grants["a"] == pytest.approx(10 * GiB)
    assert grants["b"] == pytest.approx(10 * GiB)


def test_vpc_grant_under_cap_and_without_group():
    names = {f"f{i}" for i in range(256)}
    demands = {name: 75 * MiB for name in names}
    assert vpc_grant(VpcGroup(names), demands) == demands
    assert vpc_grant(None, {"a": 50 * GiB}) == {"a": 50 * GiB}


def test_fleet_scales_linearly_without_vpc():
    spec = lambda_link_spec()
    peaks = []
    for count in (32, 64, 128, 256):
        links = [spec.new_link(name=f"f{i}") for i in range(count)]
        peaks.append(fleet_throughput(links, "in", 0.1)[0])
    ratios = np.array(peaks) / np.array([32, 64, 128, 256])
    assert np.allclose(ratios, ratios[0])


def test_fleet_clamped_by_vpc():
    spec = lambda_link_spec()
    links = [spec.new_link(name=f"f{i}") for i in range(256)]
    group = VpcGroup({link.name for link in links}, 20 * GiB)
    series = fleet_throughput(links, "in", 0.1, group=group)
    assert series.max() == pytest.approx(20 * GiB, rel=0.01)


def test_calibration_file_lists_family():
    specs = load_link_specs()
    assert "lambda_arm" in specs
    for size in ("medium", "large", "xlarge", "2xlarge", "4xlarge", "8xlarge", "12xlarge", "16xlarge"):
        assert f"c6g.{size}" in specs
    assert specs["lambda_arm"].inbound.initial_budget == 300 * MiB
    assert specs["c6g.xlarge"].approximate


def test_fresh_bucket_state():
    state = BucketState.fresh(lambda_default_spec(), now=10)
    assert state.budget == 300 * MiB
    assert state.last_update == 10
