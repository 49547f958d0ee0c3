import csv
import io

import pytest

from skyrise_lab import bench
from skyrise_lab.bench import (
    ExperimentConfig,
    Lab,
    RunResult,
    aggregate,
    emit_plotdata,
    load_result,
    lower_median,
    median_run,
    percentile_row,
    plot_tables,
    run_experiment,
    usage_report,
)
from skyrise_lab.errors import DriverFailure, EmptySeries, ValidationError


@pytest.fixture(scope="module")
def lab():
    return Lab.load()


def _config(driver, system, parameters, regions=None, **experiment):
    record = {"name": f"t_{driver}", "system_under_test": system, "driver": driver}
    record.update(experiment)
    data = {"experiment": record, "parameters": parameters}
    if regions:
        data["regions"] = regions
    return ExperimentConfig.from_dict(data)


def _trace(**experiment):
    params = {"mode": "trace", "direction": "in", "duration_s": 1.0}
    return _config("network_io", "faas", params, **experiment)


def _csv_rows(text):
    return list(csv.reader(io.StringIO(text)))


# metric functions


def test_aggregate_hand_computed():
    agg = aggregate([1, 2, 3])
    assert agg.median == 2
    assert agg.mean == pytest.approx(2.0)
    assert agg.stddev == pytest.approx(0.8164966, rel=1e-6)
    assert agg.cov == pytest.approx(40.82483, rel=1e-5)
    assert agg.mr is None
    assert agg.count == 3
    assert aggregate([1, 2, 3], base=[1, 2, 3]).mr == 1.0


def test_aggregate_constant_and_zero_series():
    assert aggregate([4.0, 4.0, 4.0]).cov == 0.0
    assert aggregate([0.0, 0.0]).cov == 0.0
    assert aggregate([-1.0, 1.0]).cov is None
    assert aggregate([0.0], base=[0.0]).mr == 1.0
    assert aggregate([2.0], base=[0.0]).mr is None
    assert aggregate([3.0, 6.0], base=[1.0, 2.0, 3.0]).mr == pytest.approx(1.5)


def test_aggregate_empty_series():
    with pytest.raises(EmptySeries):
        aggregate([])
    with pytest.raises(EmptySeries):
        aggregate([1.0], base=[])


def test_lower_median_even_count():
    assert lower_median([4, 1, 3, 2]) == 2
    assert aggregate([1, 2, 3, 4]).median == 2


def test_median_run_tie_break():
    assert median_run([3, 1, 2, 1]) == 1
    assert median_run([5, 5, 5]) == 0
    assert median_run([2, 1]) == 1
    with pytest.raises(EmptySeries):
        median_run([])


def test_percentile_row():
    row = percentile_row([0.001 * n for n in range(1, 101)])
    assert row["p50_ms"] == pytest.approx(50.5)
    assert row["max_ms"] == pytest.approx(100.0)
    assert row["p50_ms"] <= row["p95_ms"] <= row["p99_ms"] <= row["max_ms"]


# configs


def test_shipped_configs_load(root):
    paths = sorted((root / "configs").glob("*.toml"))
    assert paths
    for path in paths:
        config = ExperimentConfig.load(path)
        assert config.region_order[0] == config.region_profile
        assert ExperimentConfig.from_dict(config.to_dict()).to_dict() == config.to_dict()


def test_config_defaults_mode():
    assert _config("storage_io", "storage", {"clients": 2}).mode == "requests"


@pytest.mark.parametrize(
    "driver,system,parameters",
    [
        ("warp", "faas", {}),
        ("minimal", "mainframe", {}),
        ("minimal", "faas", {"mode": "idle_gaps"}),
        ("network_io", "faas", {"mode": "trace", "duration_s": -1.0}),
        ("network_io", "faas", {"mode": "scale_out", "counts": []}),
        ("network_io", "faas", {"mode": "trace", "duration_s": 1.0, "direction": "sideways"}),
        ("query", "engine", {"query": "q6", "deployment": "mainframe"}),
    ],
)
def test_config_validation(driver, system, parameters):
    with pytest.raises(ValidationError):
        _config(driver, system, parameters)


def test_config_rejects_bad_experiment_and_regions():
    with pytest.raises(ValidationError):
        _trace(repetitions=0)
    with pytest.raises(ValidationError):
        _trace(region_profile="nowhere", regions={"base": {}})
    with pytest.raises(ValidationError):
        _trace(regions={"default": {"latency_multiplier": 0}})
    with pytest.raises(ValidationError):
        _trace(regions={"default": {"colour": "blue"}})


def test_region_order_puts_base_first():
    config = _trace(region_profile="mid", regions={"zeta": {}, "alpha": {}, "mid": {}})
    assert config.region_order == ["mid", "alpha", "zeta"]


# drivers


def test_network_trace_shape(lab):
    result = run_experiment(_trace(), lab=lab)
    sample = result.median_sample()
    table = sample.tables["timeseries"]
    assert table["columns"] == ["t_ms", "mib_per_s_in", "mib_per_s_out"]
    assert len(table["rows"]) == 50
    assert table["rows"][0][1] == pytest.approx(1228.8)
    assert sample.metrics["baseline_mib_s"] == pytest.approx(75, rel=0.01)
    assert result.primary == "mean_mib_s"


def test_network_scale_out_and_vpc_cap(lab):
    params = {"mode": "scale_out", "counts": [4, 2], "duration_s": 0.1}
    free = run_experiment(_config("network_io", "faas", params), lab=lab).median_sample()
    assert free.metrics["aggregate_gib_s_2"] == pytest.approx(2.4)
    assert free.metrics["aggregate_gib_s_4"] == pytest.approx(4.8)
    assert free.metrics["linear_r2"] == pytest.approx(1.0)
    assert [row[0] for row in free.tables["bars"]["rows"]] == [2, 4]

    capped = run_experiment(_config("network_io", "faas", dict(params, vpc_cap_gib_s=3.0)), lab=lab).median_sample()
    assert capped.metrics["peak_gib_s"] == pytest.approx(3.0)


def test_minimal_faas_startup(lab):
    config = _config("minimal", "faas", {"mode": "startup", "invocations": 3, "interval_s": 1.0})
    sample = run_experiment(config, lab=lab).median_sample()
    assert sample.metrics["cold_start_ms"] == pytest.approx(825.0)
    assert sample.metrics["warm_start_ms"] == pytest.approx(5.0)
    assert sample.metrics["start_ms"] == pytest.approx(5.0)
    assert sample.extra == {"cold_starts": 1, "invocations": 3}
    assert len(sample.latencies_s) == 3


def test_minimal_idle_gaps(lab):
    config = _config("minimal", "faas", {"mode": "idle_gaps", "idle_gaps_s": [300, 900]})
    sample = run_experiment(config, lab=lab).median_sample()
    assert sample.tables["gaps"]["rows"] == [[300.0, 0], [900.0, 1]]
    assert sample.metrics["idle_lifetime_s"] == 300.0
    assert sample.metrics["cold_after_gap"] == 1.0


def test_minimal_vm_startup(lab):
    result = run_experiment(_config("minimal", "vm_pool", {}), lab=lab)
    assert result.median_sample().metrics["vm_startup_s"] == pytest.approx(45.0)
    assert result.cost.total > 0


def test_region_profile_scales_latency(lab):
    regions = {"base": {}, "far": {"latency_multiplier": 1.25, "concurrency_ceiling": 100}}
    config = _config(
        "minimal", "faas", {"invocations": 2}, regions=regions, region_profile="base", repetitions=2, warm_gap_s=5
    )
    result = run_experiment(config, lab=lab)
    assert [s.region for s in result.samples] == ["base", "base", "far", "far"]
    assert result.samples[1].started_at_s > result.samples[0].started_at_s
    far = result.aggregates["far"]["cold_start_ms"]
    assert far.median == pytest.approx(881.25)
    assert far.mr == pytest.approx(881.25 / 825.0)
    assert result.aggregates["base"]["cold_start_ms"].mr == 1.0


def test_storage_requests(lab):
    params = {"mode": "requests", "clients": 2, "requests_per_client": 20, "object_kib": 1}
    sample = run_experiment(_config("storage_io", "storage", params), lab=lab).median_sample()
    assert sample.metrics["error_pct"] == 0.0
    assert sample.metrics["exhausted"] == 0.0
    assert sample.metrics["iops"] > 0
    assert len(sample.latencies_s) == 40
    assert sample.usage["storage"][0]["reads"] == 40
    assert sample.tables["timeseries"]["columns"] == ["t_s", "iops_ok", "iops_throttled", "mib_per_s"]


def test_storage_cooldown_trace(lab):
    params = {"mode": "cooldown", "partitions": 5, "days": 6, "time_scale": 0.001}
    sample = run_experiment(_config("storage_io", "storage", params), lab=lab).median_sample()
    days = [sample.metrics[f"partitions_day_{day}"] for day in range(1, 7)]
    assert days == [5.0, 2.0, 2.0, 2.0, 1.0, 1.0]
    rows = sample.tables["trace"]["rows"]
    assert len(rows) == 6 * 24 + 1
    assert rows[0][1] == 5
    assert rows[24][2] == 5 * 5500


def test_query_driver_metrics(lab):
    params = {"query": "q6", "scale": 0.001, "files": 2}
    result = run_experiment(_config("query", "engine", params), lab=lab)
    sample = result.median_sample()
    assert result.primary == "runtime_s"
    assert sample.metrics["runtime_s"] > 0
    assert sample.extra["response"]["result_location"] == "results/q6/"
    assert sample.metrics["cost_cents"] == pytest.approx(sample.cost.cents)


# results


def test_cost_recomputes_from_usage(lab):
    results = [
        run_experiment(_config("query", "engine", {"query": "q6", "scale": 0.001, "files": 2}), lab=lab),
        run_experiment(_config("minimal", "faas", {"invocations": 2}), lab=lab),
        run_experiment(_trace(), lab=lab),
    ]
    for result in results:
        for sample in result.samples:
            assert usage_report(sample.usage, lab.catalog).total == sample.cost.total
            assert usage_report(sample.usage, lab.catalog).to_dict() == sample.cost.to_dict()


def test_result_round_trip(lab, tmp_path):
    result = run_experiment(_trace(repetitions=3, warm_gap_s=2), lab=lab)
    path = result.save(tmp_path / "out" / "trace.json")
    loaded = load_result(path, lab.catalog)
    assert loaded.to_json() == result.to_json()
    assert loaded.median_runs == result.median_runs


def test_load_result_rejects_unknown_schema(lab, tmp_path):
    result = run_experiment(_trace(), lab=lab)
    result.schema_version = 99
    path = result.save(tmp_path / "r.json")
    with pytest.raises(ValidationError):
        load_result(path, lab.catalog)


def test_aggregates_recompute_from_samples(lab):
    result = run_experiment(_trace(repetitions=3, warm_gap_s=2), lab=lab)
    values = [sample.metrics["mean_mib_s"] for sample in result.samples]
    assert result.aggregates["default"]["mean_mib_s"] == aggregate(values, values)


def test_repeated_runs_are_identical(lab):
    config = _config("storage_io", "storage", {"clients": 3, "requests_per_client": 10})
    assert run_experiment(config, lab=lab).to_json() == run_experiment(config, lab=lab).to_json()


def test_emit_plotdata(lab, tmp_path):
    result = run_experiment(_trace(repetitions=2), lab=lab)
    written = emit_plotdata(result, tmp_path / "plots")
    names = sorted(path.name for path in written)
    assert names == ["t_network_io_groups.csv", "t_network_io_timeseries.csv"]
    groups = _csv_rows((tmp_path / "plots" / "t_network_io_groups.csv").read_text())
    assert groups[0] == ["region", "metric", "median", "mean", "stddev", "cov_pct", "mr"]
    assert {row[1] for row in groups[1:]} == set(result.samples[0].metrics)
    first = {path.name: path.read_bytes() for path in written}
    emit_plotdata(result, tmp_path / "plots")
    assert {path.name: path.read_bytes() for path in written} == first


def test_latency_plot_table(lab):
    config = _config("storage_io", "storage", {"clients": 2, "requests_per_client": 10})
    tables = plot_tables(run_experiment(config, lab=lab))
    rows = _csv_rows(tables["t_storage_io_latency.csv"])
    assert rows[0] == ["region", "p50_ms", "p95_ms", "p99_ms", "max_ms"]
    assert rows[1][0] == "default"


def test_emit_plotdata_needs_samples(tmp_path):
    with pytest.raises(EmptySeries):
        emit_plotdata(RunResult(_trace(), "mean_mib_s"), tmp_path)


def test_driver_failure_keeps_partial_result(lab, monkeypatch):
    original = bench.DRIVERS["network_io"]

    def flaky(rep):
        if rep.index == 1:
            raise RuntimeError("driver crashed")
        return original(rep)

    monkeypatch.setitem(bench.DRIVERS, "network_io", flaky)
    with pytest.raises(DriverFailure) as info:
        run_experiment(_trace(repetitions=3), lab=lab)
    partial = info.value.partial
    assert not partial.complete
    assert len(partial.samples) == 1
    assert partial.to_dict()["complete"] is False
    assert "repetition 1" in str(info.value)


def test_missing_plan_is_a_driver_failure(lab):
    with pytest.raises(DriverFailure) as info:
        run_experiment(_config("query", "engine", {"query": "no_such_plan"}), lab=lab)
    assert info.value.partial.samples == []
