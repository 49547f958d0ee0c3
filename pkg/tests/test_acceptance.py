"""End-to-end checks of the lab's headline behaviours, one test per behaviour."""

from fractions import Fraction

import pytest

from conftest import SUITE, fetcher, table_files
from skyrise_lab.bench import ExperimentConfig, Lab, aggregate, median_run, run_experiment
from skyrise_lab.econ import NeverBreaksEven, break_even_qph, scan_break_even_table, shuffle_break_even_table
from skyrise_lab.engine import plan_from_dict, read_result, run_reference, submit_query
from skyrise_lab.pricing import to_millicents, warming_cost
from skyrise_lab.storesim import create_container
from skyrise_lab.units import HOUR, MiB
from test_econ import PUBLISHED_SCAN, _matches


@pytest.fixture(scope="module")
def lab():
    return Lab.load()


def _load(root, name, **parameters):
    config = ExperimentConfig.load(root / "configs" / f"{name}.toml")
    if not parameters:
        return config
    data = config.to_dict()
    data["parameters"].update(parameters)
    return ExperimentConfig.from_dict(data)


def _metrics(config, lab):
    return run_experiment(config, lab=lab).median_sample().metrics


def test_token_bucket_burst_then_baseline(root, lab):
    metrics = _metrics(_load(root, "network_burst"), lab)
    assert metrics["burst_ms"] == pytest.approx(244, abs=12)
    assert metrics["baseline_mib_s"] == pytest.approx(75, rel=0.01)
    assert metrics["second_burst_mib"] == pytest.approx(150, rel=0.01)


def test_network_scale_out_linear_and_vpc_capped(root, lab):
    free = _metrics(_load(root, "network_scale_out"), lab)
    assert free["linear_r2"] > 0.99
    assert free["aggregate_gib_s_256"] == pytest.approx(8 * free["aggregate_gib_s_32"], rel=0.01)
    capped = _metrics(_load(root, "network_vpc"), lab)
    assert capped["peak_gib_s"] == pytest.approx(20, rel=0.01)
    assert capped["aggregate_gib_s_256"] == pytest.approx(20, rel=0.01)


def test_iops_warm_up_and_cost(root, lab, catalog):
    metrics = _metrics(_load(root, "storage_warmup"), lab)
    assert metrics["partitions"] == 5
    assert metrics["read_capacity_iops"] == pytest.approx(27_500, rel=0.10)
    assert metrics["minutes"] == pytest.approx(26, abs=4)
    assert metrics["error_pct"] == pytest.approx(10, abs=3)

    estimate = warming_cost(27_500, catalog)
    assert estimate.partitions == 5
    assert not estimate.extrapolated
    assert estimate.requests == pytest.approx(63e6, rel=0.15)
    assert estimate.cost_cents == pytest.approx(2500, rel=0.15)


def test_idle_cool_down(root, lab):
    metrics = _metrics(_load(root, "storage_cooldown"), lab)
    assert metrics["partitions_day_1"] == 5
    for day in (2, 3, 4):
        assert 1 < metrics[f"partitions_day_{day}"] < 5
    assert metrics["partitions_day_5"] == 1
    assert metrics["final_partitions"] == 1


def test_break_even_tables(catalog):
    for row in scan_break_even_table(catalog):
        for value, cell in zip(row.seconds, PUBLISHED_SCAN[row.label]):
            assert _matches(value, cell), (row.label, cell)
    _, (standard, express) = shuffle_break_even_table(catalog)
    for value, published in zip(standard.sizes, [2, 2, 7, 16]):
        assert value == pytest.approx(published, rel=0.25)
    assert all(isinstance(value, NeverBreaksEven) for value in express.sizes)


def test_compute_break_even_and_billing(plans, lab_files, make_context, catalog):
    assert 547 <= break_even_qph(4.87, 201, 13.6) <= 575
    # 128 Q/h for the join query does not follow from these inputs
    assert break_even_qph(21.19, 284, 13.6) == pytest.approx(182.3, abs=0.5)

    context = make_context(lab_files, budget=1)
    response = submit_query(plans["q6"], "faas", context)
    price = catalog.compute_price()
    unit_seconds = sum(
        Fraction(record.memory_mib) * MiB / price.unit_bytes * Fraction(record.billed_ms, 1000)
        for record in context.faas.records
    )
    assert response.cost.compute == to_millicents(unit_seconds * price.per_gib_h / HOUR)


@pytest.mark.parametrize("seed", [1, 2, 3])
@pytest.mark.parametrize("scale", [0.001, 0.01])
def test_engine_matches_reference(plans, make_context, scale, seed):
    files = table_files(scale, seed)
    for name in SUITE:
        plan = plans[name]
        _, expected = run_reference(plan, make_context(files).tables, fetcher(files))
        expected = sorted(expected, key=repr)
        for deployment in ("faas", "vm"):
            context = make_context(files, seed=seed, budget=1)
            submit_query(plan, deployment, context)
            rows = sorted(read_result(context.data, plan.query_id).rows(), key=repr)
            assert rows == expected, (name, deployment, scale, seed)


def test_burst_budget_scan_throughput(root, lab):
    over = _metrics(_load(root, "query_q6_budget"), lab)
    within = _metrics(_load(root, "query_q6_budget", budget_mib=300), lab)
    assert within["scan_mib_s_per_worker"] >= 1.2 * over["scan_mib_s_per_worker"]


def test_warm_bucket_shuffle(root, lab):
    warm = _metrics(_load(root, "query_q12_warm"), lab)
    cold = _metrics(_load(root, "query_q12_warm", warm_bucket=False), lab)
    saved = (cold["shuffle_s"] - warm["shuffle_s"]) / cold["shuffle_s"]
    assert saved == pytest.approx(0.50, abs=0.15)
    assert warm["runtime_s"] <= 0.9 * cold["runtime_s"]


FANOUT = {
    "query_id": "fanout",
    "pipelines": [
        {
            "id": "p_scan",
            "inputs": [],
            "operators": [
                {"kind": "scan", "table": "lineitem", "columns": ["l_orderkey", "l_quantity"]},
                {"kind": "exchange_write", "hash": ["l_orderkey"], "partitions": 131},
            ],
        },
        {"id": "p_sink", "inputs": ["p_scan"], "operators": [{"kind": "exchange_read", "input": "p_scan"}]},
    ],
}


def test_exchange_request_accounting(make_context, storage):
    files = table_files(0.001, seed=5, partitions={"lineitem": 320}, row_group_rows=256)
    exchange = create_container(storage.profiles["object_express"], "exchange")
    context = make_context(files, sim_file_bytes=int(182.4 * MiB), exchange=exchange)
    response = submit_query(plan_from_dict(FANOUT), "faas", context)
    stages = {stage["pipeline"]: stage for stage in response.metrics["stages"]}
    assert stages["p_scan"]["fragments"] == 320
    assert stages["p_sink"]["fragments"] == 131
    assert response.metrics["exchange"]["reads"] == 320 * 131 == 41_920
    assert exchange.requests["get"] == 41_920
    # partitions carry the scanned columns, not whole inflated files
    scan = stages["p_scan"]
    assert scan["bytes_in"] <= 320 * int(182.4 * MiB)
    assert scan["bytes_out"] <= 1.25 * scan["bytes_in"]
    assert stages["p_sink"]["bytes_in"] == scan["bytes_out"]
    assert stages["p_scan"]["timeouts"] == stages["p_sink"]["timeouts"] == 0


def test_same_seed_same_result_json(root):
    config = _load(root, "query_q6", scale=0.001, files={"lineitem": 4})
    first = run_experiment(config, lab=Lab.load()).to_json()
    assert run_experiment(config, lab=Lab.load()).to_json() == first
    burst = _load(root, "network_burst")
    assert run_experiment(burst).to_json() == run_experiment(burst).to_json()


def test_metric_oracles():
    agg = aggregate([1, 2, 3], base=[1, 2, 3])
    assert agg.cov == pytest.approx(40.82, abs=0.01)
    assert agg.mr == 1.0
    assert median_run([7, 3, 5, 3, 5]) == 2
    assert median_run([7, 3, 5, 3, 5]) == median_run([7, 3, 5, 3, 5])
