import copy
from dataclasses import replace

import pytest

from conftest import fetcher, table_files
from skyrise_lab.dataform import LINEITEM, FileMeta, TableMeta, read_chunks
from skyrise_lab.engine import (
    LocalStore,
    compile_distributed,
    inject_barrier,
    plan_from_dict,
    read_result,
    run_local,
    run_reference,
    submit_query,
)
from skyrise_lab.engine import expressions as ex
from skyrise_lab.engine.compiler import DEFAULT_BUDGET, first_fit
from skyrise_lab.engine.local import BarrierBoard
from skyrise_lab.engine.operators import split_partitions
from skyrise_lab.engine.worker import FragmentTask, ReadMany, Write, consumer_order, fragment_program, split_range
from skyrise_lab.errors import ExecutionFailed, MetaMissing, PlanInvalid, StageFailed, UnknownPipeline
from skyrise_lab.naming import validate_keys_are_canonical
from skyrise_lab.pricing import vm_cost
from skyrise_lab.units import MiB


def rows_of(batch, ordered=False):
    rows = batch.rows()
    return rows if ordered else sorted(rows, key=repr)


def reference_rows(plan, context_or_tables, files, ordered=False):
    tables = getattr(context_or_tables, "tables", context_or_tables)
    _, rows = run_reference(plan, tables, fetcher(files))
    return rows if ordered else sorted(rows, key=repr)


def fake_table(name, sizes):
    files = [FileMeta(f"tables/{name}/part-{i:05d}.skyc", size, 1000, size) for i, size in enumerate(sizes)]
    return TableMeta(name, LINEITEM, files)


# plans


def test_suite_plans_load(plans):
    assert set(plans) == {"q1", "q6", "q12", "bb3"}
    assert plans["q12"].levels() == {"p_lineitem": 0, "p_orders": 0, "p_join": 1, "p_final": 2}
    assert plans["q6"].sink.id == "p_final"
    assert plans["q1"].tables() == ["lineitem"]
    assert plans["bb3"].tables() == ["clickstreams", "item"]


def test_plan_round_trips_through_json(plans):
    document = plans["q12"].to_dict()
    assert plan_from_dict(document).to_dict() == document


def test_plan_rejects_cycles_and_two_sinks(plans):
    document = plans["q6"].to_dict()
    document["pipelines"][0]["inputs"] = ["p_final"]
    with pytest.raises(PlanInvalid):
        plan_from_dict(document)

    document = plans["q6"].to_dict()
    scan = document["pipelines"][0]
    scan["operators"] = scan["operators"][:-1]
    with pytest.raises(PlanInvalid):
        plan_from_dict(document)


def test_plan_rejects_unknown_operator_and_aggregate(plans):
    document = plans["q6"].to_dict()
    document["pipelines"][0]["operators"][0]["kind"] = "window"
    with pytest.raises(PlanInvalid):
        plan_from_dict(document)

    document = plans["q6"].to_dict()
    document["pipelines"][0]["operators"][1]["aggregates"][0]["fn"] = "median"
    with pytest.raises(PlanInvalid):
        plan_from_dict(document)


def test_inject_barrier_prepends_and_copies(plans):
    plan = plans["q6"]
    held = inject_barrier(plan, "p_scan", "go")
    assert held.pipeline("p_scan").operators[0].kind == "barrier"
    assert plan.pipeline("p_scan").operators[0].kind == "scan"
    with pytest.raises(UnknownPipeline):
        inject_barrier(plan, "p_missing", "go")


# expressions


def test_row_and_vector_evaluation_agree(lab_files):
    predicate = ex.parse(
        {"op": "and", "args": [
            {"op": "between", "args": [{"col": "l_discount"}, {"lit": 0.05}, {"lit": 0.07}]},
            {"op": "<", "args": [{"col": "l_shipdate"}, {"col": "l_commitdate"}]},
        ]}
    )
    _, data = lab_files["lineitem"][0]
    batch = read_chunks(data).batches[0]
    mask = ex.evaluate_mask(predicate, batch).tolist()
    rows = ex.python_rows(batch)
    assert mask == [bool(ex.evaluate_row(predicate, row)) for row in rows]
    assert 0 < sum(mask) < len(mask)


def test_division_by_zero_is_null():
    expr = ex.parse({"op": "/", "args": [{"col": "a"}, {"col": "b"}]})
    assert ex.evaluate_row(expr, {"a": 1, "b": 0}) is None
    assert ex.evaluate_row(expr, {"a": 1, "b": 4}) == 0.25


def test_column_ranges_from_conjunction():
    expr = ex.parse(
        {"op": "and", "args": [
            {"op": ">=", "args": [{"col": "x"}, {"lit": 3}]},
            {"op": ">", "args": [{"lit": 9}, {"col": "x"}]},
            {"op": "!=", "args": [{"col": "y"}, {"lit": 1}]},
        ]}
    )
    ranges = ex.column_ranges(expr)
    assert [(r.column, r.lo, r.hi) for r in ranges] == [("x", 3, None), ("x", None, 9)]
    assert ex.column_ranges(ex.parse({"op": "or", "args": [{"col": "a"}, {"col": "b"}]})) == []


# compiler


def test_first_fit_packs_files_in_order():
    budget = 300 * MiB
    plan = compile_distributed(
        plan_from_dict(_scan_only("lineitem")), {"lineitem": fake_table("lineitem", [100 * MiB] * 10)}, budget
    )
    stage = plan.sink
    assert [len(f.files) for f in stage.fragments] == [3, 3, 3, 1]
    assert all(f.input_bytes <= budget for f in stage.fragments)


def test_budget_above_total_gives_one_fragment():
    table = fake_table("lineitem", [100 * MiB] * 10)
    plan = compile_distributed(plan_from_dict(_scan_only("lineitem")), {"lineitem": table}, 2000 * MiB)
    assert len(plan.sink.fragments) == 1


def test_oversized_file_gets_its_own_flagged_fragment():
    fragments = first_fit(fake_table("lineitem", [400 * MiB]).files, 300 * MiB, [400 * MiB])
    assert len(fragments) == 1
    assert fragments[0].over_budget


def test_default_budget_is_the_burst_budget():
    assert DEFAULT_BUDGET == 300 * MiB


def test_missing_table_metadata(plans):
    with pytest.raises(MetaMissing):
        compile_distributed(plans["q12"], {"lineitem": fake_table("lineitem", [MiB])})


def test_auto_partitions_follow_widest_producer(plans, lab_files, make_context):
    context = make_context(lab_files)
    stage_plan = compile_distributed(plans["q12"], context.tables, budget=1)
    join = stage_plan.stage("p_join")
    assert len(join.fragments) == 4
    assert stage_plan.stage("p_lineitem").output_partitions == 4
    assert stage_plan.stage("p_orders").output_partitions == 4
    assert stage_plan.stage("p_final").fragments[0].partition == 0


def test_broadcast_limit(plans, lab_files, make_context):
    context = make_context(lab_files)
    with pytest.raises(PlanInvalid):
        compile_distributed(plans["bb3"], context.tables, broadcast_limit=16)


# worker


def test_split_range_caps_simulated_bytes():
    reads = split_range("data", "k", 100, 1100, inflation=100_000.0, chunk_bytes=16 * MiB)
    assert len(reads) == 6
    assert reads[0].start == 100 and reads[-1].end == 1100
    assert all(left.end == right.start for left, right in zip(reads, reads[1:]))
    assert all(read.sim_bytes <= 16 * MiB for read in reads)
    assert len(split_range("data", "k", 0, 10, 1.0, 16 * MiB)) == 1


def test_consumer_order_visits_every_producer_once():
    for k in range(5):
        order = consumer_order(7, 5, k)
        assert sorted(order) == list(range(7))
    assert consumer_order(7, 5, 0)[0] == 0
    assert consumer_order(7, 5, 3)[0] == 4
    assert consumer_order(0, 3, 1) == []


def _drive(task, objects):
    program = fragment_program(task)
    reply = None
    requests = []
    while True:
        try:
            request = program.send(reply)
        except StopIteration as stop:
            return stop.value, requests
        requests.append(request)
        reply = None
        if isinstance(request, ReadMany):
            reply = [objects[read.key][read.start:read.end] for read in request.reads]
        elif isinstance(request, Write):
            objects[request.key] = request.data


def _always_false():
    document = _scan_only("lineitem")
    document["pipelines"][0]["operators"][0]["predicate"] = {
        "op": "<", "args": [{"col": "l_quantity"}, {"lit": 0.0}]
    }
    return plan_from_dict(document)


def test_always_false_scan_reads_footers_only(lab_files, make_context):
    context = make_context(lab_files)
    stage_plan = compile_distributed(_always_false(), context.tables, budget=DEFAULT_BUDGET)
    stage = stage_plan.sink
    objects = {key: data for key, data in lab_files["lineitem"]}
    output, requests = _drive(FragmentTask("q", stage, stage.fragments[0], context.tables), objects)
    files = len(stage.fragments[0].files)
    assert output.metrics.reads == files
    assert output.metrics.rows_out == 0
    assert output.metrics.chunks_skipped > 0
    assert sum(len(r.reads) for r in requests if isinstance(r, ReadMany)) == files


def test_footer_reads_are_billed_at_real_size(lab_files, make_context):
    context = make_context(lab_files, sim_file_bytes=100 * MiB)
    stage_plan = compile_distributed(_always_false(), context.tables, budget=DEFAULT_BUDGET)
    stage = stage_plan.sink
    objects = {key: data for key, data in lab_files["lineitem"]}
    output, requests = _drive(FragmentTask("q", stage, stage.fragments[0], context.tables), objects)
    reads = [read for r in requests if isinstance(r, ReadMany) for read in r.reads]
    assert reads
    assert all(read.sim_bytes == read.end - read.start for read in reads)
    assert output.metrics.bytes_in == output.metrics.real_in


def test_filter_fragment_matches_reference(lab_files, make_context, tmp_path):
    document = _scan_only("lineitem")
    document["pipelines"][0]["operators"].append(
        {"kind": "filter", "predicate": {"op": "in", "args": [{"col": "l_shipmode"}], "values": ["AIR", "RAIL"]}}
    )
    plan = plan_from_dict(document)
    store = LocalStore(tmp_path)
    tables = {"lineitem": store.load_table("lineitem", lab_files["lineitem"])}
    result = run_local(plan, tables, store, workers=3, budget=1)
    assert rows_of(result) == reference_rows(plan, tables, lab_files)
    assert result.num_rows > 0


# real-local driver


@pytest.mark.parametrize("name", ["q1", "q6", "q12", "bb3"])
def test_local_run_matches_reference(plans, lab_files, tmp_path, name):
    plan = plans[name]
    store = LocalStore(tmp_path)
    tables = {kind: store.load_table(kind, pairs) for kind, pairs in lab_files.items()}
    ordered = name in ("q1", "q12", "bb3")
    result = run_local(plan, tables, store, workers=4, budget=1)
    assert rows_of(result, ordered) == reference_rows(plan, tables, lab_files, ordered)


def test_barrier_board_holds_until_released():
    board = BarrierBoard({"barriers/q/go"})
    assert not board.wait("barriers/q/go", timeout=0.01)
    assert board.wait("barriers/q/other", timeout=0.01)
    board.release("barriers/q/go")
    assert board.wait("barriers/q/go", timeout=0.01)


# simulated execution


def test_q6_faas_and_vm_agree_with_reference(plans, lab_files, make_context):
    plan = plans["q6"]
    faas = make_context(lab_files, budget=1)
    vm = make_context(lab_files, budget=1)
    faas_response = submit_query(plan, "faas", faas)
    vm_response = submit_query(plan, "vm", vm)
    faas_rows = read_result(faas.data, "q6").rows()
    assert faas_rows == read_result(vm.data, "q6").rows()
    assert sorted(faas_rows, key=repr) == reference_rows(plan, faas, lab_files)
    assert faas_response.result_location == "results/q6/"
    assert faas_response.metrics["invocations"] == 5
    assert vm_response.metrics["instances"] >= 1
    assert faas_response.cost.cents > 0
    canonical, errors = validate_keys_are_canonical(faas.data.list_keys())
    assert canonical, errors


def test_exchange_requests_are_producers_times_consumers(plans, lab_files, make_context):
    context = make_context(lab_files, budget=1)
    response = submit_query(plans["q12"], "faas", context)
    stages = {s["pipeline"]: s for s in response.metrics["stages"]}
    producers = stages["p_lineitem"]["fragments"] + stages["p_orders"]["fragments"]
    consumers = stages["p_join"]["fragments"]
    expected = producers * consumers + stages["p_join"]["fragments"] * 1
    assert response.metrics["exchange"]["reads"] == expected
    served = sum(counts.get("get", 0) + counts.get("get_timeouts", 0) for counts in response.metrics["requests"].values())
    assert context.data.requests["get"] == served


def test_direct_invocation_below_fanout_threshold(plans, lab_files, make_context):
    response = submit_query(plans["q6"], "faas", make_context(lab_files, budget=1))
    assert not any(stage["fanout"] for stage in response.metrics["stages"])


def test_two_level_fanout_for_wide_stages(plans, make_context):
    files = table_files(0.001, seed=3, partitions={"lineitem": 260}, row_group_rows=256)
    context = make_context(files, sim_file_bytes=160 * MiB)
    response = submit_query(plans["q6"], "faas", context)
    scan = response.metrics["stages"][0]
    assert scan["fragments"] == 260
    assert scan["fanout"]
    assert response.metrics["invocations"] == 261
    assert sorted(read_result(context.data, "q6").rows(), key=repr) == reference_rows(plans["q6"], context, files)


def test_straggler_is_retried_and_billed(plans, lab_files, make_context):
    plan = plans["q6"]
    clean_context = make_context(lab_files, budget=1)
    clean = submit_query(plan, "faas", clean_context)
    context = make_context(lab_files, budget=1, faults={("p_scan", 1, 0): "hang"})
    slow = submit_query(plan, "faas", context)
    scan = slow.metrics["stages"][0]
    assert scan["timeouts"] == 1
    assert scan["retries"] == 1
    assert scan["attempts"] == scan["fragments"] + 1
    assert slow.runtime >= context.engine.straggler_base_s
    # the abandoned attempt is billed up to its timeout, the retry on top
    assert slow.metrics["invocations"] == clean.metrics["invocations"] + 1
    assert max(record.billed_ms for record in context.faas.records) >= 10_000
    assert slow.cost.cents > clean.cost.cents
    assert read_result(context.data, "q6").rows() == read_result(clean_context.data, "q6").rows()


def test_stage_fails_after_retry_budget(plans, lab_files, make_context):
    faults = {("p_scan", 0, attempt): "fail" for attempt in range(3)}
    with pytest.raises(StageFailed) as info:
        submit_query(plans["q6"], "faas", make_context(lab_files, budget=1, faults=faults))
    assert info.value.pipeline_id == "p_scan"
    assert info.value.fragment == 0
    assert isinstance(info.value.cause, ExecutionFailed)


def test_stage_failure_survives_rebuild_from_args():
    # simpy hands a failed event's exception to its waiters as type(exc)(*exc.args)
    original = StageFailed("p_scan", 3, ExecutionFailed("boom"))
    rebuilt = type(original)(*original.args)
    assert (rebuilt.pipeline_id, rebuilt.fragment) == ("p_scan", 3)
    assert str(rebuilt) == str(original)


def test_quota_rejections_wait_instead_of_failing(plans, lab_files, make_context):
    context = make_context(lab_files, budget=1)
    faas = replace(context.platform.faas, burst_limit=2, account_quota=2)
    context.platform = replace(context.platform, faas=faas)
    response = submit_query(plans["q6"], "faas", context)
    assert context.faas.stats["rejected"] > 0
    assert response.metrics["rejections"] == context.faas.stats["rejected"]
    scan = response.metrics["stages"][0]
    assert scan["retries"] == 0
    assert scan["timeouts"] == 0
    assert sorted(read_result(context.data, "q6").rows(), key=repr) == reference_rows(plans["q6"], context, lab_files)


def test_vm_pool_billed_from_boot(plans, lab_files, make_context, catalog):
    context = make_context(lab_files, budget=1)
    response = submit_query(plans["q6"], "vm", context)
    startup = context.platform.vm.startup
    (vms,) = response.metrics["usage"]["vms"]
    assert vms["seconds"] >= response.runtime + startup - 1e-6
    assert vms["count"] == response.metrics["instances"]
    unbooted = vm_cost(context.pool.instance_type, response.runtime, catalog, context.pool.count)
    assert response.cost.compute > unbooted.compute


def test_failed_attempt_within_budget_still_succeeds(plans, lab_files, make_context):
    context = make_context(lab_files, budget=1, faults={("p_final", 0, 0): "fail"})
    response = submit_query(plans["q6"], "faas", context)
    assert response.metrics["stages"][1]["retries"] == 1
    assert sorted(read_result(context.data, "q6").rows(), key=repr) == reference_rows(plans["q6"], context, lab_files)


def test_held_barrier_adds_its_hold(plans, lab_files, make_context):
    plan = plans["q6"]
    base_context = make_context(lab_files, budget=1)
    base = submit_query(plan, "faas", base_context)
    held_context = make_context(lab_files, budget=1, barriers={"go": 2.0})
    held = submit_query(inject_barrier(plan, "p_final", "go"), "faas", held_context)
    assert held.runtime >= base.runtime + 1.999
    assert read_result(held_context.data, "q6").rows() == read_result(base_context.data, "q6").rows()


def test_released_barrier_changes_nothing(plans, lab_files, make_context):
    plan = plans["q6"]
    base_context = make_context(lab_files, budget=1)
    base = submit_query(plan, "faas", base_context)
    open_context = make_context(lab_files, budget=1, barriers={"go": 0.0})
    response = submit_query(inject_barrier(plan, "p_final", "go"), "faas", open_context)
    assert read_result(open_context.data, "q6").rows() == read_result(base_context.data, "q6").rows()
    assert response.runtime == pytest.approx(base.runtime)


def test_empty_lineitem(plans, make_context):
    files = {"lineitem": []}
    context = make_context(files)
    response = submit_query(plans["q6"], "faas", context)
    assert read_result(context.data, "q6").num_rows == 0
    assert response.metrics["exchange"] == {"reads": 0, "writes": 0, "shuffle_s": 0.0}


def test_partitioning_is_stable(lab_files):
    _, data = lab_files["orders"][0]
    batch = read_chunks(data).batches[0]
    first = [part.num_rows for part in split_partitions(batch, ["o_orderkey"], 5)]
    second = [part.num_rows for part in split_partitions(copy.deepcopy(batch), ["o_orderkey"], 5)]
    assert first == second
    assert sum(first) == batch.num_rows


def _scan_only(table):
    return {
        "query_id": "scan_only",
        "pipelines": [
            {
                "id": "p_scan",
                "inputs": [],
                "operators": [{"kind": "scan", "table": table, "columns": ["l_orderkey", "l_quantity", "l_shipmode"]}],
            }
        ],
    }
