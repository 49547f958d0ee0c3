"""Simulated query execution on functions or on a VM pool.

The coordinator compiles the plan, starts every stage once its input stages
are complete and runs one supervisor per fragment. Supervisors retry failed
or straggling attempts up to the retry budget. Attempts acquire a worker
(a function invocation or a pool slot) and drive the fragment's sans-I/O
program: reads and writes go through a retrying storage client and the
worker's network link, compute is simulated time.
"""

import logging
import math
from collections import Counter, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Set, Tuple, Union

import simpy

from skyrise_lab.dataform import Batch, Schema, TableMeta, concat_batches, read_chunks, read_footer
from skyrise_lab.engine.compiler import DEFAULT_BUDGET, Fragment, Stage, StagePlan, compile_distributed
from skyrise_lab.engine.plan import QueryPlan
from skyrise_lab.engine.worker import (
    DATA_STORE,
    EXCHANGE_STORE,
    Compute,
    FragmentOutput,
    FragmentTask,
    ReadMany,
    Wait,
    WorkerSettings,
    Write,
    fragment_program,
)
from skyrise_lab.errors import (
    ExecutionFailed,
    Exhausted,
    QuotaExceeded,
    SkyriseLabError,
    StageFailed,
    StorageExhausted,
    ValidationError,
)
from skyrise_lab.faassim import FaasPlatform, PlatformCalibration, VmPool, billing_meter, load_platform_calibration, provision_pool
from skyrise_lab.naming import barrier_key, exchange_key, result_prefix
from skyrise_lab.netsim import LinkSpec, LinkState, load_link_specs, transfer
from skyrise_lab.pricing import CostReport, PriceCatalog, RequestMeter, load_catalog, usage_cost, vm_cost
from skyrise_lab.simcore import Simulation
from skyrise_lab.storesim import Bucket, RetryingClient, RetryPolicy
from skyrise_lab.units import MiB, to_s, to_us

logger = logging.getLogger(__name__)

DEPLOYMENTS = ("faas", "vm")
FAULT_KINDS = ("hang", "fail")


@dataclass(frozen=True)
class Deployment:
    """Where workers run: ``faas`` invocations or slots of a VM pool."""

    mode: str = "faas"
    instance_type: str = "c6g.xlarge"
    instances: Optional[int] = None

    def __post_init__(self) -> None:
        if self.mode not in DEPLOYMENTS:
            raise ValidationError(f"deployment must be one of {DEPLOYMENTS}, got '{self.mode}'")
        if self.instances is not None and self.instances < 1:
            raise ValidationError("a VM deployment needs at least one instance")

    @classmethod
    def parse(cls, value: Union[str, "Deployment"]) -> "Deployment":
        return value if isinstance(value, Deployment) else cls(mode=str(value))


@dataclass(frozen=True)
class EngineSettings:
    fanout_threshold: int = 256
    broadcast_limit: int = 64 * MiB
    retry_budget: int = 2
    straggler_base_s: float = 10.0
    straggler_rate: float = 25 * MiB
    straggler_request_s: float = 0.02
    budget_basis: str = "file"
    barrier_poll_s: float = 0.05

    @classmethod
    def from_calibration(cls, record: Mapping[str, Any]) -> "EngineSettings":
        return cls(
            fanout_threshold=int(record.get("fanout_threshold", 256)),
            broadcast_limit=int(record.get("broadcast_threshold_mib", 64) * MiB),
            retry_budget=int(record.get("retry_budget", 2)),
            straggler_base_s=float(record.get("straggler_base_s", 10.0)),
            straggler_rate=float(record.get("straggler_rate_mib_s", 25)) * MiB,
            straggler_request_s=float(record.get("straggler_request_s", 0.02)),
            budget_basis=str(record.get("budget_basis", "file")),
            barrier_poll_s=float(record.get("barrier_poll_s", 0.05)),
        )

    def straggler_timeout(self, input_bytes: int, requests: int = 0) -> float:
        """Seconds of running time an attempt gets before it is treated as a straggler."""
        return self.straggler_base_s + input_bytes / self.straggler_rate + requests * self.straggler_request_s


@dataclass
class QueryContext:
    """Everything a query needs besides its plan: storage, tables, prices, calibration.

    ``faults`` maps ``(pipeline id, fragment, attempt)`` to ``hang`` or
    ``fail``. ``barriers`` maps a condition to how long it stays held once the
    first worker reaches it, or ``None`` to hold it until ``release_barrier``;
    conditions not listed are released.
    """

    sim: Simulation
    data: Bucket
    tables: Mapping[str, TableMeta]
    catalog: PriceCatalog
    platform: PlatformCalibration
    links: Mapping[str, LinkSpec]
    exchange: Optional[Bucket] = None
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    budget: int = DEFAULT_BUDGET
    basis: Optional[str] = None
    exchange_partitions: Dict[str, int] = field(default_factory=dict)
    faults: Dict[Tuple[str, int, int], str] = field(default_factory=dict)
    barriers: Dict[str, Optional[float]] = field(default_factory=dict)
    faas: Optional[FaasPlatform] = None
    pool: Optional[VmPool] = None

    def __post_init__(self) -> None:
        if self.exchange is None:
            self.exchange = self.data
        for key, kind in self.faults.items():
            if kind not in FAULT_KINDS:
                raise ValidationError(f"fault {key}: kind must be one of {FAULT_KINDS}, got '{kind}'")

    @classmethod
    def create(
        cls,
        sim: Simulation,
        data: Bucket,
        tables: Mapping[str, TableMeta],
        calibration: Optional[Path] = None,
        catalog: Optional[PriceCatalog] = None,
        **options: Any,
    ) -> "QueryContext":
        return cls(
            sim=sim,
            data=data,
            tables=tables,
            catalog=catalog or load_catalog(),
            platform=load_platform_calibration(calibration),
            links=load_link_specs(calibration),
            **options,
        )

    @property
    def engine(self) -> EngineSettings:
        return EngineSettings.from_calibration(self.platform.engine)

    @property
    def worker_settings(self) -> WorkerSettings:
        return WorkerSettings.from_calibration(self.platform.worker_settings)


@dataclass
class QueryResponse:
    query_id: str
    deployment: str
    result_location: str
    runtime: float
    cost: CostReport
    metrics: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "query_id": self.query_id,
            "deployment": self.deployment,
            "result_location": self.result_location,
            "runtime_s": round(self.runtime, 6),
            "cost": self.cost.to_dict(),
            "metrics": self.metrics,
        }


@dataclass
class Worker:
    link: Optional[LinkState]
    record: Any = None
    slot: Any = None


@dataclass
class AttemptState:
    """``running`` fires once the attempt holds a worker; ``held_us`` counts time parked at barriers."""

    pipeline_id: str
    fragment: int
    number: int
    running: simpy.Event
    cancelled: bool = False
    held_us: int = 0

    @property
    def label(self) -> str:
        return f"{self.pipeline_id}/{self.fragment}#{self.number}"


def _timeouts(attempts) -> int:
    """Attempts the store served but the client abandoned."""
    return sum(1 for attempt in attempts if attempt.status == "timeout")


@dataclass
class StageRun:
    stage: Stage
    done: simpy.Event
    outputs: Dict[int, FragmentOutput] = field(default_factory=dict)
    launched: Set[int] = field(default_factory=set)
    attempts: int = 0
    retries: int = 0
    timeouts: int = 0
    fanout: bool = False
    started_at: Optional[int] = None
    finished_at: Optional[int] = None
    durations: List[float] = field(default_factory=list)

    def complete(self, fragment: Fragment, output: FragmentOutput, now: int) -> None:
        self.outputs[fragment.index] = output
        if len(self.outputs) == len(self.stage.fragments) and not self.done.triggered:
            self.finished_at = now
            self.done.succeed()

    def fail(self, error: SkyriseLabError) -> None:
        if not self.done.triggered:
            self.done.fail(error)
            self.done.defused = True

    def to_dict(self) -> Dict[str, Any]:
        metrics = [output.metrics for output in self.outputs.values()]
        return {
            "pipeline": self.stage.pipeline_id,
            "fragments": len(self.stage.fragments),
            "attempts": self.attempts,
            "retries": self.retries,
            "timeouts": self.timeouts,
            "fanout": self.fanout,
            "start_s": to_s(self.started_at) if self.started_at is not None else None,
            "end_s": to_s(self.finished_at) if self.finished_at is not None else None,
            "bytes_in": sum(m.bytes_in for m in metrics),
            "bytes_out": sum(m.bytes_out for m in metrics),
            "requests": sum(m.reads + m.writes for m in metrics),
            "rows_out": sum(m.rows_out for m in metrics),
            "chunks_skipped": sum(m.chunks_skipped for m in metrics),
            "durations_s": sorted(self.durations),
        }


class QueryRuntime:
    """One query execution on a simulation; use ``submit_query`` for the common path."""

    def __init__(self, plan: QueryPlan, deployment: Deployment, context: QueryContext):
        self.plan = plan
        self.deployment = deployment
        self.context = context
        self.sim = context.sim
        self.engine = context.engine
        self.settings = context.worker_settings
        self.stage_plan: StagePlan = compile_distributed(
            plan,
            context.tables,
            context.budget,
            context.basis or self.engine.budget_basis,
            context.exchange_partitions,
            self.engine.broadcast_limit,
        )
        self.query_id = plan.query_id
        self.buckets = {DATA_STORE: context.data, EXCHANGE_STORE: context.exchange}
        self.clients = {
            store: RetryingClient(self.sim, bucket, context.retry, f"{self.query_id}:{store}")
            for store, bucket in self.buckets.items()
        }
        self.meters: Dict[str, RequestMeter] = {}
        for bucket in self.buckets.values():
            if bucket.name not in self.meters:
                price = context.catalog.storage_price(bucket.profile.service_kind)
                self.meters[bucket.name] = RequestMeter(bucket.profile.service_kind, price.surcharge_threshold)
        self.requests: Dict[str, Counter] = {store: Counter() for store in self.buckets}
        self.shuffle_windows: List[Tuple[int, int]] = []
        self.runs: Dict[str, StageRun] = {}
        self.holds: Dict[str, Optional[float]] = {}
        self.released: Dict[str, Optional[int]] = {}
        self._outstanding: Set[simpy.Event] = set()
        self.faas: Optional[FaasPlatform] = None
        self.pool: Optional[VmPool] = None
        self.rejections = 0
        self._first_record = 0
        self._vm_since = self.sim.now

    # workers

    def _prepare_workers(self) -> None:
        context = self.context
        if self.deployment.mode == "faas":
            if context.faas is None:
                context.faas = FaasPlatform(self.sim, context.platform.faas, context.links["lambda_arm"])
            self.faas = context.faas
            self._first_record = len(self.faas.records)
            return
        if context.pool is None:
            instance_type = self.deployment.instance_type
            if instance_type not in context.links:
                raise ValidationError(f"no link calibration for instance type '{instance_type}'")
            count = self.deployment.instances
            if count is None:
                vcpus = context.catalog.vm_price(instance_type).vcpus
                per_vm = max(1, vcpus // context.platform.vm.slot_vcpus)
                widest = max((len(stage.fragments) for stage in self.stage_plan.stages), default=1)
                count = max(1, math.ceil(widest / per_vm))
            context.pool = provision_pool(
                self.sim, instance_type, count, context.catalog, context.platform.vm, context.links[instance_type]
            )
            # a pool provisioned for this query is billed from its boot
            self._vm_since = context.pool.started_at
        self.pool = context.pool

    def _acquire(self):
        if self.faas is not None:
            while True:
                try:
                    record = yield from self.faas.invoke(self.context.platform.worker)
                except QuotaExceeded:
                    self.rejections += 1
                    yield self.faas.admission_changed()
                    continue
                return Worker(self.faas.sandbox(record).link, record=record)
        slot = yield self.sim.process(self.pool.acquire())
        return Worker(self.pool.link_for(slot), slot=slot)

    def _release(self, worker: Worker) -> None:
        if worker.record is not None:
            self.faas.release(worker.record)
        else:
            self.pool.release(worker.slot)

    def _release_late(self, event: simpy.Event) -> None:
        if event.ok:
            self._release(event.value)
        else:
            event.defused = True

    def _track(self, process: simpy.Process) -> simpy.Process:
        self._outstanding.add(process)
        process.callbacks.append(self._outstanding.discard)
        return process

    # storage

    def _storage(self, store: str, op: str, key: str, size: int, link: Optional[LinkState], start: int = 0, end: Optional[int] = None, data: bytes = b""):
        """One retried request plus its transfer over ``link``; returns ``(payload, error)``."""
        bucket = self.buckets[store]
        counts = self.requests[store]
        try:
            result = yield from self.clients[store].request(op, key, size)
        except Exhausted as exc:
            counts["attempts"] += len(exc.attempts)
            counts[f"{op}_timeouts"] += _timeouts(exc.attempts)
            counts["exhausted"] += 1
            return None, StorageExhausted(f"{op} '{key}' on {bucket.name}: {exc}")
        counts[op] += 1
        counts["attempts"] += len(result.attempts)
        counts[f"{op}_timeouts"] += _timeouts(result.attempts)
        self.meters[bucket.name].record(op, size)
        if op == "get":
            payload = bucket.get_object(key, start, end)
        else:
            bucket.put_object(key, data, size)
            payload = None
        if link is not None and size > 0:
            done = transfer(link, "in" if op == "get" else "out", size, self.sim.now)
            yield self.sim.until(done)
        return payload, None

    def _lane(self, queue: deque, reads, results: List[Any], errors: List[SkyriseLabError], worker: Worker, state: AttemptState):
        while queue and not errors and not state.cancelled:
            index = queue.popleft()
            read = reads[index]
            request = self._track(
                self.sim.process(self._storage(read.store, "get", read.key, read.sim_bytes, worker.link, read.start, read.end))
            )
            payload, error = yield request
            if error is not None:
                errors.append(error)
                return
            results[index] = payload

    def _serve(self, request, worker: Worker, state: AttemptState):
        sim = self.sim
        if isinstance(request, ReadMany):
            reads = request.reads
            results: List[Any] = [None] * len(reads)
            errors: List[SkyriseLabError] = []
            queue = deque(range(len(reads)))
            started = sim.now
            lanes = [
                sim.process(self._lane(queue, reads, results, errors, worker, state))
                for _ in range(min(max(1, request.concurrency), len(reads)))
            ]
            yield sim.all_of(lanes)
            if errors:
                raise errors[0]
            if reads and reads[0].store == EXCHANGE_STORE:
                self.shuffle_windows.append((started, sim.now))
            return results
        if isinstance(request, Write):
            put = self._track(
                sim.process(self._storage(request.store, "put", request.key, request.sim_bytes, worker.link, data=request.data))
            )
            _, error = yield put
            if error is not None:
                raise error
            return None
        if isinstance(request, Compute):
            yield sim.sleep(request.seconds)
            return None
        if isinstance(request, Wait):
            self._reach(request.condition)
            poll = to_us(self.engine.barrier_poll_s)
            while not self._is_released(request.condition):
                yield sim.sleep_us(poll)
                state.held_us += poll
            return None
        raise TypeError(f"unknown worker request {request!r}")

    # barriers

    def _reach(self, key: str) -> None:
        if key in self.holds and key not in self.released:
            delay = self.holds[key]
            self.released[key] = None if delay is None else self.sim.now + to_us(delay)

    def _is_released(self, key: str) -> bool:
        if key not in self.holds:
            return True
        if key not in self.released:
            return False
        at = self.released[key]
        return at is not None and self.sim.now >= at

    def release_barrier(self, condition: str) -> None:
        """Release ``condition`` now; polling workers continue on their next poll."""
        self.released[barrier_key(self.query_id, condition)] = self.sim.now
        self.sim.trace.log_event("barrier", self.query_id, condition)

    # fragments

    def _task(self, run: StageRun, fragment: Fragment) -> FragmentTask:
        stage = run.stage
        inputs = {}
        upstream = {}
        for pipeline_id in stage.pipeline.inputs:
            producer = self.runs[pipeline_id]
            inputs[pipeline_id] = [producer.outputs[f.index].exchange for f in producer.stage.fragments]
            upstream[pipeline_id] = producer.stage.schema
        return FragmentTask(
            self.query_id,
            stage,
            fragment,
            self.stage_plan.tables,
            inputs,
            upstream,
            consumers=len(stage.fragments),
            settings=self.settings,
        )

    def _input_bytes(self, task: FragmentTask) -> int:
        if task.fragment.partition is None:
            return task.fragment.input_bytes
        k = task.fragment.partition
        return sum(output.sim_size(k) for outputs in task.inputs.values() for output in outputs)

    def _input_requests(self, task: FragmentTask) -> int:
        if task.fragment.partition is None:
            # footer plus at least one chunk per file
            return 2 * len(task.fragment.files)
        return sum(len(outputs) for outputs in task.inputs.values())

    def execute_fragment(self, task: FragmentTask, worker: Worker, state: AttemptState):
        """Drive the fragment program to completion on ``worker``."""
        program = fragment_program(task)
        reply = None
        while True:
            try:
                request = program.send(reply)
            except StopIteration as stop:
                return stop.value
            reply = yield from self._serve(request, worker, state)

    def _attempt(self, run: StageRun, task: FragmentTask, state: AttemptState, followers: Sequence[Fragment]):
        acquisition = self._track(self.sim.process(self._acquire()))
        worker: Optional[Worker] = None
        try:
            worker = yield acquisition
            state.running.succeed()
            pending = [f for f in followers if f.index not in run.launched]
            for follower in pending:
                self._launch(run, follower)
                yield self.sim.sleep(self.context.platform.faas.invoke_api)
            fault = self.context.faults.get((state.pipeline_id, state.fragment, state.number))
            if fault == "hang":
                yield self.sim.event()
            if fault == "fail":
                raise ExecutionFailed(f"injected failure in {state.label}")
            started = self.sim.now
            output = yield from self.execute_fragment(task, worker, state)
            run.durations.append(to_s(self.sim.now - started))
            return output
        except simpy.Interrupt:
            state.cancelled = True
            if worker is None:
                if acquisition.callbacks is not None:
                    acquisition.callbacks.append(self._release_late)
                elif acquisition.ok:
                    self._release(acquisition.value)
            return None
        finally:
            if worker is not None:
                self._release(worker)

    def _deadline(self, state: AttemptState, timeout: float):
        """Fires ``timeout`` seconds after the attempt got a worker, not counting barrier waits."""
        yield state.running
        remaining = to_us(timeout)
        while remaining > 0:
            held = state.held_us
            yield self.sim.sleep_us(remaining)
            remaining = state.held_us - held

    def _supervise(self, run: StageRun, fragment: Fragment, followers: Sequence[Fragment] = ()):
        """Run attempts of one fragment until one succeeds or the retry budget is spent."""
        sim = self.sim
        pipeline_id = run.stage.pipeline_id
        task = self._task(run, fragment)
        timeout = self.engine.straggler_timeout(self._input_bytes(task), self._input_requests(task))
        last_error: Optional[SkyriseLabError] = None
        for number in range(self.engine.retry_budget + 1):
            if number:
                run.retries += 1
            run.attempts += 1
            state = AttemptState(pipeline_id, fragment.index, number, sim.event())
            attempt = sim.process(self._attempt(run, task, state, followers))
            deadline = sim.process(self._deadline(state, timeout))
            try:
                yield sim.any_of([attempt, deadline])
            except SkyriseLabError as exc:
                last_error = exc
                logger.debug("%s failed: %s", state.label, exc)
                sim.trace.log_event("attempt_failed", state.label, data={"error": str(exc)})
                continue
            if attempt.triggered:
                if attempt.ok:
                    run.complete(fragment, attempt.value, sim.now)
                    return
                attempt.defused = True
                last_error = attempt.value
                continue
            run.timeouts += 1
            attempt.interrupt("straggler")
            last_error = ExecutionFailed(f"{state.label} exceeded its {timeout:.1f}s straggler timeout")
            logger.debug("%s", last_error)
            sim.trace.log_event("straggler", state.label, data={"timeout_s": round(timeout, 3)})
        run.fail(StageFailed(pipeline_id, fragment.index, last_error))

    def _launch(self, run: StageRun, fragment: Fragment, followers: Sequence[Fragment] = ()) -> None:
        run.launched.add(fragment.index)
        self.sim.process(self._supervise(run, fragment, followers))

    def schedule_stage(self, run: StageRun):
        """Start the fragments of one stage once its inputs are complete."""
        sim = self.sim
        try:
            yield sim.all_of([self.runs[pipeline_id].done for pipeline_id in run.stage.pipeline.inputs])
        except SkyriseLabError:
            return
        run.started_at = sim.now
        fragments = run.stage.fragments
        sim.trace.log_event("stage", self.query_id, run.stage.pipeline_id, {"fragments": len(fragments)})
        if not fragments:
            run.finished_at = sim.now
            run.done.succeed()
            return
        if self.faas is None:
            for fragment in fragments:
                self._launch(run, fragment)
            return
        api = self.context.platform.faas.invoke_api
        if len(fragments) >= self.engine.fanout_threshold:
            run.fanout = True
            leaders = math.isqrt(len(fragments) - 1) + 1
            bounds = [len(fragments) * i // leaders for i in range(leaders + 1)]
            for lo, hi in zip(bounds, bounds[1:]):
                self._launch(run, fragments[lo], fragments[lo + 1:hi])
                yield sim.sleep(api)
            return
        for fragment in fragments:
            self._launch(run, fragment)
            yield sim.sleep(api)

    def _main(self):
        sim = self.sim
        if self.pool is not None and sim.now < self.pool.ready_at:
            yield sim.until(self.pool.ready_at)
        start = sim.now
        for condition, delay in self.context.barriers.items():
            self.holds[barrier_key(self.query_id, condition)] = delay
        for stage in self.stage_plan.stages:
            self.runs[stage.pipeline_id] = StageRun(stage, sim.event())
        for run in self.runs.values():
            sim.process(self.schedule_stage(run))
        yield sim.all_of([run.done for run in self.runs.values()])
        end = sim.now
        pending = [event for event in self._outstanding if not event.triggered]
        if pending:
            yield sim.all_of(pending)
        return start, end

    def vm_seconds(self) -> float:
        """Pool time this query pays for: from boot (or submission, on a running pool) to now."""
        return to_s(self.sim.now - self._vm_since)

    def _cost(self) -> CostReport:
        catalog = self.context.catalog
        if self.faas is not None:
            report = billing_meter(self.faas.records[self._first_record:], catalog)
        else:
            report = vm_cost(self.pool.instance_type, self.vm_seconds(), catalog, self.pool.count)
        for meter in self.meters.values():
            report = report.merge(usage_cost(meter, catalog))
        return report

    def metrics(self) -> Dict[str, Any]:
        exchange = self.requests[EXCHANGE_STORE]
        windows = self.shuffle_windows
        shuffle = to_s(max(e for _, e in windows) - min(s for s, _ in windows)) if windows else 0.0
        out: Dict[str, Any] = {
            "stages": [self.runs[stage.pipeline_id].to_dict() for stage in self.stage_plan.stages],
            "fragments": self.stage_plan.total_fragments,
            "exchange": {
                "reads": exchange["get"],
                "writes": exchange["put"],
                "shuffle_s": round(shuffle, 6),
            },
            "requests": {store: dict(sorted(counts.items())) for store, counts in self.requests.items()},
            "fragment_durations_s": sorted(d for run in self.runs.values() for d in run.durations),
        }
        usage: Dict[str, Any] = {"storage": [meter.to_dict() for meter in self.meters.values()]}
        if self.faas is not None:
            records = self.faas.records[self._first_record:]
            out["invocations"] = len(records)
            out["cold_starts"] = sum(1 for record in records if record.cold)
            out["rejections"] = self.rejections
            by_memory: Dict[int, List[int]] = {}
            for record in records:
                by_memory.setdefault(record.memory_mib, []).append(record.billed_ms)
            usage["functions"] = [
                {"memory_mib": memory, "billed_ms": sum(billed), "invocations": len(billed)}
                for memory, billed in sorted(by_memory.items())
            ]
        else:
            out["instances"] = self.pool.count
            usage["vms"] = [
                {"instance_type": self.pool.instance_type, "seconds": round(self.vm_seconds(), 6), "count": self.pool.count}
            ]
        out["usage"] = usage
        return out

    def run(self) -> QueryResponse:
        self._prepare_workers()
        logger.info(
            "query %s on %s: %d stages, %d fragments",
            self.query_id, self.deployment.mode, len(self.stage_plan.stages), self.stage_plan.total_fragments,
        )
        start, end = self.sim.run_process(self._main())
        runtime = to_s(end - start)
        response = QueryResponse(
            self.query_id,
            self.deployment.mode,
            result_prefix(self.query_id),
            runtime,
            self._cost(),
            self.metrics(),
        )
        logger.info("query %s finished in %.3fs, %.4f cents", self.query_id, runtime, response.cost.cents)
        return response


def submit_query(plan: QueryPlan, deployment: Union[str, Deployment], context: QueryContext) -> QueryResponse:
    """Compile and run ``plan``; the result lands under ``results/<query_id>/`` in the data bucket."""
    return QueryRuntime(plan, Deployment.parse(deployment), context).run()


def exchange_object_keys(stage_plan: StagePlan) -> List[str]:
    """Keys every producer fragment of ``stage_plan`` writes, for pre-warming a bucket."""
    return [
        exchange_key(stage_plan.query_id, stage.index, fragment.index)
        for stage in stage_plan.stages
        if not stage.is_sink
        for fragment in stage.fragments
    ]


def result_keys(bucket: Bucket, query_id: str) -> List[str]:
    return bucket.list_keys(result_prefix(query_id))


def read_result(bucket: Bucket, query_id: str, schema: Optional[Schema] = None) -> Batch:
    """All result files of ``query_id`` concatenated in key order."""
    keys = result_keys(bucket, query_id)
    if not keys:
        raise ExecutionFailed(f"no result files under {result_prefix(query_id)} in {bucket.name}")
    batches = []
    for key in keys:
        data = bucket.get_object(key)
        schema = schema or read_footer(data).schema
        batches.extend(read_chunks(data).batches)
    return concat_batches(schema, batches)
