"""Real-local execution: fragment programs on a thread pool over local files.

Each fragment runs sequentially on one pool thread; fragments share nothing
but the directory standing in for storage. Timing requests are ignored.
"""

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Set, Tuple, Union

from skyrise_lab.dataform import SCHEMAS, Batch, TableMeta, concat_batches, describe, read_chunks, read_footer
from skyrise_lab.engine.compiler import DEFAULT_BUDGET, StagePlan, compile_distributed
from skyrise_lab.engine.plan import QueryPlan
from skyrise_lab.engine.worker import (
    DATA_STORE,
    Compute,
    FragmentOutput,
    FragmentTask,
    ReadMany,
    Wait,
    WorkerSettings,
    Write,
    fragment_program,
)
from skyrise_lab.errors import ExecutionFailed, IoError
from skyrise_lab.naming import barrier_key, result_prefix

logger = logging.getLogger(__name__)


class LocalStore:
    """Objects as files under ``root/<store>/<key>``."""

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)

    def path(self, store: str, key: str) -> Path:
        return self.root / store / key

    def get(self, store: str, key: str, start: int = 0, end: Optional[int] = None) -> bytes:
        path = self.path(store, key)
        try:
            with open(path, "rb") as handle:
                handle.seek(start)
                return handle.read() if end is None else handle.read(end - start)
        except OSError as exc:
            raise IoError(f"cannot read {path}: {exc}") from exc

    def put(self, store: str, key: str, data: bytes) -> None:
        path = self.path(store, key)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(data)
        except OSError as exc:
            raise IoError(f"cannot write {path}: {exc}") from exc

    def list_keys(self, store: str, prefix: str = "") -> List[str]:
        base = self.root / store
        if not base.exists():
            return []
        keys = (path.relative_to(base).as_posix() for path in base.rglob("*") if path.is_file())
        return sorted(key for key in keys if key.startswith(prefix))

    def load_table(self, table: str, files: Iterable[Tuple[str, bytes]], store: str = DATA_STORE) -> TableMeta:
        """Store generated ``(key, bytes)`` files and describe them."""
        metas = []
        schema = None
        for key, data in files:
            self.put(store, key, data)
            meta = describe(key, data)
            schema = schema or read_footer(data).schema
            metas.append(meta)
        return TableMeta(table, schema or SCHEMAS[table], metas)


@dataclass
class BarrierBoard:
    """Shared conditions workers block on; unknown conditions are open."""

    held: Set[str] = field(default_factory=set)
    _events: Dict[str, threading.Event] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def _event(self, key: str) -> threading.Event:
        with self._lock:
            event = self._events.get(key)
            if event is None:
                event = self._events[key] = threading.Event()
                if key not in self.held:
                    event.set()
            return event

    def release(self, key: str) -> None:
        self.held.discard(key)
        self._event(key).set()

    def wait(self, key: str, timeout: Optional[float] = None) -> bool:
        return self._event(key).wait(timeout)


class LocalRun:
    def __init__(
        self,
        plan: QueryPlan,
        tables: Mapping[str, TableMeta],
        store: LocalStore,
        workers: int = 4,
        budget: int = DEFAULT_BUDGET,
        exchange_partitions: Optional[Mapping[str, int]] = None,
        held: Iterable[str] = (),
        settings: Optional[WorkerSettings] = None,
        barrier_timeout: Optional[float] = 60.0,
    ):
        self.stage_plan: StagePlan = compile_distributed(plan, tables, budget, exchange_partitions=exchange_partitions)
        self.query_id = plan.query_id
        self.store = store
        self.workers = workers
        self.settings = settings or WorkerSettings()
        self.barriers = BarrierBoard({barrier_key(plan.query_id, condition) for condition in held})
        self.barrier_timeout = barrier_timeout
        self.outputs: Dict[str, List[FragmentOutput]] = {}

    def release_barrier(self, condition: str) -> None:
        self.barriers.release(barrier_key(self.query_id, condition))

    def _serve(self, request):
        if isinstance(request, ReadMany):
            return [self.store.get(read.store, read.key, read.start, read.end) for read in request.reads]
        if isinstance(request, Write):
            self.store.put(request.store, request.key, request.data)
            return None
        if isinstance(request, Compute):
            return None
        if isinstance(request, Wait):
            if not self.barriers.wait(request.condition, self.barrier_timeout):
                raise ExecutionFailed(f"barrier {request.condition} was not released in time")
            return None
        raise TypeError(f"unknown worker request {request!r}")

    def _run_fragment(self, task: FragmentTask) -> FragmentOutput:
        program = fragment_program(task)
        reply = None
        while True:
            try:
                request = program.send(reply)
            except StopIteration as stop:
                return stop.value
            reply = self._serve(request)

    def run(self) -> str:
        for level in self.stage_plan.levels():
            for stage in level:
                inputs = {pid: [o.exchange for o in self.outputs[pid]] for pid in stage.pipeline.inputs}
                upstream = {pid: self.stage_plan.stage(pid).schema for pid in stage.pipeline.inputs}
                tasks = [
                    FragmentTask(
                        self.query_id, stage, fragment, self.stage_plan.tables, inputs, upstream,
                        consumers=len(stage.fragments), settings=self.settings,
                    )
                    for fragment in stage.fragments
                ]
                with ThreadPoolExecutor(max_workers=self.workers) as pool:
                    self.outputs[stage.pipeline_id] = list(pool.map(self._run_fragment, tasks))
                logger.debug("%s: local stage %s done (%d fragments)", self.query_id, stage.pipeline_id, len(tasks))
        return result_prefix(self.query_id)


def run_local(
    plan: QueryPlan,
    tables: Mapping[str, TableMeta],
    store: LocalStore,
    workers: int = 4,
    **options,
) -> Batch:
    """Run ``plan`` on threads against ``store`` and return its result rows."""
    LocalRun(plan, tables, store, workers, **options).run()
    return read_local_result(store, plan.query_id)


def read_local_result(store: LocalStore, query_id: str) -> Batch:
    keys = store.list_keys(DATA_STORE, result_prefix(query_id))
    if not keys:
        raise ExecutionFailed(f"no local result files for '{query_id}'")
    batches = []
    schema = None
    for key in keys:
        data = store.get(DATA_STORE, key)
        schema = schema or read_footer(data).schema
        batches.extend(read_chunks(data).batches)
    return concat_batches(schema, batches)
