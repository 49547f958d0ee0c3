"""Physical query plans: pipelines of operators and their dependencies.

A plan document is UTF-8 JSON::

    {"query_id": "q6",
     "pipelines": [
        {"id": "scan", "inputs": [],
         "operators": [{"kind": "scan", "table": "lineitem", ...},
                       {"kind": "exchange_write", "hash": [], "partitions": 1}]},
        {"id": "final", "inputs": ["scan"],
         "operators": [{"kind": "exchange_read", "input": "scan"}, ...]}]}

Every pipeline but the sink ends in ``exchange_write``; the sink has none and
its output becomes the query result. docs/FORMAT.md lists the parameters of
each operator kind.
"""

import copy
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Union

from skyrise_lab.errors import PlanInvalid, UnknownPipeline

logger = logging.getLogger(__name__)

OPERATOR_KINDS = (
    "scan",
    "filter",
    "project",
    "hash_aggregate",
    "hash_join_build",
    "hash_join_probe",
    "exchange_write",
    "exchange_read",
    "sort_limit",
    "udf_map",
    "barrier",
)
AGGREGATE_FUNCTIONS = ("sum", "count", "min", "max", "avg")

_REQUIRED = {
    "scan": ("table", "columns"),
    "filter": ("predicate",),
    "project": ("expressions",),
    "hash_aggregate": ("keys", "aggregates", "mode"),
    "hash_join_build": ("keys",),
    "hash_join_probe": ("keys",),
    "exchange_write": ("hash", "partitions"),
    "exchange_read": ("input",),
    "sort_limit": ("order",),
    "udf_map": ("udf",),
    "barrier": ("condition",),
}


@dataclass(frozen=True)
class Operator:
    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in OPERATOR_KINDS:
            raise PlanInvalid(f"unknown operator kind '{self.kind}'")
        missing = [name for name in _REQUIRED[self.kind] if name not in self.params]
        if missing:
            raise PlanInvalid(f"{self.kind} operator lacks {missing}")

    def __getitem__(self, name: str) -> Any:
        return self.params[name]

    def get(self, name: str, default: Any = None) -> Any:
        return self.params.get(name, default)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, **copy.deepcopy(dict(self.params))}

    @classmethod
    def from_dict(cls, record: Mapping[str, Any]) -> "Operator":
        if "kind" not in record:
            raise PlanInvalid(f"operator without kind: {dict(record)}")
        params = {key: value for key, value in record.items() if key != "kind"}
        return cls(record["kind"], params)


@dataclass(frozen=True)
class Partitioning:
    """Output partitioning of a pipeline: hash columns and partition count."""

    columns: tuple = ()
    partitions: Union[int, str] = "auto"

    def __post_init__(self) -> None:
        if self.partitions != "auto" and (not isinstance(self.partitions, int) or self.partitions < 1):
            raise PlanInvalid(f"partitions must be a positive integer or 'auto', got {self.partitions!r}")
        if not self.columns and self.partitions != 1:
            raise PlanInvalid("more than one partition needs hash columns")


@dataclass
class Pipeline:
    id: str
    operators: List[Operator]
    inputs: List[str] = field(default_factory=list)

    @property
    def output(self) -> Optional[Partitioning]:
        """Partitioning of the exchange output; ``None`` for the sink."""
        last = self.operators[-1] if self.operators else None
        if last is None or last.kind != "exchange_write":
            return None
        return Partitioning(tuple(last["hash"]), last["partitions"])

    @property
    def is_sink(self) -> bool:
        return self.output is None

    def source(self) -> Optional[Operator]:
        """The operator that decides the pipeline's fragmentation."""
        for op in self.operators:
            if op.kind == "scan" and not op.get("broadcast", False):
                return op
            if op.kind == "exchange_read":
                return op
        return None

    def to_dict(self) -> Dict[str, Any]:
        return {"id": self.id, "inputs": list(self.inputs), "operators": [op.to_dict() for op in self.operators]}


@dataclass
class QueryPlan:
    query_id: str
    pipelines: List[Pipeline]

    def pipeline(self, pipeline_id: str) -> Pipeline:
        for pipeline in self.pipelines:
            if pipeline.id == pipeline_id:
                return pipeline
        raise UnknownPipeline(f"plan '{self.query_id}' has no pipeline '{pipeline_id}'")

    @property
    def sink(self) -> Pipeline:
        sinks = [p for p in self.pipelines if p.is_sink]
        if len(sinks) != 1:
            raise PlanInvalid(f"plan '{self.query_id}' needs exactly one sink pipeline, found {len(sinks)}")
        return sinks[0]

    def consumers(self, pipeline_id: str) -> List[Pipeline]:
        return [p for p in self.pipelines if pipeline_id in p.inputs]

    def topological_order(self) -> List[Pipeline]:
        """Pipelines with every input before its consumers; ties keep document order."""
        done: List[str] = []
        pending = list(self.pipelines)
        while pending:
            ready = [p for p in pending if all(dep in done for dep in p.inputs)]
            if not ready:
                raise PlanInvalid(f"plan '{self.query_id}' has a dependency cycle among {[p.id for p in pending]}")
            for pipeline in ready:
                done.append(pipeline.id)
                pending.remove(pipeline)
        return [self.pipeline(pipeline_id) for pipeline_id in done]

    def levels(self) -> Dict[str, int]:
        """Depth of each pipeline; pipelines of equal depth may run together."""
        depth: Dict[str, int] = {}
        for pipeline in self.topological_order():
            depth[pipeline.id] = max((depth[dep] + 1 for dep in pipeline.inputs), default=0)
        return depth

    def tables(self) -> List[str]:
        return sorted({op["table"] for p in self.pipelines for op in p.operators if op.kind == "scan"})

    def validate(self) -> "QueryPlan":
        if not self.query_id:
            raise PlanInvalid("plan needs a query_id")
        if not self.pipelines:
            raise PlanInvalid(f"plan '{self.query_id}' has no pipelines")
        ids = [p.id for p in self.pipelines]
        if len(set(ids)) != len(ids):
            raise PlanInvalid(f"plan '{self.query_id}' repeats pipeline ids: {ids}")
        for pipeline in self.pipelines:
            for dep in pipeline.inputs:
                if dep not in ids:
                    raise PlanInvalid(f"pipeline '{pipeline.id}' depends on unknown pipeline '{dep}'")
                if self.pipeline(dep).is_sink:
                    raise PlanInvalid(f"pipeline '{pipeline.id}' reads the sink '{dep}'")
            _validate_operators(pipeline)
        sinks = [p.id for p in self.pipelines if p.is_sink]
        if len(sinks) != 1:
            raise PlanInvalid(f"plan '{self.query_id}' needs exactly one sink pipeline, found {sinks}")
        self.topological_order()
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {"query_id": self.query_id, "pipelines": [p.to_dict() for p in self.pipelines]}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _validate_operators(pipeline: Pipeline) -> None:
    ops = pipeline.operators
    if not ops:
        raise PlanInvalid(f"pipeline '{pipeline.id}' has no operators")
    if pipeline.source() is None:
        raise PlanInvalid(f"pipeline '{pipeline.id}' needs a partitioned scan or an exchange_read")
    for index, op in enumerate(ops):
        if op.kind == "exchange_write" and index != len(ops) - 1:
            raise PlanInvalid(f"pipeline '{pipeline.id}': exchange_write must be the last operator")
        if op.kind == "exchange_read" and op["input"] not in pipeline.inputs:
            raise PlanInvalid(f"pipeline '{pipeline.id}' reads '{op['input']}' which is not among its inputs")
        if op.kind == "hash_aggregate":
            if op["mode"] not in ("partial", "final"):
                raise PlanInvalid(f"pipeline '{pipeline.id}': aggregate mode must be partial or final")
            for agg in op["aggregates"]:
                if agg.get("fn") not in AGGREGATE_FUNCTIONS:
                    raise PlanInvalid(f"pipeline '{pipeline.id}': unknown aggregate {agg.get('fn')!r}")
        if op.kind == "hash_join_probe" and not any(o.kind == "hash_join_build" for o in ops[:index]):
            raise PlanInvalid(f"pipeline '{pipeline.id}': hash_join_probe without a preceding hash_join_build")
    read_inputs = {op["input"] for op in ops if op.kind == "exchange_read"}
    unread = [dep for dep in pipeline.inputs if dep not in read_inputs]
    if unread:
        raise PlanInvalid(f"pipeline '{pipeline.id}' never reads inputs {unread}")


def plan_from_dict(document: Mapping[str, Any]) -> QueryPlan:
    try:
        pipelines = [
            Pipeline(
                str(record["id"]),
                [Operator.from_dict(op) for op in record["operators"]],
                [str(dep) for dep in record.get("inputs", [])],
            )
            for record in document["pipelines"]
        ]
        plan = QueryPlan(str(document["query_id"]), pipelines)
    except (KeyError, TypeError) as exc:
        raise PlanInvalid(f"malformed plan document: missing {exc}") from exc
    return plan.validate()


def load_plan(path: Union[str, Path]) -> QueryPlan:
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise PlanInvalid(f"plan file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise PlanInvalid(f"{path}: {exc}") from exc
    plan = plan_from_dict(document)
    logger.debug("loaded plan %s from %s: %d pipelines", plan.query_id, path, len(plan.pipelines))
    return plan


def inject_barrier(plan: QueryPlan, pipeline_id: str, condition: str) -> QueryPlan:
    """Copy of ``plan`` whose ``pipeline_id`` waits for ``condition`` before it starts.

    Workers poll the shared queue for the condition; operators and results are
    otherwise unchanged.
    """
    target = plan.pipeline(pipeline_id)
    pipelines = []
    for pipeline in plan.pipelines:
        operators = list(pipeline.operators)
        if pipeline.id == target.id:
            operators = [Operator("barrier", {"condition": condition})] + operators
        pipelines.append(Pipeline(pipeline.id, operators, list(pipeline.inputs)))
    return QueryPlan(plan.query_id, pipelines)


def barriers(pipeline: Pipeline) -> Iterator[str]:
    for op in pipeline.operators:
        if op.kind == "barrier":
            yield op["condition"]


def iter_operators(plan: QueryPlan, kinds: Sequence[str]) -> Iterator[Operator]:
    for pipeline in plan.pipelines:
        for op in pipeline.operators:
            if op.kind in kinds:
                yield op
