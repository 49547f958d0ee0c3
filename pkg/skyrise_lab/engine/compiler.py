"""Compile a query plan into stages of data-parallel fragments.

Scan pipelines are fragmented first-fit in file order: a fragment takes files
while their bytes stay within the worker input budget, which defaults to a
function's full network burst budget. A file larger than the budget gets a
fragment of its own, flagged over budget. Exchange-driven pipelines get one
fragment per partition of their input.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional

from skyrise_lab.dataform import FileMeta, Schema, TableMeta
from skyrise_lab.engine import expressions as ex
from skyrise_lab.engine.operators import pipeline_schema
from skyrise_lab.engine.plan import Operator, Pipeline, QueryPlan
from skyrise_lab.errors import MetaMissing, PlanInvalid, ValidationError
from skyrise_lab.netsim import lambda_default_spec
from skyrise_lab.units import MiB

logger = logging.getLogger(__name__)

BUDGET_BASES = ("file", "projected")
DEFAULT_BROADCAST_LIMIT = 64 * MiB


def default_budget() -> int:
    """Burst budget of a fresh function link: rechargeable plus one-off tokens."""
    return int(lambda_default_spec("in").initial_budget)


DEFAULT_BUDGET = default_budget()


@dataclass
class Fragment:
    index: int
    files: List[FileMeta] = field(default_factory=list)
    partition: Optional[int] = None
    input_bytes: int = 0
    over_budget: bool = False

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"index": self.index, "input_bytes": self.input_bytes}
        if self.files:
            out["files"] = [f.key for f in self.files]
        if self.partition is not None:
            out["partition"] = self.partition
        if self.over_budget:
            out["over_budget"] = True
        return out


@dataclass
class Stage:
    index: int
    pipeline: Pipeline
    level: int
    fragments: List[Fragment]
    schema: Schema
    output_partitions: Optional[int] = None
    inputs: Dict[str, int] = field(default_factory=dict)

    @property
    def pipeline_id(self) -> str:
        return self.pipeline.id

    @property
    def is_sink(self) -> bool:
        return self.output_partitions is None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "index": self.index,
            "pipeline": self.pipeline.id,
            "level": self.level,
            "fragments": len(self.fragments),
            "output_partitions": self.output_partitions,
            "over_budget": sum(1 for f in self.fragments if f.over_budget),
        }


@dataclass
class StagePlan:
    query_id: str
    stages: List[Stage]
    tables: Dict[str, TableMeta]
    budget: int
    basis: str = "file"

    def stage(self, pipeline_id: str) -> Stage:
        for stage in self.stages:
            if stage.pipeline.id == pipeline_id:
                return stage
        raise KeyError(pipeline_id)

    @property
    def sink(self) -> Stage:
        return next(stage for stage in self.stages if stage.is_sink)

    def levels(self) -> List[List[Stage]]:
        depth = max((stage.level for stage in self.stages), default=-1)
        return [[stage for stage in self.stages if stage.level == level] for level in range(depth + 1)]

    @property
    def total_fragments(self) -> int:
        return sum(len(stage.fragments) for stage in self.stages)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "query_id": self.query_id,
            "budget": self.budget,
            "basis": self.basis,
            "stages": [stage.to_dict() for stage in self.stages],
        }


def _scan_columns(op: Operator) -> List[str]:
    names = list(op["columns"])
    if "predicate" in op.params:
        names += sorted(ex.columns(ex.parse(op["predicate"])) - set(names))
    return names


def _file_bytes(meta: FileMeta, op: Operator, basis: str) -> int:
    if basis == "projected":
        return meta.projected_bytes(_scan_columns(op))
    return meta.sim_size


def first_fit(files: List[FileMeta], budget: int, sizes: List[int]) -> List[Fragment]:
    """Consecutive files per fragment while their bytes fit ``budget``."""
    fragments: List[Fragment] = []
    current: Optional[Fragment] = None
    for meta, size in zip(files, sizes):
        if current is not None and current.input_bytes + size <= budget:
            current.files.append(meta)
            current.input_bytes += size
            continue
        current = Fragment(len(fragments), [meta], input_bytes=size, over_budget=size > budget)
        fragments.append(current)
    return fragments


def compile_distributed(
    plan: QueryPlan,
    meta: Mapping[str, TableMeta],
    budget: int = DEFAULT_BUDGET,
    basis: str = "file",
    exchange_partitions: Optional[Mapping[str, int]] = None,
    broadcast_limit: int = DEFAULT_BROADCAST_LIMIT,
) -> StagePlan:
    """Fragment every pipeline of ``plan`` over the tables described by ``meta``.

    ``exchange_partitions`` overrides the partition count of named producer
    pipelines; by default an exchange has as many partitions as its largest
    producer has fragments.
    """
    if budget <= 0:
        raise ValidationError(f"worker input budget must be positive, got {budget}")
    if basis not in BUDGET_BASES:
        raise ValidationError(f"budget basis must be one of {BUDGET_BASES}, got '{basis}'")
    plan.validate()
    missing = [table for table in plan.tables() if table not in meta]
    if missing:
        raise MetaMissing(f"query '{plan.query_id}' scans tables without metadata: {missing}")
    overrides = dict(exchange_partitions or {})
    table_schemas = {name: table.schema for name, table in meta.items()}
    levels = plan.levels()
    order = plan.topological_order()

    schemas: Dict[str, Schema] = {}
    for pipeline in order:
        schemas[pipeline.id], _ = pipeline_schema(pipeline, table_schemas, schemas)

    fragments: Dict[str, List[Fragment]] = {}
    partitions: Dict[str, int] = {}
    for pipeline in order:
        for op in pipeline.operators:
            if op.kind == "scan" and op.get("broadcast", False):
                size = meta[op["table"]].sim_bytes
                if size > broadcast_limit:
                    raise PlanInvalid(
                        f"pipeline '{pipeline.id}' broadcasts '{op['table']}' of {size} bytes, "
                        f"above the {broadcast_limit} byte limit"
                    )
        source = pipeline.source()
        if source.kind == "scan":
            files = list(meta[source["table"]].files)
            sizes = [_file_bytes(f, source, basis) for f in files]
            fragments[pipeline.id] = first_fit(files, budget, sizes)
            if not files and pipeline.is_sink:
                # an empty sink still writes its (empty) result
                fragments[pipeline.id] = [Fragment(0)]
            continue
        count = _partition_count(plan, pipeline, fragments, overrides)
        for producer in pipeline.inputs:
            partitions[producer] = count
        fragments[pipeline.id] = [Fragment(k, partition=k) for k in range(count)]

    stages = []
    index_of = {pipeline.id: index for index, pipeline in enumerate(order)}
    for index, pipeline in enumerate(order):
        stage = Stage(
            index=index,
            pipeline=pipeline,
            level=levels[pipeline.id],
            fragments=fragments[pipeline.id],
            schema=schemas[pipeline.id],
            output_partitions=None if pipeline.is_sink else partitions.get(pipeline.id, 1),
            inputs={dep: index_of[dep] for dep in pipeline.inputs},
        )
        stages.append(stage)
        logger.debug(
            "%s: stage %d '%s' %d fragments, %s output partitions",
            plan.query_id, index, pipeline.id, len(stage.fragments), stage.output_partitions,
        )
    return StagePlan(plan.query_id, stages, dict(meta), budget, basis)


def _partition_count(
    plan: QueryPlan,
    consumer: Pipeline,
    fragments: Mapping[str, List[Fragment]],
    overrides: Mapping[str, int],
) -> int:
    counts = set()
    for producer_id in consumer.inputs:
        if producer_id in overrides:
            counts.add(int(overrides[producer_id]))
            continue
        requested = plan.pipeline(producer_id).output.partitions
        if requested != "auto":
            counts.add(int(requested))
    if len(counts) > 1:
        raise PlanInvalid(f"inputs of pipeline '{consumer.id}' disagree on partition counts {sorted(counts)}")
    if counts:
        count = counts.pop()
    else:
        count = max([len(fragments[producer]) for producer in consumer.inputs] + [1])
    if count < 1:
        raise PlanInvalid(f"pipeline '{consumer.id}' needs at least one input partition")
    for producer_id in consumer.inputs:
        output = plan.pipeline(producer_id).output
        if count > 1 and not output.columns:
            raise PlanInvalid(f"pipeline '{producer_id}' has no hash columns for {count} partitions")
    return count
