"""Single-threaded reference interpreter.

Evaluates a plan row at a time over plain Python values with no
fragmenting, pruning or partitioning: exchanges pass every row through.
Float sums use ``math.fsum``, which gives the correctly rounded result the
distributed aggregates reproduce.
"""

import logging
import math
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from skyrise_lab.dataform import ColumnType, Schema, TableMeta, read_chunks
from skyrise_lab.engine import expressions as ex
from skyrise_lab.engine.operators import AggregateSpec, aggregate_specs, pipeline_schema, projections
from skyrise_lab.engine.plan import Operator, QueryPlan
from skyrise_lab.engine.udfs import get_udf

logger = logging.getLogger(__name__)

Row = Dict[str, Any]
Fetch = Callable[[str], bytes]


class _Partial:
    """Aggregate state carried between a partial and a final aggregate."""

    __slots__ = ("fn", "values", "count")

    def __init__(self, fn: str, values: List[Any], count: int):
        self.fn = fn
        self.values = values
        self.count = count


def _total(values: Sequence[Any]) -> Any:
    if any(isinstance(value, float) for value in values):
        return math.fsum(values)
    return sum(values)


def _finish(fn: str, values: List[Any], count: int, target: ColumnType) -> Any:
    if fn == "count":
        return count
    if fn == "min":
        return min(values)
    if fn == "max":
        return max(values)
    total = _total(values)
    if fn == "avg":
        return total / count
    if target is ColumnType.INT64:
        return int(total)
    return float(total)


def _groups(rows: Sequence[Row], keys: Sequence[str]) -> Dict[Tuple, List[Row]]:
    groups: Dict[Tuple, List[Row]] = {}
    for row in rows:
        groups.setdefault(tuple(row[key] for key in keys), []).append(row)
    return groups


def _partial(rows: Sequence[Row], keys: Sequence[str], specs: Sequence[AggregateSpec]) -> List[Row]:
    out = []
    for key, members in _groups(rows, keys).items():
        row: Row = dict(zip(keys, key))
        for spec in specs:
            values = [] if spec.fn == "count" else [ex.evaluate_row(spec.expr, member) for member in members]
            if values and isinstance(values[0], bool):
                values = [int(value) for value in values]
            row[spec.name] = _Partial(spec.fn, values, len(members))
        out.append(row)
    return out


def _final(rows: Sequence[Row], keys: Sequence[str], specs: Sequence[AggregateSpec], schema: Schema) -> List[Row]:
    out = []
    for key, members in _groups(rows, keys).items():
        row: Row = dict(zip(keys, key))
        for spec in specs:
            states = [member[spec.name] for member in members]
            values = [value for state in states for value in state.values]
            count = sum(state.count for state in states)
            row[spec.name] = _finish(spec.fn, values, count, schema.column(spec.name).type)
        out.append(row)
    return out


def _sort(rows: List[Row], order: Sequence[Mapping[str, Any]], limit: Optional[int]) -> List[Row]:
    rows = list(rows)
    for key in reversed(order):
        rows.sort(key=lambda row: row[key["col"]], reverse=bool(key.get("desc", False)))
    return rows if limit is None else rows[:limit]


def _scan(op: Operator, table: TableMeta, fetch: Fetch) -> List[Row]:
    predicate = ex.parse(op["predicate"]) if "predicate" in op.params else None
    rows = []
    for meta in table.files:
        for batch in read_chunks(fetch(meta.key)).batches:
            for row in ex.python_rows(batch):
                if predicate is None or ex.evaluate_row(predicate, row):
                    rows.append({name: row[name] for name in op["columns"]})
    return rows


def run_reference(plan: QueryPlan, tables: Mapping[str, TableMeta], fetch: Fetch) -> Tuple[Schema, List[Tuple]]:
    """Result schema and rows of ``plan``; ``fetch(key)`` returns whole table files."""
    plan.validate()
    table_schemas = {name: table.schema for name, table in tables.items()}
    schemas: Dict[str, Schema] = {}
    outputs: Dict[str, List[Row]] = {}
    for pipeline in plan.topological_order():
        schema, after = pipeline_schema(pipeline, table_schemas, schemas)
        schemas[pipeline.id] = schema
        stream: List[Row] = []
        built: Dict[Tuple, List[Row]] = {}
        for position, op in enumerate(pipeline.operators):
            kind = op.kind
            if kind == "scan":
                stream = _scan(op, tables[op["table"]], fetch)
            elif kind == "exchange_read":
                stream = list(outputs[op["input"]])
            elif kind == "filter":
                predicate = ex.parse(op["predicate"])
                stream = [row for row in stream if ex.evaluate_row(predicate, row)]
            elif kind == "project":
                target = after[position]
                stream = [
                    {name: ex.row_value(target.column(name).type, ex.evaluate_row(expr, row)) for name, expr in projections(op)}
                    for row in stream
                ]
            elif kind == "hash_aggregate":
                specs = aggregate_specs(op)
                if op["mode"] == "partial":
                    stream = _partial(stream, op["keys"], specs)
                else:
                    stream = _final(stream, op["keys"], specs, after[position])
            elif kind == "hash_join_build":
                built = _groups(stream, op["keys"])
                stream = []
            elif kind == "hash_join_probe":
                stream = [
                    {**row, **match}
                    for row in stream
                    for match in built.get(tuple(row[key] for key in op["keys"]), ())
                ]
            elif kind == "sort_limit":
                stream = _sort(stream, op["order"], op.get("limit"))
            elif kind == "udf_map":
                stream = get_udf(op["udf"]).apply_rows(stream, op.params)
        outputs[pipeline.id] = stream
        logger.debug("reference %s/%s: %d rows", plan.query_id, pipeline.id, len(stream))
    sink = plan.sink
    schema = schemas[sink.id]
    return schema, [tuple(row[name] for name in schema.names) for row in outputs[sink.id]]
