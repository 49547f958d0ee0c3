"""Vectorized operators over ``Batch`` streams.

Aggregation keeps float sums exact: a partial sum is carried as an integer
``N`` and exponent ``E`` with ``sum = N * 2**E`` and rounded to a float once,
in the final aggregate. Merging partials in any order therefore yields the
correctly rounded group sum, the same value ``math.fsum`` gives over all rows.
"""

import logging
import zlib
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from skyrise_lab.dataform import Batch, Column, ColumnType, Schema, concat_batches
from skyrise_lab.engine import expressions as ex
from skyrise_lab.engine.plan import Operator, Pipeline
from skyrise_lab.engine.udfs import get_udf
from skyrise_lab.errors import PlanInvalid, SchemaMismatch, ValidationError

logger = logging.getLogger(__name__)

AVG_COUNT_SUFFIX = "__n"
_LOW_BITS = 26
_LOW_MASK = (1 << _LOW_BITS) - 1


# exact sums


def exact_float_sums(values: np.ndarray, codes: np.ndarray, groups: int) -> List[Tuple[int, int]]:
    """Per-group exact sums of float64 ``values`` as ``(N, E)`` pairs."""
    mantissa, exponent = np.frexp(np.asarray(values, dtype=np.float64))
    ints = (mantissa * 2.0 ** 53).astype(np.int64)
    exps = exponent.astype(np.int64) - 53
    keys = np.asarray(codes, dtype=np.int64) * 4096 + (exps + 2100)
    unique, inverse = np.unique(keys, return_inverse=True)
    high = np.zeros(len(unique), dtype=np.int64)
    low = np.zeros(len(unique), dtype=np.int64)
    np.add.at(high, inverse, ints >> _LOW_BITS)
    np.add.at(low, inverse, ints & _LOW_MASK)
    parts: List[List[Tuple[int, int]]] = [[] for _ in range(groups)]
    for key, hi, lo in zip(unique.tolist(), high.tolist(), low.tolist()):
        code, exp = divmod(key, 4096)
        parts[code].append(((hi << _LOW_BITS) + lo, exp - 2100))
    return [combine_exact(group) for group in parts]


def combine_exact(parts: Sequence[Tuple[int, int]]) -> Tuple[int, int]:
    if not parts:
        return 0, 0
    base = min(exp for _, exp in parts)
    return sum(n << (exp - base) for n, exp in parts), base


def exact_to_float(state: Tuple[int, int]) -> float:
    n, exp = state
    if exp >= 0:
        return float(n << exp)
    return n / (1 << -exp)


def encode_sum(state: Any) -> str:
    if isinstance(state, tuple):
        return f"f:{state[0]}:{state[1]}"
    return f"i:{state}"


def decode_sum(text: str) -> Any:
    kind, _, rest = text.partition(":")
    if kind == "i":
        return int(rest)
    n, _, exp = rest.partition(":")
    return int(n), int(exp)


def merge_sums(states: Sequence[Any]) -> Any:
    if states and isinstance(states[0], tuple):
        return combine_exact(states)
    return sum(states)


def sum_value(state: Any, column_type: ColumnType) -> Any:
    if isinstance(state, tuple):
        value = exact_to_float(state)
        return int(value) if column_type is ColumnType.INT64 else value
    return float(state) if column_type is ColumnType.FLOAT64 else int(state)


def avg_value(state: Any, count: int) -> float:
    if isinstance(state, tuple):
        return exact_to_float(state) / count
    return state / count


# grouping


def group_codes(batch: Batch, keys: Sequence[str]) -> Tuple[np.ndarray, List[int]]:
    """Group code per row and the first row of each group, in first-seen order."""
    if not keys:
        return np.zeros(batch.num_rows, dtype=np.int64), [0] if batch.num_rows else []
    tuples = list(zip(*[batch.column(key).tolist() for key in keys]))
    seen: Dict[Tuple, int] = {}
    codes = np.empty(len(tuples), dtype=np.int64)
    firsts: List[int] = []
    for index, key in enumerate(tuples):
        code = seen.get(key)
        if code is None:
            code = seen[key] = len(firsts)
            firsts.append(index)
        codes[index] = code
    return codes, firsts


def _extreme(values: np.ndarray, codes: np.ndarray, groups: int, fn: str) -> np.ndarray:
    if values.dtype == object:
        best: List[Any] = [None] * groups
        pick = min if fn == "min" else max
        for code, value in zip(codes.tolist(), values.tolist()):
            best[code] = value if best[code] is None else pick(best[code], value)
        return np.array(best, dtype=object)
    order = np.argsort(codes, kind="stable")
    starts = np.searchsorted(codes[order], np.arange(groups))
    ufunc = np.minimum if fn == "min" else np.maximum
    return ufunc.reduceat(values[order], starts)


def _group_sums(values: np.ndarray, codes: np.ndarray, groups: int) -> List[Any]:
    if np.issubdtype(values.dtype, np.floating):
        return exact_float_sums(values, codes, groups)
    totals = np.zeros(groups, dtype=np.int64)
    np.add.at(totals, codes, values.astype(np.int64))
    return totals.tolist()


# aggregate operator


@dataclass(frozen=True)
class AggregateSpec:
    name: str
    fn: str
    expr: Optional[ex.Expr] = None
    type: Optional[ColumnType] = None

    @classmethod
    def from_dict(cls, record: Mapping[str, Any]) -> "AggregateSpec":
        expr = ex.parse(record["expr"]) if "expr" in record else None
        kind = ColumnType(record["type"]) if "type" in record else None
        return cls(record["name"], record["fn"], expr, kind)


def aggregate_specs(op: Operator) -> List[AggregateSpec]:
    try:
        return [AggregateSpec.from_dict(record) for record in op["aggregates"]]
    except (KeyError, ValueError) as exc:
        raise PlanInvalid(f"bad aggregate entry: {exc}") from exc


def partial_schema(keys: Sequence[Column], specs: Sequence[AggregateSpec], input_schema: Schema) -> Schema:
    columns = list(keys)
    for spec in specs:
        if spec.fn == "count":
            columns.append(Column(spec.name, ColumnType.INT64))
            continue
        if spec.expr is None:
            raise PlanInvalid(f"aggregate '{spec.name}' ({spec.fn}) needs an expression")
        kind = ex.storage_type(ex.result_type(spec.expr, input_schema))
        if spec.fn in ("sum", "avg"):
            if kind not in ex.NUMERIC:
                raise PlanInvalid(f"aggregate '{spec.name}' sums non-numeric {kind.value}")
            columns.append(Column(spec.name, ColumnType.UTF8))
            if spec.fn == "avg":
                columns.append(Column(spec.name + AVG_COUNT_SUFFIX, ColumnType.INT64))
        else:
            columns.append(Column(spec.name, kind))
    return _schema(columns)


def final_schema(keys: Sequence[Column], specs: Sequence[AggregateSpec]) -> Schema:
    columns = list(keys)
    for spec in specs:
        if spec.fn == "count":
            kind = ColumnType.INT64
        elif spec.fn == "avg":
            kind = ColumnType.FLOAT64
        else:
            kind = spec.type or ColumnType.FLOAT64
            if spec.fn in ("min", "max") and spec.type is None:
                raise PlanInvalid(f"final {spec.fn} '{spec.name}' needs a 'type'")
        columns.append(Column(spec.name, kind))
    return _schema(columns)


def _schema(columns: Sequence[Column]) -> Schema:
    try:
        return Schema(tuple(columns))
    except ValidationError as exc:
        raise PlanInvalid(str(exc)) from exc


def partial_aggregate(batch: Batch, keys: Sequence[str], specs: Sequence[AggregateSpec], schema: Schema) -> Batch:
    """Group ``batch`` and emit one state row per group."""
    codes, firsts = group_codes(batch, keys)
    groups = len(firsts)
    if groups == 0:
        return Batch.empty(schema)
    first = np.array(firsts, dtype=np.int64)
    out: Dict[str, Any] = {key: batch.column(key)[first] for key in keys}
    counts = np.bincount(codes, minlength=groups).astype(np.int64)
    for spec in specs:
        if spec.fn == "count":
            out[spec.name] = counts
            continue
        values = np.asarray(ex.evaluate(spec.expr, batch))
        if spec.fn in ("sum", "avg"):
            sums = _group_sums(values, codes, groups)
            out[spec.name] = np.array([encode_sum(state) for state in sums], dtype=object)
            if spec.fn == "avg":
                out[spec.name + AVG_COUNT_SUFFIX] = counts
        else:
            out[spec.name] = _extreme(values, codes, groups, spec.fn)
    return Batch(schema, out)


def final_aggregate(batch: Batch, keys: Sequence[str], specs: Sequence[AggregateSpec], schema: Schema) -> Batch:
    """Merge state rows (in input order) and finish each aggregate."""
    codes, firsts = group_codes(batch, keys)
    groups = len(firsts)
    if groups == 0:
        return Batch.empty(schema)
    first = np.array(firsts, dtype=np.int64)
    out: Dict[str, Any] = {key: batch.column(key)[first] for key in keys}
    members: List[List[int]] = [[] for _ in range(groups)]
    for index, code in enumerate(codes.tolist()):
        members[code].append(index)
    for spec in specs:
        column = batch.column(spec.name)
        target = schema.column(spec.name).type
        if spec.fn == "count":
            totals = np.zeros(groups, dtype=np.int64)
            np.add.at(totals, codes, column.astype(np.int64))
            out[spec.name] = totals
        elif spec.fn in ("sum", "avg"):
            states = column.tolist()
            merged = [merge_sums([decode_sum(states[i]) for i in rows]) for rows in members]
            if spec.fn == "sum":
                values = [sum_value(state, target) for state in merged]
            else:
                counts = batch.column(spec.name + AVG_COUNT_SUFFIX).tolist()
                values = [avg_value(state, sum(counts[i] for i in rows)) for state, rows in zip(merged, members)]
            out[spec.name] = np.array(values, dtype=np.float64 if target is ColumnType.FLOAT64 else np.int64)
        else:
            out[spec.name] = _extreme(np.asarray(column), codes, groups, spec.fn)
    return Batch(schema, out)


# joins


@dataclass
class JoinTable:
    """Build side of a hash join: rows plus key -> row indices."""

    batch: Batch
    keys: Tuple[str, ...]
    index: Dict[Tuple, List[int]] = field(default_factory=dict)

    @classmethod
    def build(cls, batch: Batch, keys: Sequence[str]) -> "JoinTable":
        table = cls(batch, tuple(keys))
        columns = [batch.column(key).tolist() for key in keys]
        for row, key in enumerate(zip(*columns)):
            table.index.setdefault(key, []).append(row)
        return table

    def lookup(self, batch: Batch, keys: Sequence[str], schema: Schema) -> Batch:
        """Inner join of ``batch`` against the built side on ``keys``."""
        columns = [batch.column(key).tolist() for key in keys]
        left: List[int] = []
        right: List[int] = []
        for row, key in enumerate(zip(*columns)):
            for match in self.index.get(key, ()):
                left.append(row)
                right.append(match)
        left_idx = np.array(left, dtype=np.int64)
        right_idx = np.array(right, dtype=np.int64)
        out = {name: values[left_idx] for name, values in batch.columns.items()}
        out.update({name: values[right_idx] for name, values in self.batch.columns.items()})
        return Batch(schema, out)


def join_schema(stream: Schema, build: Schema) -> Schema:
    return _schema(list(stream.columns) + list(build.columns))


# exchange partitioning

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX = np.uint64(0xBF58476D1CE4E5B9)


def _column_hash(values: np.ndarray, column_type: ColumnType) -> np.ndarray:
    data = np.ma.getdata(values)
    if column_type is ColumnType.UTF8:
        return np.array([zlib.crc32(str(v).encode("utf-8")) for v in data.tolist()], dtype=np.uint64)
    if column_type is ColumnType.FLOAT64:
        return (data.astype(np.float64) + 0.0).view(np.uint64)
    if column_type is ColumnType.DATE32:
        return data.astype("datetime64[D]").astype(np.int64).astype(np.uint64)
    return data.astype(np.int64).astype(np.uint64)


def partition_ids(batch: Batch, columns: Sequence[str], partitions: int) -> np.ndarray:
    """Stable hash partition of every row; independent of process and platform."""
    rows = batch.num_rows
    if partitions == 1 or not columns:
        return np.zeros(rows, dtype=np.int64)
    h = np.zeros(rows, dtype=np.uint64)
    for name in columns:
        h = (h ^ _column_hash(batch.column(name), batch.schema.column(name).type)) * _GOLDEN
        h = (h ^ (h >> np.uint64(31))) * _MIX
    return ((h >> np.uint64(32)) % np.uint64(partitions)).astype(np.int64)


def split_partitions(batch: Batch, columns: Sequence[str], partitions: int) -> List[Batch]:
    ids = partition_ids(batch, columns, partitions)
    return [batch.filter(ids == part) for part in range(partitions)]


# ordering


def sort_rows(batch: Batch, order: Sequence[Mapping[str, Any]], limit: Optional[int] = None) -> Batch:
    indices = list(range(batch.num_rows))
    for key in reversed(order):
        values = batch.column(key["col"]).tolist()
        indices.sort(key=values.__getitem__, reverse=bool(key.get("desc", False)))
    if limit is not None:
        indices = indices[:limit]
    return batch.take(np.array(indices, dtype=np.int64))


def rebatch(batches: Sequence[Batch], schema: Schema, rows: int) -> List[Batch]:
    """Re-slice a stream into batches of at most ``rows`` rows."""
    whole = concat_batches(schema, batches)
    return [whole.slice(start, start + rows) for start in range(0, whole.num_rows, rows)]


# projection


def project(batch: Batch, expressions: Sequence[Tuple[str, ex.Expr]], schema: Schema) -> Batch:
    out = {}
    for name, expr in expressions:
        values = ex.evaluate(expr, batch)
        if schema.column(name).type is ColumnType.INT64 and np.asarray(values).dtype == bool:
            values = np.asarray(values).astype(np.int64)
        out[name] = values
    return Batch(schema, out)


def projections(op: Operator) -> List[Tuple[str, ex.Expr]]:
    return [(record["name"], ex.parse(record["expr"])) for record in op["expressions"]]


# schema inference


@dataclass
class StreamState:
    """Schemas flowing through a pipeline while it is typed or executed."""

    stream: Optional[Schema] = None
    built: Optional[Schema] = None


def pipeline_schema(
    pipeline: Pipeline,
    tables: Mapping[str, Schema],
    upstream: Mapping[str, Schema],
) -> Tuple[Schema, List[Optional[Schema]]]:
    """Output schema of ``pipeline`` and the stream schema after each operator.

    ``upstream`` maps producer pipeline ids to the schema they exchange.
    Raises PlanInvalid on unknown columns, mistyped expressions or operators
    used out of order.
    """
    state = StreamState()
    after: List[Optional[Schema]] = []
    where = f"pipeline '{pipeline.id}'"
    for op in pipeline.operators:
        kind = op.kind
        if kind in ("scan", "exchange_read"):
            if state.stream is not None:
                raise PlanInvalid(f"{where}: {kind} would drop an unconsumed stream")
            if kind == "scan":
                if op["table"] not in tables:
                    raise PlanInvalid(f"{where}: unknown table '{op['table']}'")
                source = tables[op["table"]]
                try:
                    state.stream = source.select(op["columns"])
                except (SchemaMismatch, ValidationError) as exc:
                    raise PlanInvalid(f"{where}: {exc}") from exc
                if "predicate" in op.params and ex.result_type(ex.parse(op["predicate"]), source) != ex.BOOL:
                    raise PlanInvalid(f"{where}: scan predicate is not boolean")
            else:
                state.stream = upstream[op["input"]]
        elif kind == "barrier":
            pass
        elif state.stream is None:
            raise PlanInvalid(f"{where}: {kind} has no input stream")
        elif kind == "filter":
            if ex.result_type(ex.parse(op["predicate"]), state.stream) != ex.BOOL:
                raise PlanInvalid(f"{where}: filter predicate is not boolean")
        elif kind == "project":
            columns = [
                Column(name, ex.storage_type(ex.result_type(expr, state.stream))) for name, expr in projections(op)
            ]
            state.stream = _schema(columns)
        elif kind == "hash_aggregate":
            keys = _key_columns(state.stream, op["keys"], where)
            specs = aggregate_specs(op)
            if op["mode"] == "partial":
                state.stream = partial_schema(keys, specs, state.stream)
            else:
                _key_columns(state.stream, [spec.name for spec in specs], where)
                state.stream = final_schema(keys, specs)
        elif kind == "hash_join_build":
            _key_columns(state.stream, op["keys"], where)
            state.built, state.stream = state.stream, None
        elif kind == "hash_join_probe":
            if state.built is None:
                raise PlanInvalid(f"{where}: join before build")
            stream_keys = _key_columns(state.stream, op["keys"], where)
            build_keys = _key_columns(state.built, _build_keys(pipeline, op), where)
            if len(stream_keys) != len(build_keys):
                raise PlanInvalid(f"{where}: join key counts differ")
            for left, right in zip(stream_keys, build_keys):
                if left.type is not right.type:
                    raise PlanInvalid(f"{where}: join keys {left.name}/{right.name} differ in type")
            state.stream = join_schema(state.stream, state.built)
        elif kind == "sort_limit":
            _key_columns(state.stream, [key["col"] for key in op["order"]], where)
        elif kind == "udf_map":
            state.stream = get_udf(op["udf"]).output_schema(state.stream, op.params)
        elif kind == "exchange_write":
            _key_columns(state.stream, op["hash"], where)
        after.append(state.stream)
    if state.stream is None:
        raise PlanInvalid(f"{where} ends without an output stream")
    return state.stream, after


def _key_columns(schema: Schema, names: Sequence[str], where: str) -> List[Column]:
    try:
        return [schema.column(name) for name in names]
    except SchemaMismatch as exc:
        raise PlanInvalid(f"{where}: {exc}") from exc


def _build_keys(pipeline: Pipeline, join: Operator) -> List[str]:
    """Keys of the nearest build before ``join``."""
    position = pipeline.operators.index(join)
    for op in reversed(pipeline.operators[:position]):
        if op.kind == "hash_join_build":
            return list(op["keys"])
    raise PlanInvalid(f"pipeline '{pipeline.id}': join before build")
