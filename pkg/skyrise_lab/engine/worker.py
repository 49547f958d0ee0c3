"""Fragment execution as a sans-I/O program.

``fragment_program`` is a generator that yields storage and timing requests
and receives their results; it never touches a clock or a bucket itself. The
simulated runtime answers the requests with storesim/netsim timing, the local
driver with plain file reads, so both run the exact same operator code.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Generator, List, Mapping, Optional, Sequence, Tuple, Union

from skyrise_lab.dataform import (
    Batch,
    FileMeta,
    Schema,
    TAIL_BYTES,
    TableMeta,
    concat_batches,
    decode_group,
    footer_length,
    format_overhead,
    parse_footer,
    plan_read,
    read_chunks,
    write_table,
)
from skyrise_lab.engine import expressions as ex
from skyrise_lab.engine.compiler import Fragment, Stage
from skyrise_lab.engine.operators import (
    JoinTable,
    aggregate_specs,
    final_aggregate,
    partial_aggregate,
    pipeline_schema,
    projections,
    project,
    rebatch,
    sort_rows,
    split_partitions,
)
from skyrise_lab.engine.udfs import get_udf
from skyrise_lab.naming import barrier_key, exchange_key, result_key
from skyrise_lab.units import KiB, MiB

logger = logging.getLogger(__name__)

DATA_STORE = "data"
EXCHANGE_STORE = "exchange"


@dataclass(frozen=True)
class WorkerSettings:
    batch_rows: int = 65_536
    cpu_bytes_s: float = 900 * MiB
    scan_concurrency: int = 8
    exchange_concurrency: int = 3
    chunk_bytes: int = 16 * MiB
    footer_tail: int = 64 * KiB

    @classmethod
    def from_calibration(cls, record: Mapping[str, Any]) -> "WorkerSettings":
        return cls(
            batch_rows=int(record.get("batch_rows", 65_536)),
            cpu_bytes_s=float(record.get("cpu_mib_s", 900)) * MiB,
            scan_concurrency=int(record.get("scan_concurrency", 8)),
            exchange_concurrency=int(record.get("exchange_concurrency", 3)),
            chunk_bytes=int(record.get("chunk_mib", 16)) * MiB,
        )


# requests


@dataclass(frozen=True)
class Read:
    store: str
    key: str
    start: int
    end: int
    sim_bytes: int


@dataclass(frozen=True)
class ReadMany:
    """Reads issued together with at most ``concurrency`` in flight; answered with a list of bytes."""

    reads: Tuple[Read, ...]
    concurrency: int = 1


@dataclass(frozen=True)
class Write:
    store: str
    key: str
    data: bytes
    sim_bytes: int


@dataclass(frozen=True)
class Compute:
    seconds: float


@dataclass(frozen=True)
class Wait:
    """Poll the shared queue until ``condition`` is released."""

    condition: str


Request = Union[ReadMany, Write, Compute, Wait]


@dataclass(frozen=True)
class ExchangeOutput:
    """One producer object holding every partition back to back.

    ``parts`` are real ``(offset, length)`` ranges, ``sizes`` the simulated
    bytes of each partition.
    """

    key: str
    parts: Tuple[Tuple[int, int], ...]
    sizes: Tuple[int, ...] = ()
    rows: int = 0

    def sim_size(self, partition: int) -> int:
        return self.sizes[partition] if self.sizes else self.parts[partition][1]


@dataclass
class FragmentMetrics:
    bytes_in: int = 0
    bytes_out: int = 0
    real_in: int = 0
    real_out: int = 0
    payload_in: int = 0
    payload_real: int = 0
    reads: int = 0
    writes: int = 0
    rows_out: int = 0
    chunks_skipped: int = 0
    compute_s: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "bytes_in": self.bytes_in,
            "bytes_out": self.bytes_out,
            "requests": self.reads + self.writes,
            "rows_out": self.rows_out,
            "chunks_skipped": self.chunks_skipped,
        }


@dataclass
class FragmentOutput:
    exchange: Optional[ExchangeOutput] = None
    result_key: Optional[str] = None
    metrics: FragmentMetrics = field(default_factory=FragmentMetrics)


@dataclass
class FragmentTask:
    query_id: str
    stage: Stage
    fragment: Fragment
    tables: Mapping[str, TableMeta]
    inputs: Mapping[str, Sequence[ExchangeOutput]] = field(default_factory=dict)
    upstream: Mapping[str, Schema] = field(default_factory=dict)
    consumers: int = 1
    settings: WorkerSettings = field(default_factory=WorkerSettings)

    @property
    def label(self) -> str:
        return f"{self.query_id}/{self.stage.pipeline.id}/{self.fragment.index}"


def sim_bytes(length: int, inflation: float) -> int:
    return int(math.ceil(length * inflation))


def split_range(store: str, key: str, start: int, end: int, inflation: float, chunk_bytes: int) -> List[Read]:
    """Cut a byte range into reads of at most ``chunk_bytes`` simulated bytes."""
    total = sim_bytes(end - start, inflation)
    pieces = max(1, int(math.ceil(total / chunk_bytes)))
    bounds = [start + (end - start) * i // pieces for i in range(pieces + 1)]
    return [
        Read(store, key, lo, hi, sim_bytes(hi - lo, inflation))
        for lo, hi in zip(bounds, bounds[1:])
        if hi > lo
    ]


def _account(metrics: FragmentMetrics, reads: Sequence[Read], payload: bool = True) -> None:
    metrics.reads += len(reads)
    metrics.bytes_in += sum(r.sim_bytes for r in reads)
    metrics.real_in += sum(r.end - r.start for r in reads)
    if payload:
        metrics.payload_in += sum(r.sim_bytes for r in reads)
        metrics.payload_real += sum(r.end - r.start for r in reads)


def _compute(task: FragmentTask, metrics: FragmentMetrics, nbytes: int):
    if nbytes <= 0:
        return
    seconds = nbytes / task.settings.cpu_bytes_s
    metrics.compute_s += seconds
    yield Compute(seconds)


def _scan_file(task: FragmentTask, meta: FileMeta, op, predicate, metrics: FragmentMetrics):
    settings = task.settings
    inflation = meta.inflation
    # footers are metadata: simulated at their real size
    tail_length = min(meta.size, settings.footer_tail)
    first = Read(DATA_STORE, meta.key, meta.size - tail_length, meta.size, tail_length)
    _account(metrics, [first], payload=False)
    (tail,) = yield ReadMany((first,))
    needed = footer_length(tail) + TAIL_BYTES
    if needed > len(tail):
        again = Read(DATA_STORE, meta.key, meta.size - needed, meta.size, needed)
        _account(metrics, [again], payload=False)
        (tail,) = yield ReadMany((again,))
    footer = parse_footer(tail, meta.size)
    names = list(op["columns"])
    if predicate is not None:
        names += sorted(ex.columns(predicate) - set(names))
    plan = plan_read(footer, names, ex.column_ranges(predicate))
    metrics.chunks_skipped += plan.skipped
    reads: List[Read] = []
    spans = []
    for group in plan.groups:
        lo, hi = footer.row_groups[group].span(plan.decode)
        pieces = split_range(DATA_STORE, meta.key, lo, hi, inflation, settings.chunk_bytes)
        spans.append((group, lo, len(pieces)))
        reads.extend(pieces)
    if not reads:
        return []
    _account(metrics, reads)
    blobs = yield ReadMany(tuple(reads), settings.scan_concurrency)
    yield from _compute(task, metrics, sum(r.sim_bytes for r in reads))
    batches = []
    position = 0
    for group, lo, count in spans:
        buffer = b"".join(blobs[position:position + count])
        position += count
        batch = decode_group(footer, group, plan, lambda offset, length: buffer[offset - lo:offset - lo + length])
        if predicate is not None:
            batch = batch.filter(ex.evaluate_mask(predicate, batch))
        batches.append(batch.select(op["columns"]))
    return batches


def _scan(task: FragmentTask, op, metrics: FragmentMetrics):
    files = task.tables[op["table"]].files if op.get("broadcast", False) else task.fragment.files
    predicate = ex.parse(op["predicate"]) if "predicate" in op.params else None
    batches: List[Batch] = []
    for meta in files:
        batches.extend((yield from _scan_file(task, meta, op, predicate, metrics)))
    return batches


def consumer_order(producers: int, consumers: int, partition: int) -> List[int]:
    """Producer visiting order of one consumer: rotated so consumers start on different producers."""
    if producers == 0:
        return []
    start = (partition * producers) // max(1, consumers)
    return [(start + step) % producers for step in range(producers)]


def _exchange_read(task: FragmentTask, op, metrics: FragmentMetrics):
    producers = list(task.inputs.get(op["input"], ()))
    partition = task.fragment.partition or 0
    order = consumer_order(len(producers), task.consumers, partition)
    reads = []
    for index in order:
        output = producers[index]
        offset, length = output.parts[partition]
        reads.append(Read(EXCHANGE_STORE, output.key, offset, offset + length, output.sim_size(partition)))
    if not reads:
        return []
    _account(metrics, reads)
    blobs = yield ReadMany(tuple(reads), task.settings.exchange_concurrency)
    yield from _compute(task, metrics, sum(r.sim_bytes for r in reads))
    by_producer = dict(zip(order, blobs))
    batches: List[Batch] = []
    for index in range(len(producers)):
        batches.extend(read_chunks(by_producer[index]).batches)
    return batches


def _inflation(metrics: FragmentMetrics) -> float:
    """Simulated bytes per real byte of the column data this fragment read."""
    return metrics.payload_in / metrics.payload_real if metrics.payload_real else 1.0


def _exchange_write(task: FragmentTask, op, schema: Schema, stream: List[Batch], metrics: FragmentMetrics):
    whole = concat_batches(schema, stream)
    count = task.stage.output_partitions or 1
    parts = split_partitions(whole, list(op["hash"]), count)
    blobs = [write_table(schema, [part], task.settings.batch_rows) for part in parts]
    inflation = _inflation(metrics)
    offsets = []
    sizes = []
    position = 0
    for blob in blobs:
        offsets.append((position, len(blob)))
        position += len(blob)
        # only column data scales with the input; framing stays at its real size
        overhead = format_overhead(blob)
        sizes.append(overhead + sim_bytes(len(blob) - overhead, inflation))
    data = b"".join(blobs)
    key = exchange_key(task.query_id, task.stage.index, task.fragment.index)
    size = sum(sizes)
    metrics.writes += 1
    metrics.bytes_out += size
    metrics.real_out += len(data)
    metrics.rows_out += whole.num_rows
    yield Write(EXCHANGE_STORE, key, data, size)
    return ExchangeOutput(key, tuple(offsets), tuple(sizes), whole.num_rows)


def _single(schema: Schema, stream: List[Batch]) -> Batch:
    return concat_batches(schema, stream)


def fragment_program(task: FragmentTask) -> Generator[Request, Any, FragmentOutput]:
    """Run every operator of the task's pipeline over its fragment."""
    pipeline = task.stage.pipeline
    table_schemas = {name: table.schema for name, table in task.tables.items()}
    _, after = pipeline_schema(pipeline, table_schemas, task.upstream)
    metrics = FragmentMetrics()
    output = FragmentOutput(metrics=metrics)
    stream: List[Batch] = []
    schema: Optional[Schema] = None
    built: Optional[JoinTable] = None
    rows = task.settings.batch_rows

    for position, op in enumerate(pipeline.operators):
        kind = op.kind
        out_schema = after[position]
        if kind == "barrier":
            yield Wait(barrier_key(task.query_id, op["condition"]))
            continue
        if kind == "scan":
            stream = rebatch((yield from _scan(task, op, metrics)), out_schema, rows)
        elif kind == "exchange_read":
            stream = rebatch((yield from _exchange_read(task, op, metrics)), out_schema, rows)
        elif kind == "filter":
            predicate = ex.parse(op["predicate"])
            stream = [batch.filter(ex.evaluate_mask(predicate, batch)) for batch in stream]
        elif kind == "project":
            expressions = projections(op)
            stream = [project(batch, expressions, out_schema) for batch in stream]
        elif kind == "hash_aggregate":
            specs = aggregate_specs(op)
            whole = _single(schema, stream)
            if op["mode"] == "partial":
                stream = [partial_aggregate(whole, op["keys"], specs, out_schema)]
            else:
                stream = [final_aggregate(whole, op["keys"], specs, out_schema)]
        elif kind == "hash_join_build":
            built = JoinTable.build(_single(schema, stream), op["keys"])
            stream = []
        elif kind == "hash_join_probe":
            stream = [built.lookup(_single(schema, stream), op["keys"], out_schema)]
        elif kind == "sort_limit":
            stream = [sort_rows(_single(schema, stream), op["order"], op.get("limit"))]
        elif kind == "udf_map":
            stream = [get_udf(op["udf"]).apply(_single(schema, stream), op.params)]
        elif kind == "exchange_write":
            output.exchange = yield from _exchange_write(task, op, schema, stream, metrics)
        schema = out_schema

    if task.stage.is_sink:
        whole = _single(schema, stream)
        data = write_table(schema, [whole], rows)
        key = result_key(task.query_id, task.fragment.index)
        metrics.writes += 1
        metrics.bytes_out += len(data)
        metrics.real_out += len(data)
        metrics.rows_out += whole.num_rows
        yield Write(DATA_STORE, key, data, len(data))
        output.result_key = key
    logger.debug("%s done: %s", task.label, metrics.to_dict())
    return output
