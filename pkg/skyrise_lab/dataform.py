"""SKYC1 columnar table files and desk-scale table generators.

A file is ``magic | column chunks | footer JSON | footer length | magic``.
Chunks of one row group are stored back to back in schema order; the footer
carries offsets and exact per-chunk statistics so readers can prune row
groups from the footer alone. The byte layout is documented in docs/FORMAT.md.
"""

import datetime
import enum
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from skyrise_lab.errors import CorruptFooter, SchemaMismatch, ValidationError
from skyrise_lab.naming import table_key
from skyrise_lab.simcore import RngStream
from skyrise_lab.units import MiB

logger = logging.getLogger(__name__)

MAGIC = b"SKYC1"
FORMAT_VERSION = 1
TRAILER = struct.Struct("<I")
TAIL_BYTES = TRAILER.size + len(MAGIC)
DEFAULT_ROW_GROUP_ROWS = 65_536
DEFAULT_FILE_BYTES = 8 * MiB
EPOCH = np.datetime64("1970-01-01", "D")


class ColumnType(str, enum.Enum):
    INT64 = "int64"
    FLOAT64 = "float64"
    DATE32 = "date32"
    UTF8 = "utf8"


_PHYSICAL = {
    ColumnType.INT64: np.dtype("<i8"),
    ColumnType.FLOAT64: np.dtype("<f8"),
    ColumnType.DATE32: np.dtype("<i4"),
}


@dataclass(frozen=True)
class Column:
    name: str
    type: ColumnType
    nullable: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "type": self.type.value, "nullable": self.nullable}


@dataclass(frozen=True)
class Schema:
    columns: Tuple[Column, ...]

    def __post_init__(self) -> None:
        if not self.columns:
            raise ValidationError("schema needs at least one column")
        names = [column.name for column in self.columns]
        duplicates = sorted({name for name in names if names.count(name) > 1})
        if duplicates:
            raise ValidationError(f"duplicate column names: {duplicates}")

    @classmethod
    def of(cls, *columns: Tuple) -> "Schema":
        """``Schema.of(("a", "int64"), ("b", "utf8", True))``"""
        return cls(tuple(Column(spec[0], ColumnType(spec[1]), *spec[2:]) for spec in columns))

    @classmethod
    def from_dict(cls, records: Sequence[Mapping[str, Any]]) -> "Schema":
        try:
            return cls(tuple(Column(r["name"], ColumnType(r["type"]), bool(r.get("nullable", False))) for r in records))
        except (KeyError, ValueError) as exc:
            raise ValidationError(f"bad schema record: {exc}") from exc

    def to_dict(self) -> List[Dict[str, Any]]:
        return [column.to_dict() for column in self.columns]

    @property
    def names(self) -> List[str]:
        return [column.name for column in self.columns]

    def column(self, name: str) -> Column:
        for column in self.columns:
            if column.name == name:
                return column
        raise SchemaMismatch(f"no column '{name}' in schema {self.names}")

    def select(self, names: Sequence[str]) -> "Schema":
        return Schema(tuple(self.column(name) for name in names))

    def extend(self, columns: Sequence[Column]) -> "Schema":
        return Schema(self.columns + tuple(columns))


# values


def to_physical(column_type: ColumnType, value: Any) -> Any:
    """Logical literal to the value stored in chunks and statistics."""
    if value is None:
        return None
    if column_type is ColumnType.DATE32:
        if isinstance(value, (int, np.integer)):
            return int(value)
        return int((np.datetime64(value, "D") - EPOCH).astype(np.int64))
    if column_type is ColumnType.INT64:
        return int(value)
    if column_type is ColumnType.FLOAT64:
        return float(value)
    return str(value)


def to_python(column_type: ColumnType, value: Any) -> Any:
    """Physical value to a plain Python value (``datetime.date`` for dates)."""
    if value is None or (isinstance(value, np.ma.core.MaskedConstant)):
        return None
    if column_type is ColumnType.DATE32:
        if isinstance(value, np.datetime64):
            return value.astype(datetime.date)
        return (EPOCH + np.timedelta64(int(value), "D")).astype(datetime.date)
    if column_type is ColumnType.INT64:
        return int(value)
    if column_type is ColumnType.FLOAT64:
        return float(value)
    return str(value)


def _logical_array(column_type: ColumnType, physical: np.ndarray) -> np.ndarray:
    if column_type is ColumnType.DATE32:
        return EPOCH + physical.astype("timedelta64[D]")
    return physical


def _physical_array(column: Column, values: Any) -> Tuple[np.ndarray, np.ndarray]:
    """Coerce input values to ``(physical array, validity mask)``."""
    if isinstance(values, np.ma.MaskedArray):
        valid = ~np.ma.getmaskarray(values)
        raw = list(values.data)
    elif isinstance(values, np.ndarray) and values.dtype != object:
        valid = np.ones(len(values), dtype=bool)
        raw = values
    else:
        raw = list(values)
        valid = np.array([value is not None for value in raw], dtype=bool)
    if not valid.all() and not column.nullable:
        raise SchemaMismatch(f"column '{column.name}' is not nullable but has nulls")
    try:
        if column.type is ColumnType.UTF8:
            out = np.array(["" if not ok else str(v) for v, ok in zip(raw, valid)], dtype=object)
        elif column.type is ColumnType.DATE32:
            if isinstance(raw, np.ndarray) and np.issubdtype(raw.dtype, np.datetime64):
                out = (raw.astype("datetime64[D]") - EPOCH).astype("<i4")
            else:
                out = np.array([to_physical(column.type, v) if ok else 0 for v, ok in zip(raw, valid)], dtype="<i4")
        else:
            dtype = _PHYSICAL[column.type]
            if isinstance(raw, np.ndarray):
                if column.type is ColumnType.INT64 and not np.issubdtype(raw.dtype, np.integer):
                    raise TypeError(f"expected integers, got {raw.dtype}")
                out = raw.astype(dtype)
            else:
                fill = 0 if column.type is ColumnType.INT64 else 0.0
                cast = int if column.type is ColumnType.INT64 else float
                if column.type is ColumnType.INT64 and any(
                    ok and isinstance(v, float) for v, ok in zip(raw, valid)
                ):
                    raise TypeError("expected integers, got floats")
                out = np.array([cast(v) if ok else fill for v, ok in zip(raw, valid)], dtype=dtype)
    except (TypeError, ValueError) as exc:
        raise SchemaMismatch(f"column '{column.name}' ({column.type.value}): {exc}") from exc
    return out, valid


# batches


@dataclass
class Batch:
    """Columnar rows: logical numpy arrays keyed by column name.

    Dates are ``datetime64[D]``, strings ``object`` arrays; columns with
    nulls are ``numpy.ma.MaskedArray``.
    """

    schema: Schema
    columns: Dict[str, np.ndarray]

    @property
    def num_rows(self) -> int:
        if not self.columns:
            return 0
        return len(next(iter(self.columns.values())))

    def column(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError as exc:
            raise SchemaMismatch(f"batch has no column '{name}'") from exc

    def select(self, names: Sequence[str]) -> "Batch":
        return Batch(self.schema.select(names), {name: self.column(name) for name in names})

    def filter(self, mask: np.ndarray) -> "Batch":
        mask = np.ma.filled(mask, False).astype(bool)
        return Batch(self.schema, {name: values[mask] for name, values in self.columns.items()})

    def take(self, indices: np.ndarray) -> "Batch":
        return Batch(self.schema, {name: values[indices] for name, values in self.columns.items()})

    def slice(self, start: int, stop: int) -> "Batch":
        return Batch(self.schema, {name: values[start:stop] for name, values in self.columns.items()})

    def rows(self) -> List[Tuple]:
        """Rows as tuples of plain Python values."""
        columns = [
            [to_python(column.type, value) for value in _with_nulls(self.columns[column.name])]
            for column in self.schema.columns
        ]
        return list(zip(*columns)) if columns else []

    @classmethod
    def empty(cls, schema: Schema) -> "Batch":
        columns = {}
        for column in schema.columns:
            physical = np.empty(0, dtype=object if column.type is ColumnType.UTF8 else _PHYSICAL[column.type])
            columns[column.name] = _logical_array(column.type, physical)
        return cls(schema, columns)

    @classmethod
    def from_pydict(cls, schema: Schema, data: Mapping[str, Any]) -> "Batch":
        if set(data) != set(schema.names):
            raise SchemaMismatch(f"columns {sorted(data)} do not match schema {schema.names}")
        lengths = {len(values) for values in data.values()}
        if len(lengths) > 1:
            raise SchemaMismatch(f"ragged columns: lengths {sorted(lengths)}")
        columns = {}
        for column in schema.columns:
            physical, valid = _physical_array(column, data[column.name])
            columns[column.name] = _to_logical(column.type, physical, valid)
        return cls(schema, columns)

    @classmethod
    def from_rows(cls, schema: Schema, rows: Sequence[Sequence[Any]]) -> "Batch":
        if not rows:
            return cls.empty(schema)
        return cls.from_pydict(schema, {name: [row[i] for row in rows] for i, name in enumerate(schema.names)})


def _with_nulls(values: np.ndarray) -> Iterable[Any]:
    if isinstance(values, np.ma.MaskedArray):
        mask = np.ma.getmaskarray(values)
        return [None if masked else value for value, masked in zip(values.data, mask)]
    return values


def _to_logical(column_type: ColumnType, physical: np.ndarray, valid: np.ndarray) -> np.ndarray:
    logical = _logical_array(column_type, physical)
    if valid.all():
        return logical
    return np.ma.MaskedArray(logical, mask=~valid)


def concat_batches(schema: Schema, batches: Sequence[Batch]) -> Batch:
    batches = [batch for batch in batches if batch.num_rows]
    if not batches:
        return Batch.empty(schema)
    if len(batches) == 1:
        return Batch(schema, dict(batches[0].columns))
    columns = {}
    for name in schema.names:
        parts = [batch.column(name) for batch in batches]
        if any(isinstance(part, np.ma.MaskedArray) for part in parts):
            columns[name] = np.ma.concatenate(parts)
        else:
            columns[name] = np.concatenate(parts)
    return Batch(schema, columns)


# chunk codec


def _stats(column_type: ColumnType, physical: np.ndarray, valid: np.ndarray) -> Tuple[Any, Any]:
    present = physical[valid]
    if len(present) == 0:
        return None, None
    if column_type is ColumnType.UTF8:
        return min(present), max(present)
    if column_type is ColumnType.FLOAT64:
        return float(present.min()), float(present.max())
    return int(present.min()), int(present.max())


def encode_chunk(column: Column, physical: np.ndarray, valid: np.ndarray) -> bytes:
    parts: List[bytes] = []
    if column.nullable:
        parts.append(np.packbits(valid, bitorder="little").tobytes())
    if column.type is ColumnType.UTF8:
        encoded = [value.encode("utf-8") for value in physical]
        parts.append(np.array([len(item) for item in encoded], dtype="<u4").tobytes())
        parts.append(b"".join(encoded))
    else:
        parts.append(np.ascontiguousarray(physical, dtype=_PHYSICAL[column.type]).tobytes())
    return b"".join(parts)


def decode_chunk(column: Column, data: bytes, rows: int) -> np.ndarray:
    """Chunk bytes to a logical array (masked when the chunk holds nulls)."""
    offset = 0
    valid = np.ones(rows, dtype=bool)
    try:
        if column.nullable:
            width = (rows + 7) // 8
            bits = np.frombuffer(data, dtype=np.uint8, count=width, offset=0)
            valid = np.unpackbits(bits, count=rows, bitorder="little").astype(bool)
            offset = width
        if column.type is ColumnType.UTF8:
            lengths = np.frombuffer(data, dtype="<u4", count=rows, offset=offset)
            offset += 4 * rows
            values = np.empty(rows, dtype=object)
            for index, length in enumerate(lengths.tolist()):
                values[index] = data[offset:offset + length].decode("utf-8")
                offset += length
            physical = values
        else:
            physical = np.frombuffer(data, dtype=_PHYSICAL[column.type], count=rows, offset=offset).copy()
    except (ValueError, UnicodeDecodeError) as exc:
        raise CorruptFooter(f"chunk of column '{column.name}' does not decode: {exc}") from exc
    return _to_logical(column.type, physical, valid)


# footer


@dataclass(frozen=True)
class ColumnChunk:
    name: str
    offset: int
    length: int
    row_count: int
    null_count: int
    min: Any
    max: Any
    encoding: str = "plain"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "offset": self.offset,
            "length": self.length,
            "nulls": self.null_count,
            "min": self.min,
            "max": self.max,
        }


@dataclass(frozen=True)
class RowGroup:
    rows: int
    chunks: Tuple[ColumnChunk, ...]

    def chunk(self, name: str) -> ColumnChunk:
        for chunk in self.chunks:
            if chunk.name == name:
                return chunk
        raise SchemaMismatch(f"row group has no column '{name}'")

    def span(self, names: Sequence[str]) -> Tuple[int, int]:
        """Smallest byte range covering the chunks of ``names``."""
        chunks = [self.chunk(name) for name in names]
        return min(c.offset for c in chunks), max(c.offset + c.length for c in chunks)


@dataclass(frozen=True)
class TableFile:
    """Parsed footer of one file; chunk data is fetched separately."""

    schema: Schema
    row_groups: Tuple[RowGroup, ...]
    size: int

    @property
    def num_rows(self) -> int:
        return sum(group.rows for group in self.row_groups)

    def column_stats(self) -> Dict[str, Dict[str, Any]]:
        stats: Dict[str, Dict[str, Any]] = {}
        for column in self.schema.columns:
            chunks = [group.chunk(column.name) for group in self.row_groups]
            present = [c for c in chunks if c.min is not None]
            stats[column.name] = {
                "min": min((c.min for c in present), default=None),
                "max": max((c.max for c in present), default=None),
                "nulls": sum(c.null_count for c in chunks),
                "bytes": sum(c.length for c in chunks),
            }
        return stats


def _footer_json(schema: Schema, groups: List[Dict[str, Any]]) -> bytes:
    document = {"version": FORMAT_VERSION, "schema": schema.to_dict(), "row_groups": groups}
    return json.dumps(document, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def write_table(
    schema: Schema,
    batches: Iterable[Union[Batch, Mapping[str, Any]]],
    row_group_rows: int = DEFAULT_ROW_GROUP_ROWS,
) -> bytes:
    """Encode batches (``Batch`` or column-name mappings) into one SKYC1 file."""
    if row_group_rows < 1:
        raise ValidationError("row_group_rows must be positive")
    physical: Dict[str, List[np.ndarray]] = {name: [] for name in schema.names}
    validity: Dict[str, List[np.ndarray]] = {name: [] for name in schema.names}
    for batch in batches:
        data = batch.columns if isinstance(batch, Batch) else batch
        if set(data) != set(schema.names):
            raise SchemaMismatch(f"batch columns {sorted(data)} do not match schema {schema.names}")
        lengths = {len(values) for values in data.values()}
        if len(lengths) > 1:
            raise SchemaMismatch(f"ragged batch: column lengths {sorted(lengths)}")
        for column in schema.columns:
            values, valid = _physical_array(column, data[column.name])
            physical[column.name].append(values)
            validity[column.name].append(valid)
    merged = {}
    for column in schema.columns:
        parts = physical[column.name]
        if parts:
            merged[column.name] = (np.concatenate(parts), np.concatenate(validity[column.name]))
        else:
            dtype = object if column.type is ColumnType.UTF8 else _PHYSICAL[column.type]
            merged[column.name] = (np.empty(0, dtype=dtype), np.empty(0, dtype=bool))
    total = len(next(iter(merged.values()))[0])

    out = bytearray(MAGIC)
    groups: List[Dict[str, Any]] = []
    for start in range(0, total, row_group_rows):
        stop = min(total, start + row_group_rows)
        chunk_records = []
        for column in schema.columns:
            values, valid = merged[column.name]
            values, valid = values[start:stop], valid[start:stop]
            encoded = encode_chunk(column, values, valid)
            low, high = _stats(column.type, values, valid)
            chunk_records.append(
                {"offset": len(out), "length": len(encoded), "nulls": int((~valid).sum()), "min": low, "max": high}
            )
            out += encoded
        groups.append({"rows": stop - start, "columns": chunk_records})
    footer = _footer_json(schema, groups)
    out += footer
    out += TRAILER.pack(len(footer))
    out += MAGIC
    return bytes(out)


def footer_length(tail: bytes) -> int:
    """Footer length from the last ``TAIL_BYTES`` (or more) bytes of a file."""
    if len(tail) < TAIL_BYTES or tail[-len(MAGIC):] != MAGIC:
        raise CorruptFooter("missing trailing magic")
    (length,) = TRAILER.unpack(tail[-TAIL_BYTES:-len(MAGIC)])
    return length


def format_overhead(data: bytes) -> int:
    """Bytes of a whole file that hold no column data: both magics, footer and trailer."""
    return len(MAGIC) + TAIL_BYTES + footer_length(data)


def parse_footer(tail: bytes, size: int) -> TableFile:
    """Parse the footer from a suffix of the file; ``size`` is the full file size."""
    length = footer_length(tail)
    if length + TAIL_BYTES + len(MAGIC) > size:
        raise CorruptFooter(f"footer length {length} exceeds file size {size}")
    if length + TAIL_BYTES > len(tail):
        raise CorruptFooter(f"need {length + TAIL_BYTES} tail bytes, got {len(tail)}")
    raw = tail[len(tail) - TAIL_BYTES - length:len(tail) - TAIL_BYTES]
    try:
        document = json.loads(raw.decode("utf-8"))
        schema = Schema.from_dict(document["schema"])
        footer_start = size - TAIL_BYTES - length
        groups = []
        for group in document["row_groups"]:
            if len(group["columns"]) != len(schema.columns):
                raise CorruptFooter("row group column count differs from schema")
            chunks = []
            for column, record in zip(schema.columns, group["columns"]):
                offset, chunk_length = int(record["offset"]), int(record["length"])
                if offset < len(MAGIC) or offset + chunk_length > footer_start:
                    raise CorruptFooter(f"chunk of '{column.name}' at {offset}+{chunk_length} is out of bounds")
                chunks.append(
                    ColumnChunk(column.name, offset, chunk_length, int(group["rows"]), int(record["nulls"]), record["min"], record["max"])
                )
            groups.append(RowGroup(int(group["rows"]), tuple(chunks)))
    except CorruptFooter:
        raise
    except (ValueError, KeyError, TypeError, ValidationError) as exc:
        raise CorruptFooter(f"footer does not parse: {exc}") from exc
    return TableFile(schema, tuple(groups), size)


def read_footer(data: bytes) -> TableFile:
    if len(data) < len(MAGIC) + TAIL_BYTES or data[: len(MAGIC)] != MAGIC:
        raise CorruptFooter("missing leading magic")
    return parse_footer(data, len(data))


# predicates and reading


@dataclass(frozen=True)
class ColumnRange:
    """``lo <= column <= hi`` with optional open ends and strict bounds."""

    column: str
    lo: Any = None
    hi: Any = None
    lo_inclusive: bool = True
    hi_inclusive: bool = True

    def physical(self, column_type: ColumnType) -> "ColumnRange":
        return ColumnRange(
            self.column,
            to_physical(column_type, self.lo),
            to_physical(column_type, self.hi),
            self.lo_inclusive,
            self.hi_inclusive,
        )

    def disproves(self, low: Any, high: Any) -> bool:
        """True when no value in ``[low, high]`` can satisfy the range."""
        if low is None:
            return True
        if self.lo is not None and (high < self.lo or (high == self.lo and not self.lo_inclusive)):
            return True
        if self.hi is not None and (low > self.hi or (low == self.hi and not self.hi_inclusive)):
            return True
        return False

    def mask(self, physical: np.ndarray) -> np.ndarray:
        result = np.ones(len(physical), dtype=bool)
        if self.lo is not None:
            result &= np.ma.filled(physical >= self.lo if self.lo_inclusive else physical > self.lo, False)
        if self.hi is not None:
            result &= np.ma.filled(physical <= self.hi if self.hi_inclusive else physical < self.hi, False)
        return result


Predicate = Sequence[ColumnRange]


@dataclass
class ReadPlan:
    groups: List[int]
    skipped: int
    columns: List[str]
    decode: List[str]


@dataclass
class ReadResult:
    batches: List[Batch]
    chunks_skipped: int
    bytes_read: int


def plan_read(table: TableFile, columns: Optional[Sequence[str]] = None, predicate: Predicate = ()) -> ReadPlan:
    """Row groups to fetch and columns to decode, from footer statistics only."""
    names = list(columns) if columns is not None else table.schema.names
    for name in names:
        table.schema.column(name)
    ranges = [r.physical(table.schema.column(r.column).type) for r in predicate]
    decode = names + [r.column for r in ranges if r.column not in names]
    decode = list(dict.fromkeys(decode))
    groups: List[int] = []
    skipped = 0
    for index, group in enumerate(table.row_groups):
        if any(r.disproves(group.chunk(r.column).min, group.chunk(r.column).max) for r in ranges):
            skipped += 1
            continue
        groups.append(index)
    return ReadPlan(groups, skipped, names, decode)


def _physical_view(column: Column, values: np.ndarray) -> np.ndarray:
    if column.type is not ColumnType.DATE32:
        return values
    days = (np.ma.getdata(values) - EPOCH).astype(np.int64)
    if isinstance(values, np.ma.MaskedArray):
        return np.ma.MaskedArray(days, mask=np.ma.getmaskarray(values))
    return days


def decode_group(
    table: TableFile,
    group_index: int,
    plan: ReadPlan,
    fetch,
    predicate: Predicate = (),
) -> Batch:
    """Decode one row group; ``fetch(offset, length)`` returns chunk bytes."""
    group = table.row_groups[group_index]
    decoded = {}
    for name in plan.decode:
        chunk = group.chunk(name)
        decoded[name] = decode_chunk(table.schema.column(name), fetch(chunk.offset, chunk.length), group.rows)
    batch = Batch(table.schema.select(plan.decode), decoded)
    if predicate:
        mask = np.ones(group.rows, dtype=bool)
        for item in predicate:
            column = table.schema.column(item.column)
            mask &= item.physical(column.type).mask(_physical_view(column, decoded[item.column]))
        batch = batch.filter(mask)
    return batch.select(plan.columns)


def read_chunks(
    data: bytes,
    columns: Optional[Sequence[str]] = None,
    predicate: Predicate = (),
) -> ReadResult:
    """Read whole file bytes with projection and row-group pruning."""
    table = read_footer(data)
    plan = plan_read(table, columns, predicate)
    bytes_read = format_overhead(data)
    batches = []
    for index in plan.groups:
        def fetch(offset: int, length: int) -> bytes:
            nonlocal bytes_read
            bytes_read += length
            return data[offset:offset + length]

        batches.append(decode_group(table, index, plan, fetch, predicate))
    return ReadResult(batches, plan.skipped, bytes_read)


# table metadata


@dataclass(frozen=True)
class FileMeta:
    key: str
    size: int
    rows: int
    sim_size: int
    stats: Dict[str, Dict[str, Any]] = field(default_factory=dict)

    @property
    def inflation(self) -> float:
        return self.sim_size / self.size if self.size else 1.0

    def projected_bytes(self, columns: Sequence[str]) -> int:
        real = sum(self.stats[name]["bytes"] for name in columns if name in self.stats)
        return int(math.ceil(real * self.inflation))

    def to_dict(self) -> Dict[str, Any]:
        return {"key": self.key, "size": self.size, "rows": self.rows, "sim_size": self.sim_size, "stats": self.stats}


@dataclass
class TableMeta:
    table: str
    schema: Schema
    files: List[FileMeta]

    @property
    def rows(self) -> int:
        return sum(f.rows for f in self.files)

    @property
    def sim_bytes(self) -> int:
        return sum(f.sim_size for f in self.files)

    def to_dict(self) -> Dict[str, Any]:
        return {"table": self.table, "schema": self.schema.to_dict(), "files": [f.to_dict() for f in self.files]}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TableMeta":
        files = [FileMeta(f["key"], f["size"], f["rows"], f.get("sim_size", f["size"]), f.get("stats", {})) for f in data["files"]]
        return cls(data["table"], Schema.from_dict(data["schema"]), files)


def describe(key: str, data: bytes, sim_size: Optional[int] = None) -> FileMeta:
    footer = read_footer(data)
    return FileMeta(key, len(data), footer.num_rows, sim_size or len(data), footer.column_stats())


# generators

LINEITEM = Schema.of(
    ("l_orderkey", "int64"),
    ("l_quantity", "float64"),
    ("l_extendedprice", "float64"),
    ("l_discount", "float64"),
    ("l_tax", "float64"),
    ("l_returnflag", "utf8"),
    ("l_linestatus", "utf8"),
    ("l_shipdate", "date32"),
    ("l_commitdate", "date32"),
    ("l_receiptdate", "date32"),
    ("l_shipmode", "utf8"),
)
ORDERS = Schema.of(
    ("o_orderkey", "int64"),
    ("o_custkey", "int64"),
    ("o_orderdate", "date32"),
    ("o_orderpriority", "utf8"),
)
CLICKSTREAMS = Schema.of(
    ("cs_user_id", "int64"),
    ("cs_item_id", "int64"),
    ("cs_click_date", "date32"),
    ("cs_click_time", "int64"),
    ("cs_is_purchase", "int64"),
)
ITEM = Schema.of(
    ("i_item_id", "int64"),
    ("i_category_id", "int64"),
    ("i_category", "utf8"),
)

SCHEMAS = {"lineitem": LINEITEM, "orders": ORDERS, "clickstreams": CLICKSTREAMS, "item": ITEM}

# rows at scale 1, partitions at scale 1000, bytes per encoded row
_TABLE_SHAPE = {
    "lineitem": (6_000_000, 996, 79),
    "orders": (1_500_000, 249, 33),
    "clickstreams": (4_000_000, 1000, 36),
    "item": (18_000, 1, 23),
}

SHIP_MODES = np.array(["AIR", "FOB", "MAIL", "RAIL", "REG AIR", "SHIP", "TRUCK"], dtype=object)
PRIORITIES = np.array(["1-URGENT", "2-HIGH", "3-MEDIUM", "4-NOT SPECIFIED", "5-LOW"], dtype=object)
START_DATE = to_physical(ColumnType.DATE32, "1992-01-01")
CURRENT_DATE = to_physical(ColumnType.DATE32, "1995-06-17")
CLICK_START = to_physical(ColumnType.DATE32, "2001-01-01")


def table_rows(kind: str, scale: float) -> int:
    rows, _, _ = _table_shape(kind)
    if kind == "item":
        return max(100, int(round(rows * scale)))
    return int(round(rows * scale))


def _table_shape(kind: str) -> Tuple[int, int, int]:
    try:
        return _TABLE_SHAPE[kind]
    except KeyError as exc:
        raise ValidationError(f"unknown table kind '{kind}', expected one of {sorted(_TABLE_SHAPE)}") from exc


def partition_count(kind: str, scale: float, file_bytes: int = DEFAULT_FILE_BYTES) -> int:
    """Proportional to the published partitioning, never above ``file_bytes`` per file."""
    _, partitions, row_bytes = _table_shape(kind)
    if kind == "item":
        return 1
    proportional = int(round(partitions * scale / 1000))
    by_size = int(math.ceil(table_rows(kind, scale) * row_bytes / file_bytes))
    return max(1, proportional, by_size)


def _lineitem(rng: RngStream, rows: int, scale: float) -> Dict[str, np.ndarray]:
    orders = max(1, int(round(_TABLE_SHAPE["orders"][0] * scale)))
    quantity = rng.integers(1, 51, rows)
    retail_cents = rng.integers(90_000, 210_000, rows)
    order_date = START_DATE + rng.integers(0, 2406, rows)
    ship = order_date + rng.integers(1, 122, rows)
    commit = order_date + rng.integers(30, 91, rows)
    receipt = ship + rng.integers(1, 31, rows)
    returned = np.where(rng.random(rows) < 0.5, "R", "A").astype(object)
    return {
        "l_orderkey": np.sort(rng.integers(1, orders + 1, rows)),
        "l_quantity": quantity.astype(np.float64),
        "l_extendedprice": (quantity * retail_cents) / 100.0,
        "l_discount": rng.integers(0, 11, rows) / 100.0,
        "l_tax": rng.integers(0, 9, rows) / 100.0,
        "l_returnflag": np.where(receipt <= CURRENT_DATE, returned, "N").astype(object),
        "l_linestatus": np.where(ship > CURRENT_DATE, "O", "F").astype(object),
        "l_shipdate": ship.astype("<i4"),
        "l_commitdate": commit.astype("<i4"),
        "l_receiptdate": receipt.astype("<i4"),
        "l_shipmode": SHIP_MODES[rng.integers(0, len(SHIP_MODES), rows)],
    }


def _orders(rng: RngStream, rows: int, scale: float) -> Dict[str, np.ndarray]:
    return {
        "o_orderkey": np.arange(1, rows + 1, dtype=np.int64),
        "o_custkey": rng.integers(1, max(2, rows // 10) + 1, rows),
        "o_orderdate": (START_DATE + rng.integers(0, 2406, rows)).astype("<i4"),
        "o_orderpriority": PRIORITIES[rng.integers(0, len(PRIORITIES), rows)],
    }


def _clickstreams(rng: RngStream, rows: int, scale: float) -> Dict[str, np.ndarray]:
    users = max(5, rows // 200)
    items = table_rows("item", scale)
    return {
        "cs_user_id": rng.integers(1, users + 1, rows),
        "cs_item_id": rng.integers(1, items + 1, rows),
        "cs_click_date": (CLICK_START + rng.integers(0, 365, rows)).astype("<i4"),
        "cs_click_time": rng.integers(0, 86_400, rows),
        "cs_is_purchase": (rng.random(rows) < 0.05).astype(np.int64),
    }


def _item(rng: RngStream, rows: int, scale: float) -> Dict[str, np.ndarray]:
    category = rng.integers(1, 11, rows)
    return {
        "i_item_id": np.arange(1, rows + 1, dtype=np.int64),
        "i_category_id": category,
        "i_category": np.array([f"category-{c:02d}" for c in category.tolist()], dtype=object),
    }


_GENERATORS = {"lineitem": _lineitem, "orders": _orders, "clickstreams": _clickstreams, "item": _item}


def _date_columns(schema: Schema, data: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    out = {}
    for column in schema.columns:
        values = data[column.name]
        if column.type is ColumnType.DATE32:
            values = _logical_array(column.type, values)
        out[column.name] = values
    return out


def generate_files(
    kind: str,
    scale: float,
    seed: int,
    partitions: Optional[int] = None,
    file_bytes: int = DEFAULT_FILE_BYTES,
    row_group_rows: int = DEFAULT_ROW_GROUP_ROWS,
) -> List[Tuple[str, bytes]]:
    """Deterministic ``(key, file bytes)`` pairs for one table."""
    if scale <= 0:
        raise ValidationError(f"scale must be positive, got {scale}")
    _table_shape(kind)
    schema = SCHEMAS[kind]
    rows = table_rows(kind, scale)
    if rows == 0:
        return []
    count = 1 if kind == "item" else (partitions or partition_count(kind, scale, file_bytes))
    rng = RngStream(seed, f"datagen:{kind}")
    data = _date_columns(schema, _GENERATORS[kind](rng, rows, scale))
    bounds = np.linspace(0, rows, count + 1).round().astype(int)
    files = []
    for index in range(count):
        lo, hi = bounds[index], bounds[index + 1]
        part = {name: values[lo:hi] for name, values in data.items()}
        files.append((table_key(kind, index), write_table(schema, [part], row_group_rows)))
    logger.debug("generated %s: %d rows in %d files", kind, rows, count)
    return files


def generate(
    kind: str,
    scale: float,
    seed: int,
    container=None,
    partitions: Optional[int] = None,
    file_bytes: int = DEFAULT_FILE_BYTES,
    row_group_rows: int = DEFAULT_ROW_GROUP_ROWS,
    sim_file_bytes: Optional[int] = None,
) -> TableMeta:
    """Generate a table, store it in ``container`` (a bucket) when given, return its metadata.

    ``sim_file_bytes`` makes every file count as that many bytes in timing
    and pricing while the real rows stay desk-sized.
    """
    files = generate_files(kind, scale, seed, partitions, file_bytes, row_group_rows)
    metas = []
    for key, data in files:
        if container is not None:
            container.put_object(key, data, sim_file_bytes)
        metas.append(describe(key, data, sim_file_bytes))
    return TableMeta(kind, SCHEMAS[kind], metas)
