import datetime

import numpy as np
import pytest

from skyrise_lab.dataform import (
    Batch,
    ColumnRange,
    ITEM,
    LINEITEM,
    Schema,
    TAIL_BYTES,
    generate,
    generate_files,
    parse_footer,
    read_chunks,
    read_footer,
    table_rows,
    write_table,
)
from skyrise_lab.errors import CorruptFooter, SchemaMismatch, ValidationError
from skyrise_lab.storesim import create_container


SMALL = Schema.of(("id", "int64"), ("value", "float64"), ("day", "date32"), ("tag", "utf8"))


def _small_batch(rows=10):
    return {
        "id": np.arange(rows, dtype=np.int64),
        "value": np.arange(rows, dtype=np.float64) * 1.5,
        "day": np.datetime64("2020-01-01") + np.arange(rows).astype("timedelta64[D]"),
        "tag": np.array([f"t{i % 3}" for i in range(rows)], dtype=object),
    }


def test_schema_rejects_duplicates_and_empty():
    with pytest.raises(ValidationError):
        Schema.of(("a", "int64"), ("a", "utf8"))
    with pytest.raises(ValidationError):
        Schema(())


def test_generate_is_deterministic():
    first = generate_files("lineitem", 0.001, seed=3)
    second = generate_files("lineitem", 0.001, seed=3)
    assert first == second
    assert generate_files("lineitem", 0.001, seed=4) != first


def test_lineitem_row_count():
    assert table_rows("lineitem", 0.001) == 6000
    meta = generate("lineitem", 0.001, seed=1)
    assert meta.rows == 6000


def test_item_has_one_partition():
    for scale in (0.001, 0.01, 1.0):
        assert len(generate_files("item", scale, seed=1)) == 1


def test_generate_stores_files_with_sim_sizes(storage):
    bucket = create_container(storage.profiles["object_standard"], "data")
    meta = generate("orders", 0.001, seed=1, container=bucket, partitions=3, sim_file_bytes=1_000_000)
    assert bucket.list_keys("tables/orders/") == [f.key for f in meta.files]
    assert all(bucket.sim_size(f.key) == 1_000_000 for f in meta.files)
    assert meta.files[0].inflation > 1


def test_empty_input_writes_valid_file():
    data = write_table(SMALL, [])
    table = read_footer(data)
    assert table.row_groups == ()
    assert read_chunks(data).batches == []


def test_chunk_stats_are_exact():
    schema = Schema.of(("x", "int64"))
    table = read_footer(write_table(schema, [{"x": [1, 5, 3]}]))
    chunk = table.row_groups[0].chunk("x")
    assert (chunk.min, chunk.max, chunk.null_count) == (1, 5, 0)


def test_round_trip():
    batch = _small_batch(25)
    data = write_table(SMALL, [batch], row_group_rows=7)
    result = read_chunks(data)
    assert len(result.batches) == 4
    rows = [row for b in result.batches for row in b.rows()]
    assert rows == Batch.from_pydict(SMALL, batch).rows()
    assert rows[1] == (1, 1.5, datetime.date(2020, 1, 2), "t1")


def test_stats_match_decoded_data():
    data = write_table(SMALL, [_small_batch(30)], row_group_rows=8)
    table = read_footer(data)
    for index, group in enumerate(table.row_groups):
        batch = read_chunks(data).batches[index]
        values = batch.column("id")
        assert group.chunk("id").min == values.min()
        assert group.chunk("id").max == values.max()


def test_projection_decodes_only_requested_columns():
    data = write_table(SMALL, [_small_batch(5)])
    result = read_chunks(data, columns=["tag"])
    assert result.batches[0].schema.names == ["tag"]
    assert result.bytes_read < len(data)


def test_predicate_below_min_skips_everything():
    data = write_table(SMALL, [_small_batch(40)], row_group_rows=10)
    result = read_chunks(data, predicate=[ColumnRange("id", hi=-1)])
    assert result.batches == []
    assert result.chunks_skipped == 4


def test_date_range_pruning():
    data = write_table(SMALL, [_small_batch(40)], row_group_rows=10)
    result = read_chunks(data, predicate=[ColumnRange("day", lo="2020-01-25")])
    assert result.chunks_skipped == 2
    assert sum(b.num_rows for b in result.batches) == 16


def test_pruning_matches_full_scan_oracle():
    rng = np.random.default_rng(11)
    rows = 500
    batch = {
        "id": np.sort(rng.integers(0, 1000, rows)),
        "value": rng.random(rows),
        "day": np.datetime64("2021-01-01") + rng.integers(0, 300, rows).astype("timedelta64[D]"),
        "tag": np.array(["x"] * rows, dtype=object),
    }
    data = write_table(SMALL, [batch], row_group_rows=32)
    predicate = [ColumnRange("id", lo=200, hi=450, hi_inclusive=False), ColumnRange("value", hi=0.5)]
    pruned = read_chunks(data, columns=["id", "value"], predicate=predicate)
    assert pruned.chunks_skipped > 0
    full = read_chunks(data, columns=["id", "value"])
    oracle = [
        row for b in full.batches for row in b.rows()
        if 200 <= row[0] < 450 and row[1] <= 0.5
    ]
    assert [row for b in pruned.batches for row in b.rows()] == oracle


def test_nulls_round_trip_and_stats():
    schema = Schema.of(("x", "int64", True), ("s", "utf8", True))
    data = write_table(schema, [{"x": [None, 4, 2, None], "s": ["a", None, "c", "b"]}])
    table = read_footer(data)
    chunk = table.row_groups[0].chunk("x")
    assert (chunk.min, chunk.max, chunk.null_count) == (2, 4, 2)
    rows = read_chunks(data).batches[0].rows()
    assert rows == [(None, "a"), (4, None), (2, "c"), (None, "b")]


def test_all_null_chunk_is_pruned():
    schema = Schema.of(("x", "int64", True))
    data = write_table(schema, [{"x": [None, None]}])
    assert read_chunks(data, predicate=[ColumnRange("x", lo=0)]).chunks_skipped == 1


def test_schema_mismatch():
    with pytest.raises(SchemaMismatch):
        write_table(SMALL, [{"id": [1]}])
    with pytest.raises(SchemaMismatch):
        write_table(Schema.of(("x", "int64")), [{"x": [None]}])
    with pytest.raises(SchemaMismatch):
        write_table(Schema.of(("x", "int64")), [{"x": [1.5]}])


def test_corrupt_footer_detected():
    data = write_table(ITEM, [{"i_item_id": [1], "i_category_id": [2], "i_category": ["a"]}])
    with pytest.raises(CorruptFooter):
        read_footer(data[:-1])
    with pytest.raises(CorruptFooter):
        read_footer(data[:-TAIL_BYTES] + (10**6).to_bytes(4, "little") + data[-5:])
    damaged = data.replace(b'"row_groups"', b'"row_grOups"')
    with pytest.raises(CorruptFooter):
        read_footer(damaged)


def test_footer_from_short_tail_needs_more_bytes():
    files = generate_files("lineitem", 0.001, seed=1)
    _, data = files[0]
    with pytest.raises(CorruptFooter):
        parse_footer(data[-64:], len(data))
    assert parse_footer(data[-4096:], len(data)).num_rows == 6000


def test_lineitem_schema_dates_are_ordered():
    _, data = generate_files("lineitem", 0.001, seed=2)[0]
    batch = read_chunks(data, columns=["l_shipdate", "l_receiptdate"]).batches[0]
    assert (batch.column("l_receiptdate") > batch.column("l_shipdate")).all()
    assert LINEITEM.column("l_shipdate").type.value == "date32"
