import csv
import io

import pytest

from skyrise_lab.econ import (
    BeasInput,
    BeiCapacityInput,
    BeiRequestInput,
    NeverBreaksEven,
    beas,
    bei_capacity,
    bei_request,
    break_even_qph,
    display_value,
    format_interval,
    peak_to_average,
    render_scan_table,
    render_shuffle_table,
    scan_break_even_table,
    scan_table_csv,
    shuffle_break_even_table,
    shuffle_table_csv,
    table_to_dict,
)
from skyrise_lab.errors import DivisionDomain
from skyrise_lab.units import DAY, HOUR, MINUTE

PUBLISHED_SCAN = {
    "RAM/SSD": ["38s", "31s", "31s", "31s"],
    "RAM/EBS": ["27min", "7min", "3min", "3min"],
    "RAM/S3 Standard": ["2d", "12h", "3min", "41s"],
    "RAM/S3 Express": ["23h", "6h", "36min", "39min"],
    "SSD/S3 Standard": ["59d", "15d", "1h", "21min"],
    "SSD/S3 Express": ["29d", "7d", "18h", "20h"],
    "SSD/X-Region": ["70d", "26d", "11d", "11d"],
}

UNIT_SECONDS = {"s": 1, "min": MINUTE, "h": HOUR, "d": DAY}


def _parse(cell):
    for unit in ("min", "s", "h", "d"):
        if cell.endswith(unit):
            return float(cell[: -len(unit)]), unit
    raise AssertionError(cell)


def _matches(seconds, cell):
    value, unit = _parse(cell)
    expected = value * UNIT_SECONDS[unit]
    if abs(seconds - expected) <= 0.10 * expected:
        return True
    shown, shown_unit = display_value(seconds)
    return shown_unit == unit and abs(shown - value) <= 1


def test_capacity_formula_ram_ssd_4k():
    data = BeiCapacityInput(256, 53750, 1.76, 0.2125 / 1024)
    assert bei_capacity(data) == pytest.approx(40.4, abs=0.2)


def test_capacity_bandwidth_clamp():
    small = BeiCapacityInput(0.25, 53750, 1.76, 0.2125 / 1024, bandwidth_mb_s=256)
    large = BeiCapacityInput(0.0625, 53750, 1.76, 0.2125 / 1024, bandwidth_mb_s=256)
    assert small.effective_iops == 64
    assert bei_capacity(small) == pytest.approx(bei_capacity(large))


def test_capacity_invariant_within_family():
    one = BeiCapacityInput(256, 50_000, 2.0, 0.001)
    eight = BeiCapacityInput(256, 400_000, 16.0, 0.001)
    assert bei_capacity(one) == pytest.approx(bei_capacity(eight))


def test_capacity_zero_denominator():
    with pytest.raises(DivisionDomain):
        bei_capacity(BeiCapacityInput(256, 0, 1.0, 1.0))


def test_request_formula_properties():
    base = bei_request(BeiRequestInput(4, 1e-5, 1e-8))
    assert bei_request(BeiRequestInput(4, 2e-5, 1e-8)) == pytest.approx(2 * base)
    assert bei_request(BeiRequestInput(4, 1e-5, 2e-8)) == pytest.approx(base / 2)
    assert bei_request(BeiRequestInput(4, 0, 1e-8)) == 0
    with pytest.raises(DivisionDomain):
        bei_request(BeiRequestInput(4, 1e-5, 0))


def test_beas_formula_and_never():
    assert beas(BeasInput(4e-5, 1000, 0.01)) == pytest.approx(4.0)
    assert beas(BeasInput(0, 1000, 0.01)) == 0
    assert isinstance(beas(BeasInput(2e-5, 1000, 0.01, transfer_per_mb=1e-4)), NeverBreaksEven)


def test_beas_invariant_to_vm_size():
    assert beas(BeasInput(4e-5, 1000, 0.01)) == pytest.approx(beas(BeasInput(4e-5, 8000, 0.08)))


def test_break_even_qph():
    assert 547 <= break_even_qph(4.87, 201, 13.6) <= 575
    assert break_even_qph(13.6 * 4, 4, 13.6) == pytest.approx(1.0)
    assert break_even_qph(5, 10, 20) == pytest.approx(2 * break_even_qph(5, 10, 10))
    # 128 Q/h for the join query does not follow from these inputs
    assert break_even_qph(21.19, 284, 13.6) == pytest.approx(182.3, abs=0.5)
    with pytest.raises(DivisionDomain):
        break_even_qph(0, 1, 1)


def test_peak_to_average():
    assert peak_to_average([(7, 3.0)]) == 1.0
    assert peak_to_average([(4, 1.0), (1, 1.0)]) == pytest.approx(1.6)
    with pytest.raises(DivisionDomain):
        peak_to_average([(4, 0.0)])
    with pytest.raises(DivisionDomain):
        peak_to_average([])


@pytest.mark.parametrize(
    "seconds,text",
    [(38.2, "38s"), (59.4, "59s"), (60, "1min"), (1624, "27min"), (3600, "1h"), (5000, "1h"), (86_400, "1d"), (177_640, "2d")],
)
def test_format_interval(seconds, text):
    assert format_interval(seconds) == text


def test_scan_table_reproduces_published_cells(catalog):
    rows = scan_break_even_table(catalog)
    assert [row.label for row in rows] == list(PUBLISHED_SCAN)
    for row in rows:
        for value, cell in zip(row.seconds, PUBLISHED_SCAN[row.label]):
            assert _matches(value, cell), (row.label, cell, format_interval(value))


def test_transfer_fees_break_inverse_proportionality(catalog):
    table = table_to_dict(scan_break_even_table(catalog))
    standard = table["RAM/S3 Standard"]
    express = table["RAM/S3 Express"]
    assert standard["4 MiB"] / standard["16 MiB"] == pytest.approx(4.0)
    assert express["16 MiB"] > express["4 MiB"]


def test_shuffle_table(catalog):
    headers, rows = shuffle_break_even_table(catalog)
    assert headers[-1] == "c6gn.xlarge (reserved)"
    standard, express = rows
    for value, published in zip(standard.sizes, [2, 2, 7, 16]):
        assert value == pytest.approx(published, rel=0.25)
    assert all(isinstance(value, NeverBreaksEven) for value in express.sizes)


def test_rendered_tables(catalog):
    text = render_scan_table(scan_break_even_table(catalog))
    lines = text.splitlines()
    assert lines[0].split()[:2] == ["Tiers", "4"]
    assert set(lines[1]) <= {"-", " "}
    assert len(lines) == 2 + 7
    headers, rows = shuffle_break_even_table(catalog)
    shuffle = render_shuffle_table(headers, rows)
    assert "--" in shuffle.splitlines()[-1]


def test_csv_tables_parse(catalog):
    parsed = list(csv.reader(io.StringIO(scan_table_csv(scan_break_even_table(catalog)))))
    assert parsed[0] == ["tiers", "4 KiB", "16 KiB", "4 MiB", "16 MiB"]
    assert len(parsed) == 8
    headers, rows = shuffle_break_even_table(catalog)
    shuffle = list(csv.reader(io.StringIO(shuffle_table_csv(headers, rows))))
    assert shuffle[2][1:] == ["never"] * 4
