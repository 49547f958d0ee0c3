"""Break-even economics: caching intervals, shuffle access sizes, query rates.

All inputs are in cents and MiB. Each table function takes the price catalog
so the tables can be re-derived for another price sheet.
"""

import csv
import io
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

from skyrise_lab.errors import DivisionDomain
from skyrise_lab.pricing import PriceCatalog
from skyrise_lab.units import DAY, GiB, HOUR, KiB, MINUTE, MiB, gbps

logger = logging.getLogger(__name__)

ACCESS_SIZES = (4 * KiB, 16 * KiB, 4 * MiB, 16 * MiB)


class NeverBreaksEven:
    """Marker result: the per-byte fee alone exceeds the VM's per-byte cost."""

    def __repr__(self) -> str:
        return "NeverBreaksEven"

    def __str__(self) -> str:
        return "--"


NEVER = NeverBreaksEven()


@dataclass(frozen=True)
class BeiCapacityInput:
    pages_per_mb: float
    accesses_per_second_per_disk: float
    rent_per_hour_per_disk: float
    rent_per_hour_per_mb_ram: float
    bandwidth_mb_s: Optional[float] = None

    @property
    def effective_iops(self) -> float:
        if self.bandwidth_mb_s is None:
            return self.accesses_per_second_per_disk
        return min(self.accesses_per_second_per_disk, self.bandwidth_mb_s * self.pages_per_mb)


@dataclass(frozen=True)
class BeiRequestInput:
    pages_per_mb: float
    price_per_access_tier2: float
    rent_per_second_per_mb_tier1: float


@dataclass(frozen=True)
class BeasInput:
    price_per_access: float
    mb_per_hour_per_server: float
    rent_per_hour_per_server: float
    transfer_per_mb: float = 0.0


def bei_capacity(data: BeiCapacityInput) -> float:
    """Seconds between accesses at which caching a page costs as much as the disk access."""
    iops = data.effective_iops
    if iops <= 0 or data.rent_per_hour_per_mb_ram <= 0:
        raise DivisionDomain("bei_capacity needs positive IOPS and RAM rent")
    return (data.pages_per_mb / iops) * (data.rent_per_hour_per_disk / data.rent_per_hour_per_mb_ram)


def bei_request(data: BeiRequestInput) -> float:
    if data.rent_per_second_per_mb_tier1 <= 0:
        raise DivisionDomain("bei_request needs a positive tier-1 rent")
    return data.pages_per_mb * data.price_per_access_tier2 / data.rent_per_second_per_mb_tier1


def beas(data: BeasInput) -> Union[float, NeverBreaksEven]:
    """Access size (MiB) where a request-priced store matches a provisioned VM."""
    if data.rent_per_hour_per_server <= 0 or data.mb_per_hour_per_server <= 0:
        raise DivisionDomain("beas needs positive VM rent and bandwidth")
    vm_per_mb = data.rent_per_hour_per_server / data.mb_per_hour_per_server
    if data.transfer_per_mb > 0 and data.transfer_per_mb >= vm_per_mb:
        return NEVER
    return data.price_per_access / (vm_per_mb - data.transfer_per_mb)


def break_even_qph(faas_cost_per_query: float, peak_nodes: int, vm_hourly: float) -> float:
    """Queries per hour below which running every query on functions is cheaper."""
    if faas_cost_per_query <= 0:
        raise DivisionDomain("faas cost per query must be positive")
    return peak_nodes * vm_hourly / faas_cost_per_query


def peak_to_average(stage_profiles: Sequence[Tuple[float, float]]) -> float:
    """Peak node count over the duration-weighted mean node count."""
    if not stage_profiles:
        raise DivisionDomain("no stages")
    if any(duration <= 0 for _, duration in stage_profiles):
        raise DivisionDomain("stage durations must be positive")
    total = sum(duration for _, duration in stage_profiles)
    mean = sum(nodes * duration for nodes, duration in stage_profiles) / total
    return max(nodes for nodes, _ in stage_profiles) / mean


def format_interval(seconds: float) -> str:
    if seconds < MINUTE:
        return f"{round(seconds)}s"
    if seconds < HOUR:
        return f"{round(seconds / MINUTE)}min"
    if seconds < DAY:
        return f"{round(seconds / HOUR)}h"
    return f"{round(seconds / DAY)}d"


def display_value(seconds: float) -> Tuple[float, str]:
    """Seconds in the unit ``format_interval`` would pick."""
    for limit, unit, scale in ((MINUTE, "s", 1), (HOUR, "min", MINUTE), (DAY, "h", HOUR)):
        if seconds < limit:
            return seconds / scale, unit
    return seconds / DAY, "d"


def format_size(mib: Union[float, NeverBreaksEven]) -> str:
    if isinstance(mib, NeverBreaksEven):
        return "--"
    return f"{round(mib)} MiB"


def _label(size: int) -> str:
    return f"{size // MiB} MiB" if size >= MiB else f"{size // KiB} KiB"


# tier rents


def ram_rent_per_mb_hour(catalog: PriceCatalog) -> float:
    return float(catalog.ram_per_gib_h) / 1024


def ssd_rent(catalog: PriceCatalog, size: str = "xlarge") -> Tuple[float, float, float, float]:
    """Instance SSD as (rent/h, MiB capacity, IOPS, MiB/s): c6gd minus c6g of the same size."""
    with_ssd = catalog.vm_price(f"c6gd.{size}")
    plain = catalog.vm_price(f"c6g.{size}")
    rent = float(with_ssd.hourly - plain.hourly)
    return rent, with_ssd.ssd_gib * 1024, with_ssd.ssd_iops, with_ssd.ssd_bw_mib_s


def _access_price(catalog: PriceCatalog, service: str, size: int, cross_region: bool = False) -> float:
    price = catalog.storage_price(service)
    cents = float(price.per_read)
    surcharge = max(0, size - price.surcharge_threshold) if price.transfer_read_per_gib else 0
    cents += surcharge / GiB * float(price.transfer_read_per_gib)
    if cross_region:
        cents += size / GiB * float(catalog.cross_region_per_gib)
    return cents


@dataclass
class TableRow:
    label: str
    seconds: List[float]


def scan_break_even_table(catalog: PriceCatalog, sizes: Sequence[int] = ACCESS_SIZES, ssd_size: str = "xlarge") -> List[TableRow]:
    """Break-even intervals for caching tier pairs at each access size."""
    ram_mb_h = ram_rent_per_mb_hour(catalog)
    ram_mb_s = ram_mb_h / HOUR
    ssd_hourly, ssd_mib, ssd_iops, ssd_bw = ssd_rent(catalog, ssd_size)
    ssd_mb_s = ssd_hourly / ssd_mib / HOUR
    ebs = catalog.device_price("ebs_gp3")
    rows: List[TableRow] = []

    def capacity_row(label: str, rent: float, iops: float, bandwidth: float) -> TableRow:
        values = []
        for size in sizes:
            pages = MiB / size
            values.append(bei_capacity(BeiCapacityInput(pages, iops, rent, ram_mb_h, bandwidth)))
        return TableRow(label, values)

    def request_row(label: str, service: str, tier1_mb_s: float, cross_region: bool = False) -> TableRow:
        values = []
        for size in sizes:
            price = _access_price(catalog, service, size, cross_region)
            values.append(bei_request(BeiRequestInput(MiB / size, price, tier1_mb_s)))
        return TableRow(label, values)

    rows.append(capacity_row("RAM/SSD", ssd_hourly, ssd_iops, ssd_bw))
    rows.append(capacity_row("RAM/EBS", float(ebs.hourly), ebs.iops, ebs.bw_mib_s))
    rows.append(request_row("RAM/S3 Standard", "object_standard", ram_mb_s))
    rows.append(request_row("RAM/S3 Express", "object_express", ram_mb_s))
    rows.append(request_row("SSD/S3 Standard", "object_standard", ssd_mb_s))
    rows.append(request_row("SSD/S3 Express", "object_express", ssd_mb_s))
    rows.append(request_row("SSD/X-Region", "object_standard", ssd_mb_s, cross_region=True))
    return rows


@dataclass
class BeasRow:
    label: str
    sizes: List[Union[float, NeverBreaksEven]]


SHUFFLE_VMS = (
    ("c6g.xlarge", False),
    ("c6g.8xlarge", False),
    ("c6gn.xlarge", False),
    ("c6gn.xlarge", True),
)


def shuffle_break_even_table(catalog: PriceCatalog, vms: Sequence[Tuple[str, bool]] = SHUFFLE_VMS) -> Tuple[List[str], List[BeasRow]]:
    """Break-even access sizes of object storage against VM shuffle clusters.

    VM bandwidth is the baseline network bandwidth; burst credits are ignored.
    """
    headers = []
    inputs = []
    for instance, reserved in vms:
        price = catalog.vm_price(instance)
        hourly = price.reserved_hourly if reserved else price.hourly
        if hourly is None:
            raise DivisionDomain(f"{instance} has no reserved price")
        mb_per_hour = gbps(price.baseline_gbps) / MiB * HOUR
        headers.append(f"{instance}{' (reserved)' if reserved else ''}")
        inputs.append((float(hourly), mb_per_hour))
    rows = []
    for label, service in (("S3 Standard", "object_standard"), ("S3 Express", "object_express")):
        storage = catalog.storage_price(service)
        per_mb = float(storage.transfer_read_per_gib) / 1024
        values = [
            beas(BeasInput(float(storage.per_read), mb_per_hour, hourly, per_mb))
            for hourly, mb_per_hour in inputs
        ]
        rows.append(BeasRow(label, values))
    return headers, rows


def render_scan_table(rows: List[TableRow], sizes: Sequence[int] = ACCESS_SIZES) -> str:
    header = ["Tiers"] + [_label(size) for size in sizes]
    body = [[row.label] + [format_interval(value) for value in row.seconds] for row in rows]
    return _align([header] + body)


def render_shuffle_table(headers: List[str], rows: List[BeasRow]) -> str:
    body = [[row.label] + [format_size(value) for value in row.sizes] for row in rows]
    return _align([["Storage"] + headers] + body)


def _align(rows: List[List[str]]) -> str:
    widths = [max(len(row[col]) for row in rows) for col in range(len(rows[0]))]
    lines = []
    for index, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip())
        if index == 0:
            lines.append("  ".join("-" * width for width in widths))
    return "\n".join(lines)


def to_csv(rows: List[List[str]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerows(rows)
    return buffer.getvalue()


def scan_table_csv(rows: List[TableRow], sizes: Sequence[int] = ACCESS_SIZES) -> str:
    header = ["tiers"] + [_label(size) for size in sizes]
    return to_csv([header] + [[row.label] + [f"{value:.3f}" for value in row.seconds] for row in rows])


def shuffle_table_csv(headers: List[str], rows: List[BeasRow]) -> str:
    body = [
        [row.label] + ["never" if isinstance(v, NeverBreaksEven) else f"{v:.3f}" for v in row.sizes]
        for row in rows
    ]
    return to_csv([["storage"] + headers] + body)


def table_to_dict(rows: List[TableRow], sizes: Sequence[int] = ACCESS_SIZES) -> Dict[str, Dict[str, float]]:
    return {row.label: {_label(size): value for size, value in zip(sizes, row.seconds)} for row in rows}
