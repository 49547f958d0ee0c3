"""Price catalog and cost accounting.

Prices are read into exact ``Fraction`` values (US cents). Each line item keeps
its exact amount; report components are rounded once to integer milli-cents.
"""

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from skyrise_lab import storesim
from skyrise_lab.config import catalog_path, load_toml
from skyrise_lab.errors import MissingEntry, NegativePrice, UnknownService, ValidationError
from skyrise_lab.units import GB, GiB, HOUR, MiB, ceil_ms

logger = logging.getLogger(__name__)

REQUIRED_STORAGE = ("object_standard", "object_express", "keyvalue", "filesystem")
REQUIRED_COMPUTE = ("lambda_arm",)
CATEGORIES = ("compute", "requests", "transfer", "capacity")

Number = Union[int, float, Fraction]


def _exact(value: Any, where: str) -> Fraction:
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise ValidationError(f"{where}: price must be a number, got {value!r}")
    price = Fraction(str(value))
    if price < 0:
        raise NegativePrice(f"{where}: negative price {value}")
    return price


def to_millicents(cents: Fraction) -> int:
    """Round half up to whole milli-cents."""
    return int(math.floor(cents * 1000 + Fraction(1, 2)))


@dataclass(frozen=True)
class ComputePrice:
    per_gib_h: Fraction
    per_gib_h_tiers: List[Fraction]
    per_vcpu_h: Fraction
    per_request: Fraction
    billing_unit: str = "GiB"

    @property
    def unit_bytes(self) -> int:
        return GiB if self.billing_unit == "GiB" else GB


@dataclass(frozen=True)
class VmPrice:
    hourly: Fraction
    vcpus: int
    mem_gib: float
    baseline_gbps: float
    reserved_hourly: Optional[Fraction] = None
    ssd_gib: float = 0
    ssd_iops: float = 0
    ssd_bw_mib_s: float = 0


@dataclass(frozen=True)
class StoragePrice:
    read_per_M: Fraction
    write_per_M: Fraction
    transfer_read_per_gib: Fraction
    transfer_write_per_gib: Fraction
    capacity_per_gib_mo: Fraction
    surcharge_threshold: int = 0

    @property
    def per_read(self) -> Fraction:
        return self.read_per_M / 1_000_000

    @property
    def per_write(self) -> Fraction:
        return self.write_per_M / 1_000_000


@dataclass(frozen=True)
class DevicePrice:
    hourly: Fraction
    iops: float
    bw_mib_s: float


@dataclass
class PriceCatalog:
    date: str
    compute: Dict[str, ComputePrice]
    vm: Dict[str, VmPrice]
    storage: Dict[str, StoragePrice]
    device: Dict[str, DevicePrice] = field(default_factory=dict)
    ram_per_gib_h: Fraction = Fraction(0)
    cross_region_per_gib: Fraction = Fraction(0)
    region: str = ""
    source: Optional[Path] = None

    def storage_price(self, service: str) -> StoragePrice:
        try:
            return self.storage[service]
        except KeyError as exc:
            raise UnknownService(f"no storage prices for '{service}'") from exc

    def vm_price(self, instance_type: str) -> VmPrice:
        try:
            return self.vm[instance_type]
        except KeyError as exc:
            raise UnknownService(f"no VM prices for '{instance_type}'") from exc

    def compute_price(self, service: str = "lambda_arm") -> ComputePrice:
        try:
            return self.compute[service]
        except KeyError as exc:
            raise UnknownService(f"no compute prices for '{service}'") from exc

    def device_price(self, name: str) -> DevicePrice:
        try:
            return self.device[name]
        except KeyError as exc:
            raise UnknownService(f"no device prices for '{name}'") from exc


@dataclass(frozen=True)
class LineItem:
    category: str
    service: str
    description: str
    quantity: Fraction
    unit_price: Fraction
    amount: Fraction

    def to_dict(self) -> Dict[str, Any]:
        return {
            "category": self.category,
            "service": self.service,
            "description": self.description,
            "quantity": float(self.quantity),
            "unit_price_cents": float(self.unit_price),
            "millicents": to_millicents(self.amount),
        }


@dataclass
class CostReport:
    """Cost in integer milli-cents by component; ``total`` is their sum."""

    line_items: List[LineItem] = field(default_factory=list)

    def add(self, category: str, service: str, description: str, quantity: Number, unit_price: Number) -> "CostReport":
        if category not in CATEGORIES:
            raise ValueError(f"unknown cost category '{category}'")
        quantity = Fraction(quantity)
        unit_price = Fraction(unit_price)
        if quantity < 0:
            raise ValueError(f"{description}: negative quantity")
        self.line_items.append(LineItem(category, service, description, quantity, unit_price, quantity * unit_price))
        return self

    def component(self, category: str) -> int:
        return to_millicents(sum((item.amount for item in self.line_items if item.category == category), Fraction(0)))

    @property
    def compute(self) -> int:
        return self.component("compute")

    @property
    def requests(self) -> int:
        return self.component("requests")

    @property
    def transfer(self) -> int:
        return self.component("transfer")

    @property
    def capacity(self) -> int:
        return self.component("capacity")

    @property
    def total(self) -> int:
        return sum(self.component(category) for category in CATEGORIES)

    @property
    def exact_total(self) -> Fraction:
        return sum((item.amount for item in self.line_items), Fraction(0))

    @property
    def cents(self) -> float:
        return self.total / 1000

    def merge(self, other: "CostReport") -> "CostReport":
        return CostReport(self.line_items + other.line_items)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "compute": self.compute,
            "requests": self.requests,
            "transfer": self.transfer,
            "capacity": self.capacity,
            "total": self.total,
            "unit": "millicents",
            "line_items": [item.to_dict() for item in self.line_items],
        }


def _section(data: Dict[str, Any], name: str, path: Path) -> Dict[str, Any]:
    section = data.get(name)
    if not isinstance(section, dict):
        raise MissingEntry(f"{path}: missing [{name}] section")
    return section


def _require(record: Dict[str, Any], key: str, where: str) -> Any:
    if key not in record:
        raise MissingEntry(f"{where}: missing '{key}'")
    return record[key]


def load_catalog(path: Optional[Union[str, Path]] = None) -> PriceCatalog:
    """Parse and validate a price catalog (default: the shipped 2024 sheet)."""
    path = Path(path) if path is not None else catalog_path()
    data = load_toml(path)
    header = _section(data, "catalog", path)
    date = _require(header, "date", f"{path} [catalog]")

    compute: Dict[str, ComputePrice] = {}
    for name, record in _section(data, "compute", path).items():
        where = f"compute.{name}"
        unit = record.get("billing_unit", "GiB")
        if unit not in ("GiB", "GB"):
            raise ValidationError(f"{where}: billing_unit must be GiB or GB")
        compute[name] = ComputePrice(
            per_gib_h=_exact(_require(record, "per_gib_h", where), where),
            per_gib_h_tiers=[_exact(v, where) for v in record.get("per_gib_h_tiers", [])],
            per_vcpu_h=_exact(record.get("per_vcpu_h", 0), where),
            per_request=_exact(record.get("per_request", 0), where),
            billing_unit=unit,
        )

    vm: Dict[str, VmPrice] = {}
    for name, record in data.get("vm", {}).items():
        where = f"vm.{name}"
        reserved = record.get("reserved_hourly")
        vm[name] = VmPrice(
            hourly=_exact(_require(record, "hourly", where), where),
            vcpus=int(_require(record, "vcpus", where)),
            mem_gib=float(record.get("mem_gib", 0)),
            baseline_gbps=float(_require(record, "baseline_gbps", where)),
            reserved_hourly=_exact(reserved, where) if reserved is not None else None,
            ssd_gib=float(record.get("ssd_gib", 0)),
            ssd_iops=float(record.get("ssd_iops", 0)),
            ssd_bw_mib_s=float(record.get("ssd_bw_mib_s", 0)),
        )

    storage: Dict[str, StoragePrice] = {}
    for name, record in _section(data, "storage", path).items():
        where = f"storage.{name}"
        storage[name] = StoragePrice(
            read_per_M=_exact(_require(record, "read_per_M", where), where),
            write_per_M=_exact(_require(record, "write_per_M", where), where),
            transfer_read_per_gib=_exact(record.get("transfer_read_per_gib", 0), where),
            transfer_write_per_gib=_exact(record.get("transfer_write_per_gib", 0), where),
            capacity_per_gib_mo=_exact(record.get("capacity_per_gib_mo", 0), where),
            surcharge_threshold=int(record.get("surcharge_threshold", 0)),
        )

    device: Dict[str, DevicePrice] = {}
    for name, record in data.get("device", {}).items():
        where = f"device.{name}"
        device[name] = DevicePrice(
            hourly=_exact(_require(record, "hourly", where), where),
            iops=float(_require(record, "iops", where)),
            bw_mib_s=float(_require(record, "bw_mib_s", where)),
        )

    for name in REQUIRED_STORAGE:
        if name not in storage:
            raise MissingEntry(f"{path}: missing storage entry '{name}'")
    for name in REQUIRED_COMPUTE:
        if name not in compute:
            raise MissingEntry(f"{path}: missing compute entry '{name}'")

    catalog = PriceCatalog(
        date=str(date),
        compute=compute,
        vm=vm,
        storage=storage,
        device=device,
        ram_per_gib_h=_exact(data.get("memory", {}).get("ram_per_gib_h", 0), "memory"),
        cross_region_per_gib=_exact(data.get("transfer", {}).get("cross_region_per_gib", 0), "transfer"),
        region=str(header.get("region", "")),
        source=path,
    )
    logger.debug("catalog %s dated %s: %d VM types, %d storage services", path, date, len(vm), len(storage))
    return catalog


def storage_cost(
    service: str,
    reads: int,
    writes: int,
    bytes_read: int,
    bytes_written: int,
    catalog: PriceCatalog,
) -> CostReport:
    """Request and transfer fees for aggregate usage of one service.

    The bytes are spread evenly over the requests and each request is metered
    on its own, so transfer fees only cover the part of a request beyond
    ``surcharge_threshold``. Use ``usage_cost`` when the request sizes are known.
    """
    if min(reads, writes, bytes_read, bytes_written) < 0:
        raise ValueError("usage counts must be non-negative")
    price = catalog.storage_price(service)
    meter = RequestMeter(service, price.surcharge_threshold)
    meter.record_spread("get", reads, bytes_read)
    meter.record_spread("put", writes, bytes_written)
    return usage_cost(meter, catalog)


@dataclass
class RequestMeter:
    """Exact per-request metering of one storage service."""

    service: str
    threshold: int = 0
    reads: int = 0
    writes: int = 0
    bytes_read: int = 0
    bytes_written: int = 0
    surcharge_read: int = 0
    surcharge_write: int = 0

    def record(self, op: str, size: int) -> None:
        extra = max(0, size - self.threshold)
        if op == "get":
            self.reads += 1
            self.bytes_read += size
            self.surcharge_read += extra
        else:
            self.writes += 1
            self.bytes_written += size
            self.surcharge_write += extra

    def record_spread(self, op: str, count: int, total: int) -> None:
        """Record ``count`` requests moving ``total`` bytes in sizes differing by at most one byte."""
        if count == 0:
            if total:
                raise ValueError(f"{total} bytes {op} without any request")
            return
        size, larger = divmod(total, count)
        extra = larger * max(0, size + 1 - self.threshold) + (count - larger) * max(0, size - self.threshold)
        if op == "get":
            self.reads += count
            self.bytes_read += total
            self.surcharge_read += extra
        else:
            self.writes += count
            self.bytes_written += total
            self.surcharge_write += extra

    def to_dict(self) -> Dict[str, Any]:
        return {
            "service": self.service,
            "threshold": self.threshold,
            "reads": self.reads,
            "writes": self.writes,
            "bytes_read": self.bytes_read,
            "bytes_written": self.bytes_written,
            "surcharge_read": self.surcharge_read,
            "surcharge_write": self.surcharge_write,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RequestMeter":
        return cls(**{name: data[name] for name in cls.__dataclass_fields__ if name in data})


def usage_cost(meter: RequestMeter, catalog: PriceCatalog, capacity_gib_months: Number = 0) -> CostReport:
    price = catalog.storage_price(meter.service)
    report = CostReport()
    report.add("requests", meter.service, "read requests", meter.reads, price.per_read)
    report.add("requests", meter.service, "write requests", meter.writes, price.per_write)
    report.add("transfer", meter.service, "read transfer", Fraction(meter.surcharge_read, GiB), price.transfer_read_per_gib)
    report.add("transfer", meter.service, "write transfer", Fraction(meter.surcharge_write, GiB), price.transfer_write_per_gib)
    if capacity_gib_months:
        report.add("capacity", meter.service, "stored GiB-months", capacity_gib_months, price.capacity_per_gib_mo)
    return report


def faas_cost(memory_mib: Number, billed_ms: int, invocations: int, catalog: PriceCatalog, service: str = "lambda_arm") -> CostReport:
    """Duration (memory x billed milliseconds) plus per-request fees."""
    price = catalog.compute_price(service)
    units = Fraction(memory_mib) * MiB / price.unit_bytes
    unit_seconds = units * Fraction(billed_ms, 1000)
    report = CostReport()
    report.add("compute", service, f"{price.billing_unit}-seconds", unit_seconds, price.per_gib_h / HOUR)
    report.add("requests", service, "invocations", invocations, price.per_request)
    return report


def vm_cost(instance_type: str, seconds: Number, catalog: PriceCatalog, count: int = 1, reserved: bool = False) -> CostReport:
    """VM rent at per-second granularity (rounded up to whole seconds)."""
    price = catalog.vm_price(instance_type)
    hourly = price.hourly
    if reserved:
        if price.reserved_hourly is None:
            raise MissingEntry(f"vm.{instance_type}: no reserved_hourly price")
        hourly = price.reserved_hourly
    billed = math.ceil(Fraction(seconds) - Fraction(1, 10**9)) if seconds > 0 else 0
    return CostReport().add("compute", instance_type, f"{count} VM x seconds", count * billed, hourly / HOUR)


def billed_unit_seconds(memory_mib: Number, duration_s: float, catalog: PriceCatalog, service: str = "lambda_arm") -> Fraction:
    price = catalog.compute_price(service)
    return Fraction(memory_mib) * MiB / price.unit_bytes * Fraction(ceil_ms(duration_s), 1000)


@dataclass
class WarmingEstimate:
    target_iops: float
    partitions: int
    time_s: float
    requests: float
    cost_cents: float
    extrapolated: bool

    def to_dict(self) -> Dict[str, Any]:
        return {
            "target_iops": self.target_iops,
            "partitions": self.partitions,
            "time_s": round(self.time_s, 3),
            "requests": round(self.requests),
            "cost_cents": round(self.cost_cents, 3),
            "extrapolated": self.extrapolated,
        }


@dataclass
class WarmingModel:
    trajectory: Any
    read_quota: float

    @classmethod
    def measure(cls, calibration, seed: int = 42) -> "WarmingModel":
        profile = calibration.profiles["object_standard"]
        trajectory = storesim.simulate_warmup(profile, calibration.warming, calibration.scaling, seed=seed)
        return cls(trajectory, profile.read_iops_quota)


def warming_cost(target_iops: float, catalog: PriceCatalog, scaling_model=None, service: str = "object_standard") -> WarmingEstimate:
    """Time, billed requests and cost to warm a bucket to ``target_iops`` reads/s.

    ``scaling_model`` is a warm-up trajectory (partition count against cumulative
    time and issued requests) with the single-partition read quota. Every issued
    request is billed, retries included. Beyond the simulated range, time and
    requests follow a degree-2 fit in the partition count.
    """
    if scaling_model is None:
        calibration = storesim.load_storage_calibration()
        scaling_model = WarmingModel.measure(calibration)
    quota = scaling_model.read_quota
    if target_iops < quota:
        raise ValidationError(f"target {target_iops} IOPS is below the single-partition quota {quota}")
    partitions = int(math.ceil(target_iops / quota - 1e-9))
    trajectory = scaling_model.trajectory
    measured = dict(zip(trajectory.partitions, zip(trajectory.times, trajectory.attempts)))
    if partitions in measured:
        time_s, requests = measured[partitions]
        extrapolated = False
    else:
        xs = np.array(trajectory.partitions, dtype=np.float64)
        time_fit = np.polyfit(xs, np.array(trajectory.times, dtype=np.float64), 2)
        request_fit = np.polyfit(xs, np.array(trajectory.attempts, dtype=np.float64), 2)
        time_s = float(np.polyval(time_fit, partitions))
        requests = float(np.polyval(request_fit, partitions))
        extrapolated = True
    price = catalog.storage_price(service)
    cost = Fraction(requests) * price.per_read
    return WarmingEstimate(target_iops, partitions, time_s, requests, float(cost), extrapolated)


def summarize(report: CostReport) -> Dict[str, float]:
    """Cents per component for display."""
    totals: Dict[str, float] = defaultdict(float)
    for category in CATEGORIES:
        totals[category] = report.component(category) / 1000
    totals["total"] = report.total / 1000
    return dict(totals)
