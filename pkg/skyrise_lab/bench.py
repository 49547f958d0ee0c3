"""Experiment harness: configured drivers, repetitions, aggregates and plot data.

An experiment runs every repetition of every configured region on fresh
resources. Repetitions of one region share a simulated clock and sit
``warm_gap_s`` apart; regions run on separate simulations with the same
seed, so their samples differ only by what the region profile changes.

Results are plain data: each sample keeps its scalar metrics, its tables
(time series, bar groups, traces) and the usage counts its cost is billed
from, so aggregates and costs can be recomputed from a stored result.
"""

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from skyrise_lab.config import DEFAULT_PLANS_DIR, DEFAULT_SEED, load_toml
from skyrise_lab.dataform import SCHEMAS, TableMeta, describe, generate_files
from skyrise_lab.engine import (
    Deployment,
    QueryContext,
    compile_distributed,
    exchange_object_keys,
    inject_barrier,
    load_plan,
    submit_query,
)
from skyrise_lab.errors import DriverFailure, EmptySeries, Exhausted, IoError, ValidationError
from skyrise_lab.faassim import FaasPlatform, FunctionSpec, PlatformCalibration, load_platform_calibration, provision_pool
from skyrise_lab.netsim import DIRECTIONS, LinkSpec, VpcGroup, bin_segments, fleet_throughput, load_link_specs, saturate
from skyrise_lab.pricing import CostReport, PriceCatalog, RequestMeter, faas_cost, load_catalog, usage_cost, vm_cost
from skyrise_lab.simcore import Simulation
from skyrise_lab.storesim import (
    LatencyModel,
    RetryingClient,
    StorageCalibration,
    StorageProfile,
    create_container,
    load_storage_calibration,
    prewarm,
    run_ramp,
    scaling_process,
)
from skyrise_lab.units import DAY, GiB, HOUR, KiB, MiB, ceil_ms, to_s, to_us
from skyrise_lab.validation import LabValidator

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
NETWORK_BIN_S = 0.02
STORAGE_BIN_S = 1.0
DEFAULT_REGION = "default"
PERCENTILES = (("p50_ms", 50), ("p95_ms", 95), ("p99_ms", 99))


@dataclass(frozen=True)
class RegionProfile:
    """Named knobs for running the same experiment under other conditions."""

    name: str = DEFAULT_REGION
    latency_multiplier: float = 1.0
    concurrency_ceiling: Optional[int] = None

    def to_dict(self) -> Dict[str, Any]:
        record: Dict[str, Any] = {"latency_multiplier": self.latency_multiplier}
        if self.concurrency_ceiling is not None:
            record["concurrency_ceiling"] = self.concurrency_ceiling
        return record


@dataclass
class ExperimentConfig:
    name: str
    system_under_test: str
    driver: str
    parameters: Dict[str, Any] = field(default_factory=dict)
    repetitions: int = 1
    warm_gap_s: float = 0.0
    seed: int = DEFAULT_SEED
    region_profile: str = DEFAULT_REGION
    regions: Dict[str, RegionProfile] = field(default_factory=dict)
    mode: str = field(init=False, default="")

    def __post_init__(self) -> None:
        LabValidator.validate_experiment(self._experiment_record())
        self.mode = LabValidator.validate_parameters(self.driver, self.parameters)
        if not self.regions:
            self.regions = {self.region_profile: RegionProfile(self.region_profile)}
        if self.region_profile not in self.regions:
            raise ValidationError(f"{self.name}: region_profile '{self.region_profile}' is not defined under [regions]")

    def _experiment_record(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "system_under_test": self.system_under_test,
            "driver": self.driver,
            "repetitions": self.repetitions,
            "warm_gap_s": self.warm_gap_s,
            "seed": self.seed,
            "region_profile": self.region_profile,
        }

    @property
    def region_order(self) -> List[str]:
        """Base region first, then the others by name."""
        return [self.region_profile] + sorted(name for name in self.regions if name != self.region_profile)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        experiment = data.get("experiment")
        LabValidator.validate_experiment(experiment)
        regions = {}
        for name, record in data.get("regions", {}).items():
            LabValidator.validate_region(name, record)
            regions[name] = RegionProfile(name, float(record.get("latency_multiplier", 1.0)), record.get("concurrency_ceiling"))
        return cls(
            name=experiment["name"],
            system_under_test=experiment["system_under_test"],
            driver=experiment["driver"],
            parameters=dict(data.get("parameters", {})),
            repetitions=experiment.get("repetitions", 1),
            warm_gap_s=float(experiment.get("warm_gap_s", 0.0)),
            seed=experiment.get("seed", DEFAULT_SEED),
            region_profile=experiment.get("region_profile", DEFAULT_REGION),
            regions=regions,
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ExperimentConfig":
        return cls.from_dict(load_toml(Path(path)))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "experiment": self._experiment_record(),
            "parameters": dict(self.parameters),
            "regions": {name: region.to_dict() for name, region in sorted(self.regions.items())},
        }


@dataclass(frozen=True)
class AggregateMetrics:
    median: float
    mean: float
    stddev: float
    cov: Optional[float]
    mr: Optional[float]
    count: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "median": self.median,
            "mean": self.mean,
            "stddev": self.stddev,
            "cov_pct": self.cov,
            "mr": self.mr,
            "count": self.count,
        }


def lower_median(values: Sequence[float]) -> float:
    ordered = sorted(values)
    return float(ordered[(len(ordered) - 1) // 2])


def aggregate(samples: Sequence[float], base: Optional[Sequence[float]] = None) -> AggregateMetrics:
    """Median (lower middle), mean, population stddev, CoV in percent and MR against ``base``."""
    values = np.asarray(list(samples), dtype=np.float64)
    if values.size == 0:
        raise EmptySeries("cannot aggregate an empty series")
    median = lower_median(values.tolist())
    mean = float(values.mean())
    stddev = float(values.std())
    if mean != 0:
        cov: Optional[float] = 100.0 * stddev / abs(mean)
    else:
        cov = 0.0 if stddev == 0 else None
    mr: Optional[float] = None
    if base is not None:
        base_values = list(base)
        if not base_values:
            raise EmptySeries("base series is empty")
        base_median = lower_median(base_values)
        if base_median != 0:
            mr = median / base_median
        elif median == 0:
            mr = 1.0
    return AggregateMetrics(median, mean, stddev, cov, mr, int(values.size))


def median_run(values: Sequence[float]) -> int:
    """Index of the repetition holding the lower-middle value; ties go to the lowest index."""
    if not values:
        raise EmptySeries("no repetitions to choose from")
    target = lower_median(values)
    return min(index for index, value in enumerate(values) if value == target)


def percentile_row(latencies_s: Sequence[float]) -> Dict[str, float]:
    if not latencies_s:
        raise EmptySeries("no latency samples")
    values = np.asarray(latencies_s, dtype=np.float64) * 1000.0
    row = {name: float(np.percentile(values, q)) for name, q in PERCENTILES}
    row["max_ms"] = float(values.max())
    return row


@dataclass
class Sample:
    """One repetition of one region."""

    region: str
    repetition: int
    started_at_s: float
    metrics: Dict[str, float]
    tables: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    latencies_s: List[float] = field(default_factory=list)
    usage: Dict[str, Any] = field(default_factory=dict)
    cost: CostReport = field(default_factory=CostReport)
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "region": self.region,
            "repetition": self.repetition,
            "started_at_s": self.started_at_s,
            "metrics": dict(sorted(self.metrics.items())),
            "tables": self.tables,
            "latencies_s": self.latencies_s,
            "usage": self.usage,
            "cost": self.cost.to_dict(),
            "extra": self.extra,
        }


def usage_report(usage: Mapping[str, Any], catalog: PriceCatalog) -> CostReport:
    """Bill recorded usage counts: function time, VM time, then storage requests."""
    report = CostReport()
    for entry in usage.get("functions", []):
        report = report.merge(faas_cost(entry["memory_mib"], entry["billed_ms"], entry["invocations"], catalog))
    for entry in usage.get("vms", []):
        report = report.merge(vm_cost(entry["instance_type"], entry["seconds"], catalog, entry["count"]))
    for entry in usage.get("storage", []):
        report = report.merge(usage_cost(RequestMeter.from_dict(entry), catalog))
    return report


def recompute_aggregates(samples: Sequence[Sample], region_order: Sequence[str]) -> Dict[str, Dict[str, AggregateMetrics]]:
    """Per region and metric; MR is taken against the first region of ``region_order``."""
    by_region: Dict[str, List[Sample]] = {}
    for sample in samples:
        by_region.setdefault(sample.region, []).append(sample)
    base = by_region.get(region_order[0], []) if region_order else []
    out: Dict[str, Dict[str, AggregateMetrics]] = {}
    for region in region_order:
        members = by_region.get(region)
        if not members:
            continue
        names = sorted({name for sample in members for name in sample.metrics})
        out[region] = {}
        for name in names:
            series = [sample.metrics[name] for sample in members if name in sample.metrics]
            base_series = [sample.metrics[name] for sample in base if name in sample.metrics]
            out[region][name] = aggregate(series, base_series or None)
    return out


@dataclass
class RunResult:
    config: ExperimentConfig
    primary: str
    samples: List[Sample] = field(default_factory=list)
    aggregates: Dict[str, Dict[str, AggregateMetrics]] = field(default_factory=dict)
    cost: CostReport = field(default_factory=CostReport)
    median_runs: Dict[str, int] = field(default_factory=dict)
    complete: bool = True
    schema_version: int = SCHEMA_VERSION

    def region_samples(self, region: str) -> List[Sample]:
        return [sample for sample in self.samples if sample.region == region]

    def finalize(self) -> "RunResult":
        self.aggregates = recompute_aggregates(self.samples, self.config.region_order)
        self.cost = CostReport()
        for sample in self.samples:
            self.cost = self.cost.merge(sample.cost)
        self.median_runs = {}
        for region in self.config.region_order:
            values = [sample.metrics[self.primary] for sample in self.region_samples(region)]
            if values:
                self.median_runs[region] = median_run(values)
        return self

    def median_sample(self, region: Optional[str] = None) -> Sample:
        region = region or self.config.region_profile
        return self.region_samples(region)[self.median_runs[region]]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": self.schema_version,
            "complete": self.complete,
            "config": self.config.to_dict(),
            "primary_metric": self.primary,
            "median_runs": self.median_runs,
            "aggregates": {
                region: {name: agg.to_dict() for name, agg in metrics.items()}
                for region, metrics in self.aggregates.items()
            },
            "cost": self.cost.to_dict(),
            "samples": [sample.to_dict() for sample in self.samples],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(self.to_json())
        except OSError as exc:
            raise IoError(f"cannot write result {path}: {exc}") from exc
        return path


def load_result(path: Union[str, Path], catalog: Optional[PriceCatalog] = None) -> RunResult:
    """Read a stored result; costs are re-billed from usage and aggregates recomputed."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IoError(f"cannot read result {path}: {exc}") from exc
    if data.get("schema_version") != SCHEMA_VERSION:
        raise ValidationError(f"{path}: unsupported schema version {data.get('schema_version')!r}")
    catalog = catalog or load_catalog()
    config = ExperimentConfig.from_dict(data["config"])
    samples = [
        Sample(
            region=record["region"],
            repetition=record["repetition"],
            started_at_s=record["started_at_s"],
            metrics=record["metrics"],
            tables=record["tables"],
            latencies_s=record["latencies_s"],
            usage=record["usage"],
            cost=usage_report(record["usage"], catalog),
            extra=record.get("extra", {}),
        )
        for record in data["samples"]
    ]
    result = RunResult(config, data["primary_metric"], samples, complete=data.get("complete", True))
    return result.finalize()


# shared calibration


@dataclass
class Lab:
    """Calibration and prices every repetition of an experiment draws on."""

    links: Dict[str, LinkSpec]
    storage: StorageCalibration
    platform: PlatformCalibration
    catalog: PriceCatalog
    calibration: Optional[Path] = None
    plans_dir: Path = DEFAULT_PLANS_DIR
    _files: Dict[Tuple, List[Tuple[str, bytes]]] = field(default_factory=dict)

    @classmethod
    def load(cls, calibration: Optional[Path] = None, catalog: Optional[PriceCatalog] = None) -> "Lab":
        return cls(
            links=load_link_specs(calibration),
            storage=load_storage_calibration(calibration),
            platform=load_platform_calibration(calibration),
            catalog=catalog or load_catalog(),
            calibration=calibration,
        )

    def table_files(self, kind: str, scale: float, seed: int, partitions: Optional[int]) -> List[Tuple[str, bytes]]:
        key = (kind, scale, seed, partitions)
        if key not in self._files:
            self._files[key] = generate_files(kind, scale, seed, partitions)
        return self._files[key]

    def storage_profile(self, service: str, region: RegionProfile) -> StorageProfile:
        try:
            profile = self.storage.profiles[service]
        except KeyError as exc:
            raise ValidationError(f"unknown storage service '{service}'") from exc
        k = region.latency_multiplier
        if k == 1.0:
            return profile
        return replace(profile, read_latency=_slower(profile.read_latency, k), write_latency=_slower(profile.write_latency, k))

    def platform_for(self, region: RegionProfile) -> PlatformCalibration:
        k = region.latency_multiplier
        platform = self.platform
        faas = platform.faas
        if region.concurrency_ceiling is not None:
            faas = replace(faas, burst_limit=min(faas.burst_limit, region.concurrency_ceiling))
        if k == 1.0:
            return replace(platform, faas=faas)
        cold = replace(
            platform.cold_start,
            platform_overhead=platform.cold_start.platform_overhead * k,
            init_time=platform.cold_start.init_time * k,
        )
        return replace(
            platform,
            faas=replace(faas, warm_start=faas.warm_start * k),
            cold_start=cold,
            vm=replace(platform.vm, startup=platform.vm.startup * k),
            worker=replace(platform.worker, cold_start=cold),
        )

    def link_spec(self, system: str, parameters: Mapping[str, Any]) -> Tuple[str, LinkSpec]:
        name = parameters.get("instance_type", "lambda_arm" if system == "faas" else self.platform.vm.link)
        if name not in self.links:
            raise ValidationError(f"no link calibration for '{name}'")
        return name, self.links[name]


def _slower(model: LatencyModel, k: float) -> LatencyModel:
    return LatencyModel(model.median * k, model.p95 * k, max(model.tail_cap, model.p95 * k))


@dataclass
class Repetition:
    """What a driver gets for one repetition."""

    sim: Simulation
    lab: Lab
    config: ExperimentConfig
    region: RegionProfile
    index: int

    @property
    def params(self) -> Dict[str, Any]:
        return self.config.parameters

    def tag(self, stem: str) -> str:
        return f"{stem}-{self.region.name}-r{self.index}"


def _table(columns: Sequence[str], rows: Sequence[Sequence[Any]]) -> Dict[str, Any]:
    return {"columns": list(columns), "rows": [list(row) for row in rows]}


def _function_usage(memory_mib: int, billed_ms: int, invocations: int) -> Dict[str, Any]:
    return {"functions": [{"memory_mib": memory_mib, "billed_ms": billed_ms, "invocations": invocations}]}


# minimal


def _minimal_vm(rep: Repetition) -> Tuple[Sample, str]:
    params = rep.params
    platform = rep.lab.platform_for(rep.region)
    instance_type = params.get("instance_type", platform.vm.link)
    count = int(params.get("instances", 1))
    pool = provision_pool(rep.sim, instance_type, count, rep.lab.catalog, platform.vm)
    startup = to_s(pool.ready_at - pool.started_at)
    rep.sim.run_until(pool.ready_at)
    pool.shutdown()
    usage = {"vms": [{"instance_type": instance_type, "seconds": pool.billed_seconds, "count": count}]}
    metrics = {"vm_startup_s": startup}
    return Sample(rep.region.name, rep.index, 0.0, metrics, usage=usage), "vm_startup_s"


def _minimal_faas(rep: Repetition) -> Tuple[Sample, str]:
    params = rep.params
    sim = rep.sim
    calibration = rep.lab.platform_for(rep.region)
    platform = FaasPlatform(sim, calibration.faas, rep.lab.links["lambda_arm"])
    sim.process(platform.reclaim_process())
    function = FunctionSpec(
        rep.tag("noop"),
        memory_mib=int(params.get("memory_mib", calibration.worker.memory_mib)),
        binary_mib=float(params.get("binary_mib", calibration.worker.binary_mib)),
        cold_start=calibration.cold_start,
    )
    mode = params.get("invoke_mode", "sync")
    metrics: Dict[str, float] = {}
    tables: Dict[str, Dict[str, Any]] = {}

    if rep.config.mode == "idle_gaps":
        gaps = []

        def reinvoke_after_gaps():
            for index, gap in enumerate(params["idle_gaps_s"]):
                spec = replace(function, name=f"{function.name}-gap{index}")
                yield sim.process(platform.run_invocation(spec, 0.0, mode=mode))
                yield sim.sleep(float(gap))
                again = yield sim.process(platform.run_invocation(spec, 0.0, mode=mode))
                gaps.append((float(gap), int(again.cold)))

        sim.run_process(reinvoke_after_gaps())
        tables["gaps"] = _table(["idle_s", "cold"], gaps)
        warm = [gap for gap, cold in gaps if not cold]
        metrics["idle_lifetime_s"] = max(warm) if warm else 0.0
        metrics["cold_after_gap"] = float(sum(cold for _, cold in gaps))
        primary = "idle_lifetime_s"
    else:
        rounds = int(params.get("invocations", 10))
        concurrency = int(params.get("concurrency", 1))
        interval = float(params.get("interval_s", 1.0))

        def rounds_of_calls():
            for _ in range(rounds):
                calls = [sim.process(platform.run_invocation(function, 0.0, mode=mode)) for _ in range(concurrency)]
                yield sim.all_of(calls)
                yield sim.sleep(interval)

        sim.run_process(rounds_of_calls())
        cold = [record.start_latency for record in platform.records if record.cold]
        warm = [record.start_latency for record in platform.records if not record.cold]
        metrics["cold_start_ms"] = lower_median(cold) * 1000 if cold else 0.0
        if warm:
            metrics["warm_start_ms"] = lower_median(warm) * 1000
        metrics["start_ms"] = lower_median([r.start_latency for r in platform.records]) * 1000
        primary = "start_ms"
    records = platform.records
    sample = Sample(
        rep.region.name,
        rep.index,
        0.0,
        metrics,
        tables,
        latencies_s=[record.start_latency for record in records],
        usage=_function_usage(function.memory_mib, sum(r.billed_ms for r in records), len(records)),
        extra={"cold_starts": sum(1 for r in records if r.cold), "invocations": len(records)},
    )
    return sample, primary


def minimal_driver(rep: Repetition) -> Tuple[Sample, str]:
    """Startup latency of no-op invocations, idle-lifetime probing, or VM startup."""
    if rep.config.system_under_test == "vm_pool":
        return _minimal_vm(rep)
    return _minimal_faas(rep)


# network


def _burst_phase(segments, burst_rate: float) -> float:
    return sum(seg.end - seg.start for seg in segments if seg.rate >= burst_rate)


def _network_trace(rep: Repetition) -> Tuple[Sample, str]:
    params = rep.params
    sim = rep.sim
    name, spec = rep.lab.link_spec(rep.config.system_under_test, params)
    if params.get("quantized", False):
        spec = replace(
            spec,
            inbound=replace(spec.inbound, quantized_refill=True),
            outbound=replace(spec.outbound, quantized_refill=True),
        )
    bin_s = float(params.get("bin_ms", NETWORK_BIN_S * 1000)) / 1000
    duration = float(params["duration_s"])
    gap = float(params.get("gap_s", 0.0))
    second = float(params.get("second_duration_s", 0.0))
    measured = params.get("direction", "in")
    t0 = sim.now
    link = spec.new_link(t0, name=rep.tag("link"))
    first: Dict[str, list] = {}
    later: Dict[str, list] = {}
    for direction in DIRECTIONS:
        first[direction] = saturate(link, direction, t0, duration).segments
        later[direction] = saturate(link, direction, t0 + to_us(duration + gap), second).segments if second > 0 else []
    end = duration + gap + second if second > 0 else duration
    origin = to_s(t0)
    rates = {
        direction: bin_segments(first[direction] + later[direction], origin, origin + end, bin_s) / bin_s
        for direction in DIRECTIONS
    }
    rows = [
        [round(index * bin_s * 1000, 6), rates["in"][index] / MiB, rates["out"][index] / MiB]
        for index in range(len(rates["in"]))
    ]
    burst_rate = link.bucket(measured).spec.burst_rate
    first_bytes = sum(seg.nbytes for seg in first[measured])
    metrics = {
        "burst_ms": _burst_phase(first[measured], burst_rate) * 1000,
        "burst_mib_s": burst_rate / MiB,
        "baseline_mib_s": float(rates[measured][int(duration / bin_s) - 1]) / MiB,
        "mean_mib_s": first_bytes / duration / MiB,
    }
    if second > 0:
        metrics["second_burst_mib"] = sum(seg.nbytes for seg in later[measured] if seg.rate >= burst_rate) / MiB
    tables = {"timeseries": _table(["t_ms", "mib_per_s_in", "mib_per_s_out"], rows)}
    if name == "lambda_arm":
        memory = int(params.get("memory_mib", rep.lab.platform.worker.memory_mib))
        usage = _function_usage(memory, ceil_ms(end), 1)
    else:
        usage = {"vms": [{"instance_type": name, "seconds": end, "count": 1}]}
    sim.run_until(t0 + to_us(end))
    return Sample(rep.region.name, rep.index, 0.0, metrics, tables, usage=usage), "mean_mib_s"


def _network_scale_out(rep: Repetition) -> Tuple[Sample, str]:
    params = rep.params
    name, spec = rep.lab.link_spec(rep.config.system_under_test, params)
    direction = params.get("direction", "in")
    duration = float(params.get("duration_s", 0.2))
    bin_s = float(params.get("bin_ms", NETWORK_BIN_S * 1000)) / 1000
    cap = params.get("vpc_cap_gib_s")
    counts = sorted(int(n) for n in params["counts"])
    now = rep.sim.now
    bars = []
    metrics: Dict[str, float] = {}
    series = np.zeros(0)
    for count in counts:
        links = [spec.new_link(now, name=f"{rep.tag('fn')}-{index}") for index in range(count)]
        group = VpcGroup({link.name for link in links}, cap * GiB) if cap is not None else None
        series = fleet_throughput(links, direction, duration, step=bin_s, group=group)
        peak = float(series.max()) / GiB
        bars.append([count, peak, peak * GiB / MiB / count])
        metrics[f"aggregate_gib_s_{count}"] = peak
    metrics["peak_gib_s"] = max(row[1] for row in bars)
    if len(counts) > 1:
        xs = np.array(counts, dtype=np.float64)
        ys = np.array([row[1] for row in bars], dtype=np.float64)
        fit = np.polyfit(xs, ys, 1)
        residual = float(np.sum((ys - np.polyval(fit, xs)) ** 2))
        total = float(np.sum((ys - ys.mean()) ** 2))
        metrics["linear_r2"] = 1.0 - residual / total if total > 0 else 1.0
    rows = [[round(index * bin_s * 1000, 6), float(value) / MiB] for index, value in enumerate(series)]
    tables = {
        "bars": _table(["functions", "aggregate_gib_s", "per_function_mib_s"], bars),
        "timeseries": _table(["t_ms", f"mib_per_s_{direction}"], rows),
    }
    if name == "lambda_arm":
        memory = int(params.get("memory_mib", rep.lab.platform.worker.memory_mib))
        usage = _function_usage(memory, ceil_ms(duration) * sum(counts), sum(counts))
    else:
        usage = {"vms": [{"instance_type": name, "seconds": duration, "count": sum(counts)}]}
    rep.sim.run_until(now + to_us(duration))
    return Sample(rep.region.name, rep.index, 0.0, metrics, tables, usage=usage), "peak_gib_s"


def network_driver(rep: Repetition) -> Tuple[Sample, str]:
    """Saturating link traces at 20 ms bins, or fleet scale-out with an optional VPC cap."""
    if rep.config.mode == "scale_out":
        return _network_scale_out(rep)
    return _network_trace(rep)


# storage


def _storage_requests(rep: Repetition) -> Tuple[Sample, str]:
    params = rep.params
    sim = rep.sim
    service = params.get("service", "object_standard")
    profile = rep.lab.storage_profile(service, rep.region)
    bucket = create_container(profile, rep.tag(service), rep.lab.storage.scaling)
    op = params.get("op", "get")
    size = int(float(params.get("object_kib", 1)) * KiB)
    clients = int(params["clients"])
    per_client = int(params.get("requests_per_client", 100))
    price = rep.lab.catalog.storage_price(service)
    meter = RequestMeter(service, price.surcharge_threshold)
    latencies: List[float] = []
    exhausted = [0]
    t0 = sim.now

    def client_loop(index: int):
        client = RetryingClient(sim, bucket, rep.lab.storage.retry, f"c{index}")
        for number in range(per_client):
            started = sim.now
            try:
                yield sim.process(client.request(op, f"bench/c{index:05d}/o{number:05d}", size))
            except Exhausted:
                exhausted[0] += 1
                continue
            latencies.append(to_s(sim.now - started))
            meter.record(op, size)

    def all_clients():
        yield sim.all_of([sim.process(client_loop(index)) for index in range(clients)])

    sim.run_process(all_clients())
    elapsed = to_s(sim.now - t0)
    first_second = t0 // to_us(STORAGE_BIN_S)
    rows = [
        [
            record["t_s"] - first_second,
            record.get("ok", 0),
            record.get("throttled", 0),
            record.get(f"bytes_{op}", 0) / MiB,
        ]
        for record in bucket.per_second()
    ]
    ok = len(latencies)
    attempts = bucket.requests[f"{op}_attempts"]
    metrics = {
        "iops": ok / elapsed if elapsed > 0 else 0.0,
        "throughput_mib_s": ok * size / MiB / elapsed if elapsed > 0 else 0.0,
        "error_pct": 100.0 * bucket.requests[f"{op}_throttled"] / attempts if attempts else 0.0,
        "exhausted": float(exhausted[0]),
    }
    if latencies:
        metrics.update(percentile_row(latencies))
    tables = {"timeseries": _table(["t_s", "iops_ok", "iops_throttled", "mib_per_s"], rows)}
    sample = Sample(rep.region.name, rep.index, 0.0, metrics, tables, latencies, usage={"storage": [meter.to_dict()]})
    return sample, "iops"


def _storage_ramp(rep: Repetition) -> Tuple[Sample, str]:
    params = rep.params
    service = params.get("service", "object_standard")
    warming = rep.lab.storage.warming
    profile = rep.lab.storage_profile(service, rep.region)
    bucket = create_container(profile, rep.tag("ramp"), rep.lab.storage.scaling)
    bucket.last_active = rep.sim.now
    duration = params.get("duration_s")
    target = params.get("target_partitions", None if duration is not None else warming.measured_partitions)
    trajectory = run_ramp(rep.sim, bucket, warming, duration, target, bool(params.get("hashed_prefixes", False)))
    rows = [[row["t_s"], row["offered"], row["ok"], row["failed"], row["requests"]] for row in trajectory.per_second]
    trace = [[round(t / 60.0, 6), count] for t, count in zip(trajectory.times, trajectory.partitions)]
    last = trajectory.per_second[-1] if trajectory.per_second else {"ok": 0.0}
    metrics = {
        "partitions": float(trajectory.partitions[-1]),
        "minutes": trajectory.times[-1] / 60.0,
        "final_iops": float(last["ok"]),
        "read_capacity_iops": float(bucket.read_capacity),
        "error_pct": 100.0 * trajectory.error_fraction,
        "attempts": trajectory.total_attempts,
    }
    price = rep.lab.catalog.storage_price(service)
    billed = int(round(trajectory.total_attempts))
    meter = RequestMeter(service, price.surcharge_threshold, reads=billed)
    tables = {
        "timeseries": _table(["t_s", "offered", "iops_ok", "iops_failed", "requests"], rows),
        "trace": _table(["minutes", "partitions"], trace),
    }
    return Sample(rep.region.name, rep.index, 0.0, metrics, tables, usage={"storage": [meter.to_dict()]}), "minutes"


def _storage_cooldown(rep: Repetition) -> Tuple[Sample, str]:
    params = rep.params
    sim = rep.sim
    service = params.get("service", "object_standard")
    profile = rep.lab.storage_profile(service, rep.region)
    time_scale = float(params.get("time_scale", 1.0))
    days = int(params.get("days", 6))
    bucket = create_container(profile, rep.tag("cooldown"), rep.lab.storage.scaling, time_scale)
    t0 = sim.now
    bucket.last_active = t0
    prewarm(bucket, int(params.get("partitions", 5)), [f"warm/{index:05d}" for index in range(int(params.get("sample_keys", 1000)))])
    until = t0 + to_us(days * DAY * time_scale)
    sim.process(scaling_process(sim, bucket, until))
    sim.run_until(until)
    trace = bucket.partition_trace

    def count_at(at: int) -> int:
        current = trace[0][1]
        for when, count in trace:
            if when <= at:
                current = count
        return current

    rows = []
    for hour in range(days * 24 + 1):
        at = t0 + to_us(hour * HOUR * time_scale)
        count = count_at(at)
        rows.append([hour, count, count * profile.read_iops_quota])
    metrics = {f"partitions_day_{day}": float(rows[day * 24][1]) for day in range(1, days + 1)}
    metrics["final_partitions"] = float(rows[-1][1])
    tables = {"trace": _table(["hour", "partitions", "read_iops_capacity"], rows)}
    return Sample(rep.region.name, rep.index, 0.0, metrics, tables), "final_partitions"


def storage_driver(rep: Repetition) -> Tuple[Sample, str]:
    """Request throughput and latency, the read warm-up ramp, or idle cool-down."""
    mode = rep.config.mode
    if mode == "ramp":
        return _storage_ramp(rep)
    if mode == "cooldown":
        return _storage_cooldown(rep)
    return _storage_requests(rep)


# query


def _exchange_partitions(plan, value: Any) -> Dict[str, int]:
    if value is None:
        return {}
    if isinstance(value, Mapping):
        return {str(key): int(count) for key, count in value.items()}
    return {
        pipeline.id: int(value)
        for pipeline in plan.pipelines
        if not pipeline.is_sink and pipeline.output.partitions != 1
    }


def _per_table(value: Any, kind: str) -> Any:
    return value.get(kind) if isinstance(value, Mapping) else value


def _plan_path(lab: Lab, query: str) -> Path:
    """A plan file path as given, or a plan name looked up in the plans directory."""
    candidate = Path(query)
    if candidate.suffix == ".json" and candidate.exists():
        return candidate
    return lab.plans_dir / f"{candidate.stem}.json"


def query_driver(rep: Repetition) -> Tuple[Sample, str]:
    """Run one plan on fresh buckets; optionally on a pre-warmed exchange bucket.

    ``barrier_pipeline`` holds that pipeline's workers at a start barrier for
    ``barrier_hold_s`` so they read the exchange together.
    """
    params = rep.params
    sim = rep.sim
    lab = rep.lab
    plan = load_plan(_plan_path(lab, str(params["query"])))
    synchronized = params.get("barrier_pipeline")
    if synchronized:
        plan = inject_barrier(plan, str(synchronized), "start")
    scale = float(params.get("scale", 0.01))
    data_seed = int(params.get("data_seed", rep.config.seed))
    data = create_container(lab.storage_profile(params.get("data_service", "object_standard"), rep.region), rep.tag("data"), lab.storage.scaling)
    exchange = create_container(
        lab.storage_profile(params.get("exchange_service", "object_standard"), rep.region), rep.tag("exchange"), lab.storage.scaling
    )
    tables: Dict[str, TableMeta] = {}
    for kind in plan.tables():
        partitions = _per_table(params.get("files"), kind)
        sim_mib = _per_table(params.get("sim_file_mib"), kind)
        sim_size = int(float(sim_mib) * MiB) if sim_mib else None
        metas = []
        for key, blob in lab.table_files(kind, scale, data_seed, partitions):
            data.put_object(key, blob, sim_size)
            metas.append(describe(key, blob, sim_size))
        tables[kind] = TableMeta(kind, SCHEMAS[kind], metas)
    budget = int(float(params["budget_mib"]) * MiB) if "budget_mib" in params else None
    options: Dict[str, Any] = {
        "exchange": exchange,
        "exchange_partitions": _exchange_partitions(plan, params.get("exchange_partitions")),
        "basis": params.get("basis"),
    }
    if budget is not None:
        options["budget"] = budget
    if synchronized:
        options["barriers"] = {"start": float(params.get("barrier_hold_s", 3.0))}
    context = QueryContext(
        sim=sim,
        data=data,
        tables=tables,
        catalog=lab.catalog,
        platform=lab.platform_for(rep.region),
        links=lab.links,
        **options,
    )
    if params.get("warm_bucket", False):
        stage_plan = compile_distributed(
            plan, tables, context.budget, context.basis or context.engine.budget_basis,
            context.exchange_partitions, context.engine.broadcast_limit,
        )
        prewarm(exchange, int(params.get("warm_partitions", 5)), exchange_object_keys(stage_plan))
    mode = params.get("deployment", "vm" if rep.config.system_under_test == "vm_pool" else "faas")
    deployment = Deployment(mode, params.get("instance_type", lab.platform.vm.link), params.get("instances"))
    response = submit_query(plan, deployment, context)
    metrics_out = response.metrics
    scan_bytes = 0
    scan_seconds = 0.0
    for stage in metrics_out["stages"]:
        pipeline = plan.pipeline(stage["pipeline"])
        if any(op.kind == "scan" and not op.get("broadcast", False) for op in pipeline.operators):
            scan_bytes += stage["bytes_in"]
            scan_seconds += sum(stage["durations_s"])
    metrics = {
        "runtime_s": response.runtime,
        "cost_cents": response.cost.cents,
        "shuffle_s": metrics_out["exchange"]["shuffle_s"],
        "fragments": float(metrics_out["fragments"]),
        "exchange_reads": float(metrics_out["exchange"]["reads"]),
        "scan_mib_s_per_worker": scan_bytes / MiB / scan_seconds if scan_seconds > 0 else 0.0,
    }
    bars = [
        [stage["pipeline"], stage["fragments"], stage["start_s"], stage["end_s"], stage["bytes_in"] / MiB]
        for stage in metrics_out["stages"]
    ]
    sample = Sample(
        rep.region.name,
        rep.index,
        0.0,
        metrics,
        {"bars": _table(["pipeline", "fragments", "start_s", "end_s", "mib_in"], bars)},
        usage=metrics_out["usage"],
        cost=response.cost,
        extra={"response": response.to_dict()},
    )
    return sample, "runtime_s"


DRIVERS: Dict[str, Callable[[Repetition], Tuple[Sample, str]]] = {
    "minimal": minimal_driver,
    "network_io": network_driver,
    "storage_io": storage_driver,
    "query": query_driver,
}


def run_experiment(
    config: ExperimentConfig,
    calibration: Optional[Path] = None,
    catalog: Optional[PriceCatalog] = None,
    lab: Optional[Lab] = None,
) -> RunResult:
    """Run every region and repetition of ``config``.

    A driver error raises ``DriverFailure`` whose ``partial`` result holds the
    repetitions that finished.
    """
    lab = lab or Lab.load(calibration, catalog)
    driver = DRIVERS[config.driver]
    result = RunResult(config, primary="")
    logger.info("experiment %s: %s driver, %d repetitions", config.name, config.driver, config.repetitions)
    for region_name in config.region_order:
        region = config.regions[region_name]
        sim = Simulation(seed=config.seed)
        for index in range(config.repetitions):
            if index > 0 and config.warm_gap_s > 0:
                sim.run_until(sim.now + to_us(config.warm_gap_s))
            started = sim.now_s
            try:
                sample, primary = driver(Repetition(sim, lab, config, region, index))
            except Exception as exc:
                result.complete = False
                result.finalize()
                raise DriverFailure(f"{config.name}: {config.driver} driver failed in {region_name} repetition {index}: {exc}", result) from exc
            sample.started_at_s = started
            if not sample.cost.line_items and sample.usage:
                sample.cost = usage_report(sample.usage, lab.catalog)
            result.primary = primary
            result.samples.append(sample)
            logger.debug("%s/%s#%d: %s = %.6g", config.name, region_name, index, primary, sample.metrics[primary])
    return result.finalize()


# plot data


def _cell(value: Any) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return f"{value:.6f}"
    if value is None:
        return ""
    return str(value)


def _csv(rows: Sequence[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerows([[_cell(value) for value in row] for row in rows])
    return buffer.getvalue()


def plot_tables(result: RunResult) -> Dict[str, str]:
    """CSV text per figure style, keyed by file name."""
    name = result.config.name
    out: Dict[str, str] = {}
    if result.samples:
        shown = result.median_sample()
        for kind, table in sorted(shown.tables.items()):
            out[f"{name}_{kind}.csv"] = _csv([table["columns"]] + table["rows"])
    groups = [["region", "metric", "median", "mean", "stddev", "cov_pct", "mr"]]
    for region, metrics in result.aggregates.items():
        for metric, agg in sorted(metrics.items()):
            groups.append([region, metric, agg.median, agg.mean, agg.stddev, agg.cov, agg.mr])
    out[f"{name}_groups.csv"] = _csv(groups)
    latency = [["region", "p50_ms", "p95_ms", "p99_ms", "max_ms"]]
    for region in result.config.region_order:
        pooled = [value for sample in result.region_samples(region) for value in sample.latencies_s]
        if pooled:
            row = percentile_row(pooled)
            latency.append([region, row["p50_ms"], row["p95_ms"], row["p99_ms"], row["max_ms"]])
    if len(latency) > 1:
        out[f"{name}_latency.csv"] = _csv(latency)
    return out


def emit_plotdata(result: RunResult, path: Union[str, Path]) -> List[Path]:
    """Write the plot CSVs of ``result`` into directory ``path``."""
    if not result.samples:
        raise EmptySeries(f"{result.config.name}: result has no samples to plot")
    directory = Path(path)
    written = []
    try:
        directory.mkdir(parents=True, exist_ok=True)
        for filename, text in plot_tables(result).items():
            target = directory / filename
            target.write_text(text)
            written.append(target)
    except OSError as exc:
        raise IoError(f"cannot write plot data under {directory}: {exc}") from exc
    logger.info("wrote %d plot files to %s", len(written), directory)
    return written
