"""Serverless storage services: object store, key-value store, filesystem.

Requests are admitted per partition against a one-second sliding window.
Standard object buckets start with a single partition spanning the keyspace
and split under sustained read throttling; after long idle periods they merge
back according to a step-function schedule. Other services are provisioned
at container level and never re-tile.
"""

import bisect
import logging
import math
from collections import Counter, defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Deque, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from skyrise_lab.config import calibration_file
from skyrise_lab.errors import Exhausted, ItemTooLarge, ValidationError
from skyrise_lab.naming import ramp_key
from skyrise_lab.simcore import Simulation
from skyrise_lab.units import GiB, HOUR, KiB, MiB, US_PER_S, ceil_us, to_s, to_us

logger = logging.getLogger(__name__)

SERVICE_KINDS = ("object_standard", "object_express", "keyvalue", "filesystem")
OPS = ("get", "put")

# standard normal quantile at 0.95
Z95 = 1.6448536269514722

WINDOW_US = US_PER_S


@dataclass(frozen=True)
class LatencyModel:
    median: float
    p95: float
    tail_cap: float = 10.0

    def __post_init__(self) -> None:
        if not 0 < self.median <= self.p95 <= self.tail_cap:
            raise ValidationError(
                f"latency model needs 0 < median <= p95 <= tail_cap, got "
                f"{self.median}/{self.p95}/{self.tail_cap}"
            )

    @property
    def sigma(self) -> float:
        return math.log(self.p95 / self.median) / Z95

    def sample(self, rng) -> float:
        if self.sigma == 0:
            return self.median
        draw = self.median * math.exp(self.sigma * rng.standard_normal())
        return min(draw, self.tail_cap)

    def sample_many(self, rng, count: int) -> np.ndarray:
        if self.sigma == 0:
            return np.full(count, self.median)
        draws = self.median * np.exp(self.sigma * rng.standard_normal(count))
        return np.minimum(draws, self.tail_cap)


@dataclass(frozen=True)
class StorageProfile:
    service_kind: str
    read_iops_quota: float
    write_iops_quota: float
    read_bw_cap: float
    write_bw_cap: float
    max_item_size: int
    read_latency: LatencyModel
    write_latency: LatencyModel
    scalable: bool = False

    def __post_init__(self) -> None:
        if self.service_kind not in SERVICE_KINDS:
            raise ValidationError(f"unknown storage service '{self.service_kind}'")
        if self.read_iops_quota <= 0 or self.write_iops_quota <= 0:
            raise ValidationError(f"{self.service_kind}: IOPS quotas must be positive")
        if self.max_item_size <= 0:
            raise ValidationError(f"{self.service_kind}: max_item_size must be positive")

    def latency(self, op: str) -> LatencyModel:
        return self.read_latency if op == "get" else self.write_latency

    def quota(self, op: str) -> float:
        return self.read_iops_quota if op == "get" else self.write_iops_quota

    def bw_cap(self, op: str) -> float:
        return self.read_bw_cap if op == "get" else self.write_bw_cap


@dataclass(frozen=True)
class ScalingPolicy:
    tick_interval: float = 10.0
    split_threshold: float = 390.0
    merge_schedule: Tuple[Tuple[float, int], ...] = ((36 * HOUR, 2), (108 * HOUR, 1))
    write_scaling: bool = False


@dataclass(frozen=True)
class RetryPolicy:
    request_timeout: float = 0.2
    initial_backoff: float = 0.15
    multiplier: float = 2.0
    max_backoff: float = 5.0
    max_attempts: int = 10
    jitter: str = "full"

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValidationError("max_attempts must be at least 1")
        if self.initial_backoff < 0 or self.multiplier < 1:
            raise ValidationError("backoff must be non-negative and non-shrinking")
        if self.jitter not in ("full", "none"):
            raise ValidationError(f"unknown jitter mode '{self.jitter}'")

    def backoff_cap(self, attempt: int) -> float:
        """Pre-jitter backoff after failed attempt number ``attempt`` (1-based)."""
        return min(self.max_backoff, self.initial_backoff * self.multiplier ** (attempt - 1))


@dataclass(frozen=True)
class WarmingSchedule:
    """Stepped read ramp of parallel clients plus fluid client-loop constants.

    Each read runs through a client loop of up to ``client_attempts`` tries;
    a read fails only when every try is throttled.
    """

    base_instances: int = 20
    step_instances: int = 2
    step_s: float = 39.0
    per_instance_rate: float = 300.0
    keys_per_instance: int = 10
    think_time: float = 0.027
    throttle_cost: float = 0.075
    client_attempts: int = 6
    measured_partitions: int = 5

    def instances_at(self, t_s: float) -> int:
        return self.base_instances + self.step_instances * int(t_s // self.step_s)

    def demand_at(self, t_s: float) -> float:
        return self.instances_at(t_s) * self.per_instance_rate


@dataclass
class StorageCalibration:
    profiles: Dict[str, StorageProfile]
    scaling: ScalingPolicy
    retry: RetryPolicy
    warming: WarmingSchedule


@dataclass(frozen=True)
class RequestOutcome:
    status: str
    latency: float
    bytes: int
    transfer: float = 0.0

    @property
    def total(self) -> float:
        return self.latency + self.transfer


@dataclass
class PrefixPartition:
    lo: str
    hi: Optional[str]
    read_quota: float
    write_quota: float
    saturation_clock: float = 0.0
    last_active: int = 0
    read_window: Deque[int] = field(default_factory=deque)
    write_window: Deque[int] = field(default_factory=deque)
    throttled_reads: int = 0
    throttled_writes: int = 0

    def contains(self, key: str) -> bool:
        return key >= self.lo and (self.hi is None or key < self.hi)


@dataclass(frozen=True)
class ScalingEvent:
    t_us: int
    kind: str
    before: int
    after: int


@dataclass
class LoadOutcome:
    """One step of fluid load: reads served and failed, and the requests issued for them."""

    offered: float
    ok: float
    failed: float
    attempts: float

    @property
    def throttled(self) -> float:
        return self.attempts - self.ok


def _expire(window: Deque[int], now: int) -> None:
    while window and window[0] <= now - WINDOW_US:
        window.popleft()


def _fallback_boundaries(count: int) -> List[str]:
    lo, hi = 0x21, 0x7E
    return [chr(lo + (hi - lo) * index // count) for index in range(1, count)]


class Bucket:
    """A storage container with its partitions, objects and metrics."""

    def __init__(
        self,
        name: str,
        profile: StorageProfile,
        scaling: Optional[ScalingPolicy] = None,
        time_scale: float = 1.0,
    ):
        self.name = name
        self.profile = profile
        self.scaling = scaling or ScalingPolicy()
        self.time_scale = time_scale
        self.partitions: List[PrefixPartition] = [self._partition("", None)]
        self.key_histogram: Counter = Counter()
        self.objects: Dict[str, bytes] = {}
        self.object_sizes: Dict[str, int] = {}
        self.metrics: Dict[int, Counter] = defaultdict(Counter)
        self.requests: Counter = Counter()
        self.partition_trace: List[Tuple[int, int]] = [(0, 1)]
        self.events: List[ScalingEvent] = []
        self.last_active = 0
        self._write_window: Deque[int] = deque()
        self._pipe_busy = {"get": 0, "put": 0}

    def _partition(self, lo: str, hi: Optional[str]) -> PrefixPartition:
        return PrefixPartition(lo, hi, self.profile.read_iops_quota, self.profile.write_iops_quota)

    @property
    def merge_schedule(self) -> Tuple[Tuple[float, int], ...]:
        return self.scaling.merge_schedule

    @property
    def read_capacity(self) -> float:
        return len(self.partitions) * self.profile.read_iops_quota

    @property
    def write_capacity(self) -> float:
        if self.scaling.write_scaling:
            return len(self.partitions) * self.profile.write_iops_quota
        return self.profile.write_iops_quota

    def partition_index(self, key: str) -> int:
        bounds = [part.lo for part in self.partitions]
        return bisect.bisect_right(bounds, key) - 1

    def partition_for(self, key: str) -> PrefixPartition:
        return self.partitions[self.partition_index(key)]

    def boundaries(self) -> List[str]:
        return [part.lo for part in self.partitions[1:]]

    def retile(self, count: int, now: int, kind: str) -> Optional[ScalingEvent]:
        """Re-tile the keyspace into ``count`` ranges at weighted key quantiles."""
        before = len(self.partitions)
        if count == before or count < 1:
            return None
        bounds = self._quantile_boundaries(count)
        los = [""] + bounds
        his: List[Optional[str]] = bounds + [None]
        self.partitions = [self._partition(lo, hi) for lo, hi in zip(los, his)]
        for part in self.partitions:
            part.last_active = now
        event = ScalingEvent(now, kind, before, len(self.partitions))
        self.events.append(event)
        self.partition_trace.append((now, len(self.partitions)))
        logger.debug("%s: %s %d -> %d partitions at %.1fs", self.name, kind, before, event.after, to_s(now))
        return event

    def _quantile_boundaries(self, count: int) -> List[str]:
        keys = sorted(self.key_histogram)
        if len(keys) < count:
            return _fallback_boundaries(count)
        weights = np.array([self.key_histogram[key] for key in keys], dtype=np.float64)
        cumulative = np.cumsum(weights) / weights.sum()
        bounds: List[str] = []
        for index in range(1, count):
            pos = int(np.searchsorted(cumulative, index / count, side="left")) + 1
            pos = min(max(pos, 1), len(keys) - 1)
            candidate = keys[pos]
            if bounds and candidate <= bounds[-1]:
                later = [key for key in keys if key > bounds[-1]]
                if not later:
                    return _fallback_boundaries(count)
                candidate = later[0]
            bounds.append(candidate)
        return bounds

    # content

    def put_object(self, key: str, data: bytes, sim_size: Optional[int] = None) -> None:
        self.objects[key] = bytes(data)
        self.object_sizes[key] = len(data) if sim_size is None else int(sim_size)

    def get_object(self, key: str, start: int = 0, end: Optional[int] = None) -> bytes:
        try:
            data = self.objects[key]
        except KeyError as exc:
            raise KeyError(f"{self.name}: no object '{key}'") from exc
        return data[start:end]

    def list_keys(self, prefix: str = "") -> List[str]:
        return sorted(key for key in self.objects if key.startswith(prefix))

    def sim_size(self, key: str) -> int:
        return self.object_sizes[key]

    def per_second(self) -> List[Dict[str, int]]:
        return [{"t_s": second, **dict(self.metrics[second])} for second in sorted(self.metrics)]


def create_container(
    profile: StorageProfile,
    name: str = "bucket",
    scaling: Optional[ScalingPolicy] = None,
    time_scale: float = 1.0,
) -> Bucket:
    return Bucket(name, profile, scaling, time_scale)


def prewarm(bucket: Bucket, partitions: int, sample_keys: Iterable[str] = ()) -> Bucket:
    """Bring a scalable bucket to ``partitions`` ranges before any load."""
    if not bucket.profile.scalable:
        raise ValidationError(f"{bucket.name}: {bucket.profile.service_kind} containers are not scalable")
    for key in sample_keys:
        bucket.key_histogram[key] += 1
    bucket.retile(partitions, bucket.last_active, "prewarm")
    return bucket


def sample_latency(profile: StorageProfile, op: str, rng) -> float:
    return profile.latency(op).sample(rng)


def submit(bucket: Bucket, op: str, key: str, size: int, now: int, rng) -> RequestOutcome:
    """Admit or throttle one request at ``now``."""
    if op not in OPS:
        raise ValueError(f"op must be one of {OPS}, got '{op}'")
    profile = bucket.profile
    if op == "put" and size > profile.max_item_size:
        raise ItemTooLarge(profile.service_kind, size, profile.max_item_size)
    part = bucket.partition_for(key)
    if op == "get":
        window, quota = part.read_window, profile.read_iops_quota
    elif bucket.scaling.write_scaling:
        window, quota = part.write_window, profile.write_iops_quota
    else:
        window, quota = bucket._write_window, profile.write_iops_quota
    _expire(window, now)
    bucket.key_histogram[key] += 1
    part.last_active = now
    bucket.last_active = max(bucket.last_active, now)
    second = now // US_PER_S
    bucket.requests[f"{op}_attempts"] += 1
    if len(window) >= quota:
        if op == "get":
            part.throttled_reads += 1
        else:
            part.throttled_writes += 1
        bucket.metrics[second]["throttled"] += 1
        bucket.requests[f"{op}_throttled"] += 1
        return RequestOutcome("throttled", 0.0, 0)
    window.append(now)
    latency = profile.latency(op).sample(rng)
    transfer = 0.0
    if size > 0:
        ready = now + to_us(latency)
        begin = max(ready, bucket._pipe_busy[op])
        done = begin + ceil_us(size / profile.bw_cap(op))
        bucket._pipe_busy[op] = done
        transfer = to_s(done - ready)
    bucket.metrics[second]["ok"] += 1
    bucket.metrics[second][f"bytes_{op}"] += size
    bucket.requests[op] += 1
    return RequestOutcome("ok", latency, size, transfer)


def tick_scaling(bucket: Bucket, now: int) -> List[ScalingEvent]:
    """One scaling round: advance saturation clocks, split or merge."""
    if not bucket.profile.scalable:
        return []
    scaling = bucket.scaling
    events: List[ScalingEvent] = []
    ripe = False
    for part in bucket.partitions:
        saturated = part.throttled_reads > 0 or (scaling.write_scaling and part.throttled_writes > 0)
        part.saturation_clock = part.saturation_clock + scaling.tick_interval if saturated else 0.0
        part.throttled_reads = 0
        part.throttled_writes = 0
        ripe = ripe or part.saturation_clock >= scaling.split_threshold - 1e-9
    if ripe:
        event = bucket.retile(len(bucket.partitions) + 1, now, "split")
        if event is not None:
            events.append(event)
        return events
    idle = now - bucket.last_active
    floor = len(bucket.partitions)
    for idle_s, partition_floor in sorted(scaling.merge_schedule):
        if idle >= to_us(idle_s * bucket.time_scale):
            floor = min(floor, partition_floor)
    if floor < len(bucket.partitions):
        event = bucket.retile(floor, now, "merge")
        if event is not None:
            events.append(event)
    return events


def scaling_process(sim: Simulation, bucket: Bucket, until_us: Optional[int] = None):
    """Periodic ``tick_scaling`` as a simulation process."""
    tick_us = to_us(bucket.scaling.tick_interval)
    while until_us is None or sim.now <= until_us:
        for event in tick_scaling(bucket, sim.now):
            sim.trace.log_event(event.kind, bucket.name, data={"partitions": event.after})
        yield sim.sleep_us(tick_us)


def aggregate_throughput(bucket: Bucket, op: str, offered: float) -> float:
    """Achieved aggregate bytes/s for ``offered`` bytes/s of streaming load."""
    if offered < 0:
        raise ValueError("offered load must be non-negative")
    return min(offered, bucket.profile.bw_cap(op))


def offer_load(
    bucket: Bucket,
    rate: float,
    now: int,
    schedule: Optional[WarmingSchedule] = None,
    keys: Sequence[str] = (),
    duration: float = 1.0,
) -> LoadOutcome:
    """Fluid read load for one step: closed-loop clients against the current capacity.

    Load spreads evenly over partitions. Above capacity every partition throttles.
    Clients spend ``think_time`` per served read and ``throttle_cost`` per failed
    one, which fixes the share of reads that fail. Every try of a read is
    throttled with the same probability ``p``, so a failed read took
    ``client_attempts`` tries and the store sees ``ok / (1 - p)`` requests.
    """
    schedule = schedule or WarmingSchedule()
    capacity = bucket.read_capacity
    if rate <= 0:
        return LoadOutcome(0.0, 0.0, 0.0, 0.0)
    bucket.last_active = max(bucket.last_active, now)
    for key in keys:
        bucket.key_histogram[key] += 1
    second = now // US_PER_S
    rho = rate / capacity
    if rho <= 1:
        ok = rate * duration
        failed = 0.0
        attempts = ok
    else:
        excess = (rho - 1) * schedule.think_time
        fraction = excess / (excess + schedule.throttle_cost)
        ok = capacity * duration
        failed = ok / (1 - fraction) - ok
        per_try = fraction ** (1.0 / schedule.client_attempts)
        attempts = ok / (1 - per_try)
        for part in bucket.partitions:
            part.throttled_reads += 1
    for part in bucket.partitions:
        part.last_active = now
    bucket.metrics[second]["ok"] += int(round(ok))
    bucket.metrics[second]["throttled"] += int(round(attempts - ok))
    bucket.requests["get"] += ok
    bucket.requests["get_throttled"] += attempts - ok
    bucket.requests["get_failed"] += failed
    bucket.requests["get_attempts"] += attempts
    return LoadOutcome(rate * duration, ok, failed, attempts)


@dataclass
class WarmupTrajectory:
    """Partition count reached over a warm-up ramp.

    ``attempts`` holds the requests issued up to each split, retries included.
    """

    partitions: List[int] = field(default_factory=list)
    times: List[float] = field(default_factory=list)
    attempts: List[float] = field(default_factory=list)
    ok: float = 0.0
    failed: float = 0.0
    issued: float = 0.0
    duration: float = 0.0
    per_second: List[Dict[str, float]] = field(default_factory=list)

    @property
    def error_fraction(self) -> float:
        """Share of reads that failed after every client try."""
        total = self.ok + self.failed
        return self.failed / total if total else 0.0

    @property
    def total_attempts(self) -> float:
        return self.issued


def _ramp_keys(schedule: WarmingSchedule, instances: int, hashed: bool) -> List[str]:
    keys = []
    for instance in range(instances):
        prefix = f"{(instance * 2654435761) % 4096:03x}" if hashed else None
        for obj in range(schedule.keys_per_instance):
            keys.append(ramp_key(instance, obj, prefix))
    return keys


def run_ramp(
    sim: Simulation,
    bucket: Bucket,
    schedule: WarmingSchedule,
    duration: Optional[float] = None,
    target_partitions: Optional[int] = None,
    hashed_prefixes: bool = False,
) -> WarmupTrajectory:
    """Drive the stepped read ramp until ``duration`` or ``target_partitions``."""
    if duration is None and target_partitions is None:
        raise ValueError("run_ramp needs a duration or a target partition count")
    trajectory = WarmupTrajectory(partitions=[len(bucket.partitions)], times=[0.0], attempts=[0.0])
    done = sim.event()
    tick_us = to_us(bucket.scaling.tick_interval)
    start = sim.now

    def ticker():
        while not done.triggered:
            for event in tick_scaling(bucket, sim.now):
                if event.kind == "split":
                    trajectory.partitions.append(event.after)
                    trajectory.times.append(to_s(sim.now - start))
                    trajectory.attempts.append(trajectory.total_attempts)
                    sim.trace.log_event("split", bucket.name, data={"partitions": event.after})
                    if target_partitions is not None and event.after >= target_partitions:
                        done.succeed()
                        return
            yield sim.sleep_us(tick_us)

    def driver():
        step = 0
        while not done.triggered:
            elapsed = float(step)
            if duration is not None and elapsed >= duration:
                done.succeed()
                return
            instances = schedule.instances_at(elapsed)
            outcome = offer_load(
                bucket,
                schedule.demand_at(elapsed),
                sim.now,
                schedule,
                _ramp_keys(schedule, instances, hashed_prefixes),
            )
            trajectory.ok += outcome.ok
            trajectory.failed += outcome.failed
            trajectory.issued += outcome.attempts
            trajectory.per_second.append(
                {
                    "t_s": elapsed,
                    "offered": outcome.offered,
                    "ok": outcome.ok,
                    "failed": outcome.failed,
                    "requests": outcome.attempts,
                }
            )
            step += 1
            yield sim.sleep(1.0)

    # the ticker must see a second's load before that second's driver step
    sim.process(ticker())
    sim.process(driver())
    sim.env.run(until=done)
    trajectory.duration = to_s(sim.now - start)
    return trajectory


def simulate_warmup(
    profile: StorageProfile,
    schedule: WarmingSchedule,
    scaling: Optional[ScalingPolicy] = None,
    seed: int = 42,
    target_partitions: Optional[int] = None,
) -> WarmupTrajectory:
    """Warm a fresh bucket over the ramp up to ``target_partitions`` splits."""
    sim = Simulation(seed=seed)
    bucket = create_container(profile, "warmup", scaling)
    return run_ramp(sim, bucket, schedule, target_partitions=target_partitions or schedule.measured_partitions)


@dataclass(frozen=True)
class Attempt:
    index: int
    t_us: int
    status: str
    latency: float
    backoff_cap: float = 0.0


@dataclass
class ClientResult:
    outcome: RequestOutcome
    attempts: List[Attempt]


class RetryingClient:
    """Client issuing requests with timeouts, exponential backoff and full jitter.

    ``request`` is a simulation process: ``result = yield sim.process(client.request(...))``.
    """

    def __init__(self, sim: Simulation, bucket: Bucket, policy: Optional[RetryPolicy] = None, label: str = "client"):
        self.sim = sim
        self.bucket = bucket
        self.policy = policy or RetryPolicy()
        self.label = label
        self._jitter = sim.rng_stream(f"retry:{bucket.name}:{label}")
        self._latency = sim.rng_stream(f"latency:{bucket.name}:{label}")
        self.stats: Counter = Counter()

    def request(self, op: str, key: str, size: int = 0):
        policy = self.policy
        attempts: List[Attempt] = []
        for index in range(1, policy.max_attempts + 1):
            now = self.sim.now
            outcome = submit(self.bucket, op, key, size, now, self._latency)
            self.stats["attempts"] += 1
            status = outcome.status
            if status == "ok" and outcome.latency > policy.request_timeout:
                status = "timeout"
            if status == "ok":
                attempts.append(Attempt(index, now, status, outcome.latency))
                yield self.sim.sleep(outcome.total)
                return ClientResult(outcome, attempts)
            self.stats[status] += 1
            cap = policy.backoff_cap(index)
            attempts.append(Attempt(index, now, status, outcome.latency, cap))
            if status == "timeout":
                yield self.sim.sleep(policy.request_timeout)
            if index == policy.max_attempts:
                break
            delay = self._jitter.uniform(0.0, cap) if policy.jitter == "full" else cap
            yield self.sim.sleep(delay)
        self.stats["exhausted"] += 1
        raise Exhausted(key, attempts)


def retrying_client(sim: Simulation, bucket: Bucket, policy: Optional[RetryPolicy] = None, label: str = "client") -> RetryingClient:
    return RetryingClient(sim, bucket, policy, label)


def request(client: RetryingClient, op: str, key: str, size: int = 0) -> ClientResult:
    """Run one retried request to completion on the client's simulation."""
    return client.sim.run_process(client.request(op, key, size))


def _latency_from(record: Dict) -> LatencyModel:
    return LatencyModel(
        record["median_ms"] / 1000.0,
        record["p95_ms"] / 1000.0,
        record.get("tail_cap_ms", 10000) / 1000.0,
    )


def _scaled(record: Dict, stem: str) -> float:
    for suffix, unit in (("gib", GiB), ("mib", MiB), ("kib", KiB)):
        key = f"{stem}_{suffix}" if stem.startswith("max_item") else f"{stem}_{suffix}_s"
        if key in record:
            return record[key] * unit
    raise ValidationError(f"storage.toml: missing '{stem}'")


def _profile_from(name: str, record: Dict) -> StorageProfile:
    try:
        return StorageProfile(
            service_kind=name,
            read_iops_quota=record["read_iops"],
            write_iops_quota=record["write_iops"],
            read_bw_cap=_scaled(record, "read_bw"),
            write_bw_cap=_scaled(record, "write_bw"),
            max_item_size=int(_scaled(record, "max_item")),
            read_latency=_latency_from(record["read_latency"]),
            write_latency=_latency_from(record["write_latency"]),
            scalable=record.get("scalable", False),
        )
    except KeyError as exc:
        raise ValidationError(f"storage.toml: profile '{name}' lacks {exc}") from exc


def load_storage_calibration(directory: Optional[Path] = None) -> StorageCalibration:
    data = calibration_file("storage.toml", directory)
    profiles = {name: _profile_from(name, record) for name, record in data.get("profiles", {}).items()}
    missing = [kind for kind in SERVICE_KINDS if kind not in profiles]
    if missing:
        raise ValidationError(f"storage.toml: missing profiles {missing}")
    raw = data.get("scaling", {})
    scaling = ScalingPolicy(
        tick_interval=raw.get("tick_interval_s", 10.0),
        split_threshold=raw.get("split_threshold_s", 390.0),
        merge_schedule=tuple((float(idle), int(floor)) for idle, floor in raw.get("merge_schedule", ScalingPolicy.merge_schedule)),
        write_scaling=raw.get("write_scaling", False),
    )
    raw = data.get("retry", {})
    retry = RetryPolicy(
        request_timeout=raw.get("request_timeout_s", 0.2),
        initial_backoff=raw.get("initial_backoff_s", 0.15),
        multiplier=raw.get("multiplier", 2.0),
        max_backoff=raw.get("max_backoff_s", 5.0),
        max_attempts=raw.get("max_attempts", 10),
    )
    raw = data.get("warming", {})
    warming = WarmingSchedule(
        base_instances=raw.get("base_instances", 20),
        step_instances=raw.get("step_instances", 2),
        step_s=raw.get("step_s", 39.0),
        per_instance_rate=raw.get("per_instance_rate", 300.0),
        keys_per_instance=raw.get("keys_per_instance", 10),
        think_time=raw.get("think_time_s", 0.027),
        throttle_cost=raw.get("throttle_cost_s", 0.075),
        client_attempts=raw.get("client_attempts", 6),
        measured_partitions=raw.get("measured_partitions", 5),
    )
    return StorageCalibration(profiles, scaling, retry, warming)
