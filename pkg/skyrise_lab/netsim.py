"""Analytic dual token-bucket model of function and VM network links.

A fresh link moves data at its burst rate until the rechargeable tokens and
the one-off budget are spent (rechargeable first), then at the baseline rate.
No refill is credited while a link is bursting. Once exhausted, tokens refill
continuously at the baseline rate, or in ``refill_interval`` steps when
``quantized_refill`` is set. After an idle gap of at least
``idle_refill_threshold`` the rechargeable part is full again; the one-off
budget never comes back.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Set, Tuple

import numpy as np

from skyrise_lab.config import calibration_file
from skyrise_lab.errors import ValidationError
from skyrise_lab.units import GiB, MiB, US_PER_S, ceil_us, gbps, to_s, to_us

logger = logging.getLogger(__name__)

DIRECTIONS = ("in", "out")

# outbound burst is reduced and noisier than inbound; no published number
DEFAULT_OUTBOUND_BURST = 0.8 * GiB


@dataclass(frozen=True)
class TokenBucketSpec:
    burst_rate: float
    baseline_rate: float
    rechargeable_capacity: float
    one_off_capacity: float
    refill_interval: float = 0.1
    idle_refill_threshold: float = 1.0
    quantized_refill: bool = False

    def __post_init__(self) -> None:
        if self.baseline_rate < 0 or self.burst_rate <= 0:
            raise ValidationError("token bucket rates must be positive")
        if self.rechargeable_capacity < 0 or self.one_off_capacity < 0:
            raise ValidationError("token bucket capacities must be non-negative")
        bursting = self.rechargeable_capacity > 0 or self.one_off_capacity > 0
        if bursting and self.burst_rate <= self.baseline_rate:
            raise ValidationError("burst_rate must exceed baseline_rate for a bursting link")
        if self.refill_interval <= 0:
            raise ValidationError("refill_interval must be positive")

    @property
    def refill_amount(self) -> float:
        return self.baseline_rate * self.refill_interval

    @property
    def initial_budget(self) -> float:
        return self.rechargeable_capacity + self.one_off_capacity


@dataclass
class BucketState:
    spec: TokenBucketSpec
    tokens: float
    one_off_remaining: float
    last_update: int = 0
    busy_until: int = 0

    @classmethod
    def fresh(cls, spec: TokenBucketSpec, now: int = 0) -> "BucketState":
        return cls(spec, spec.rechargeable_capacity, spec.one_off_capacity, now, now)

    @property
    def budget(self) -> float:
        return self.tokens + self.one_off_remaining


@dataclass(frozen=True)
class LinkSpec:
    name: str
    inbound: TokenBucketSpec
    outbound: TokenBucketSpec
    approximate: bool = False

    def new_link(self, now: int = 0, name: Optional[str] = None) -> "LinkState":
        return LinkState(
            name or self.name,
            BucketState.fresh(self.inbound, now),
            BucketState.fresh(self.outbound, now),
        )


@dataclass
class LinkState:
    name: str
    inbound: BucketState
    outbound: BucketState

    def bucket(self, direction: str) -> BucketState:
        if direction == "in":
            return self.inbound
        if direction == "out":
            return self.outbound
        raise ValueError(f"direction must be 'in' or 'out', got '{direction}'")


@dataclass
class VpcGroup:
    members: Set[str]
    aggregate_cap: float = 20 * GiB


@dataclass(frozen=True)
class Segment:
    """Constant-rate stretch of a transfer, in seconds of simulated time"""

    start: float
    end: float
    rate: float

    @property
    def nbytes(self) -> float:
        return (self.end - self.start) * self.rate


@dataclass
class TransferPlan:
    begin: int
    completion: int
    segments: List[Segment] = field(default_factory=list)


def lambda_default_spec(direction: str = "in", outbound_burst: float = DEFAULT_OUTBOUND_BURST) -> TokenBucketSpec:
    burst = 1.2 * GiB if direction == "in" else outbound_burst
    return TokenBucketSpec(
        burst_rate=burst,
        baseline_rate=75 * MiB,
        rechargeable_capacity=150 * MiB,
        one_off_capacity=150 * MiB,
        refill_interval=0.1,
        idle_refill_threshold=1.0,
    )


def lambda_link_spec(outbound_burst: float = DEFAULT_OUTBOUND_BURST, quantized: bool = False) -> LinkSpec:
    inbound = replace(lambda_default_spec("in"), quantized_refill=quantized)
    outbound = replace(lambda_default_spec("out", outbound_burst), quantized_refill=quantized)
    return LinkSpec("lambda_arm", inbound, outbound)


def _refill(state: BucketState, now: int) -> None:
    if now <= state.last_update:
        return
    spec = state.spec
    elapsed = to_s(now - state.last_update)
    if elapsed >= spec.idle_refill_threshold:
        state.tokens = spec.rechargeable_capacity
    else:
        state.tokens = min(spec.rechargeable_capacity, state.tokens + spec.baseline_rate * elapsed)
    state.last_update = now


def idle_refill(link: LinkState, now: int) -> LinkState:
    """Credit refill for the time since each bucket was last touched."""
    for state in (link.inbound, link.outbound):
        if state.busy_until <= now:
            _refill(state, now)
    return link


def _spend(state: BucketState, amount: float) -> None:
    from_tokens = min(state.tokens, amount)
    state.tokens -= from_tokens
    state.one_off_remaining = max(0.0, state.one_off_remaining - (amount - from_tokens))


def _baseline_segments(spec: TokenBucketSpec, start: float, nbytes: float) -> Tuple[List[Segment], float, float]:
    """Post-exhaustion delivery of ``nbytes``; returns (segments, end, leftover tokens)."""
    if nbytes <= 0:
        return [], start, 0.0
    if spec.baseline_rate <= 0:
        raise ValidationError("link has no baseline bandwidth left for the transfer")
    if not spec.quantized_refill:
        end = start + nbytes / spec.baseline_rate
        return [Segment(start, end, spec.baseline_rate)], end, 0.0
    chunk = spec.refill_amount
    count = int(math.ceil(nbytes / chunk - 1e-9))
    segments = []
    remaining = nbytes
    end = start
    for index in range(1, count + 1):
        size = min(chunk, remaining)
        chunk_start = start + index * spec.refill_interval
        end = chunk_start + size / spec.burst_rate
        segments.append(Segment(chunk_start, end, spec.burst_rate))
        remaining -= size
    return segments, end, chunk - size


def plan_transfer(state: BucketState, nbytes: float, begin: int) -> Tuple[TransferPlan, float, float]:
    """Closed-form schedule of a transfer starting at ``begin`` (state untouched)."""
    spec = state.spec
    t0 = to_s(begin)
    segments: List[Segment] = []
    burst_bytes = min(nbytes, state.budget)
    t = t0
    if burst_bytes > 0:
        t = t0 + burst_bytes / spec.burst_rate
        segments.append(Segment(t0, t, spec.burst_rate))
    after = BucketState(spec, state.tokens, state.one_off_remaining)
    _spend(after, burst_bytes)
    tokens, one_off = after.tokens, after.one_off_remaining
    rest = nbytes - burst_bytes
    if rest > 0:
        tail, t, tokens = _baseline_segments(spec, t, rest)
        segments.extend(tail)
        one_off = 0.0
    completion = begin + ceil_us(t - t0)
    return TransferPlan(begin, completion, segments), tokens, one_off


def transfer_plan(link: LinkState, direction: str, nbytes: float, start: int) -> TransferPlan:
    """Queue behind earlier transfers (FIFO), refill, then move ``nbytes``."""
    if nbytes < 0:
        raise ValueError("nbytes must be non-negative")
    state = link.bucket(direction)
    begin = max(start, state.busy_until)
    if nbytes == 0:
        return TransferPlan(begin, begin)
    _refill(state, begin)
    plan, tokens, one_off = plan_transfer(state, nbytes, begin)
    state.tokens = tokens
    state.one_off_remaining = one_off
    state.busy_until = plan.completion
    state.last_update = plan.completion
    return plan


def transfer(link: LinkState, direction: str, nbytes: float, start: int) -> int:
    return transfer_plan(link, direction, nbytes, start).completion


def saturate(link: LinkState, direction: str, start: int, duration: float) -> TransferPlan:
    """Send as much as the bucket allows during ``duration`` seconds."""
    state = link.bucket(direction)
    spec = state.spec
    begin = max(start, state.busy_until)
    _refill(state, begin)
    t0 = to_s(begin)
    t_end = t0 + duration
    segments: List[Segment] = []
    burst_time = state.budget / spec.burst_rate
    if duration <= burst_time:
        segments.append(Segment(t0, t_end, spec.burst_rate))
        _spend(state, duration * spec.burst_rate)
    else:
        if burst_time > 0:
            segments.append(Segment(t0, t0 + burst_time, spec.burst_rate))
        _spend(state, state.budget)
        state.one_off_remaining = 0.0
        t_ex = t0 + burst_time
        if not spec.quantized_refill:
            if spec.baseline_rate > 0:
                segments.append(Segment(t_ex, t_end, spec.baseline_rate))
        else:
            index = 1
            while t_ex + index * spec.refill_interval < t_end:
                chunk_start = t_ex + index * spec.refill_interval
                chunk_end = min(t_end, chunk_start + spec.refill_amount / spec.burst_rate)
                segments.append(Segment(chunk_start, chunk_end, spec.burst_rate))
                index += 1
        state.tokens = 0.0
    completion = begin + to_us(duration)
    state.busy_until = completion
    state.last_update = completion
    return TransferPlan(begin, completion, segments)


def bin_segments(segments: Iterable[Segment], start_s: float, end_s: float, bin_s: float = 0.02) -> np.ndarray:
    """Bytes per bin over ``[start_s, end_s)``; divide by ``bin_s`` for a rate."""
    count = int(round((end_s - start_s) / bin_s))
    bins = np.zeros(count, dtype=np.float64)
    for seg in segments:
        lo = max(seg.start, start_s)
        hi = min(seg.end, end_s)
        if hi <= lo:
            continue
        first = int((lo - start_s) // bin_s)
        last = min(count - 1, int((hi - start_s) // bin_s))
        for index in range(first, last + 1):
            bin_lo = start_s + index * bin_s
            overlap = min(hi, bin_lo + bin_s) - max(lo, bin_lo)
            if overlap > 0:
                bins[index] += overlap * seg.rate
    return bins


def vpc_grant(group: Optional[VpcGroup], demands: Dict[str, float], now: int = 0) -> Dict[str, float]:
    """Proportionally scale the group's members down to the aggregate cap."""
    if any(rate < 0 for rate in demands.values()):
        raise ValueError("demands must be non-negative")
    granted = dict(demands)
    if group is None:
        return granted
    members = [name for name in demands if name in group.members]
    total = sum(demands[name] for name in members)
    if total <= group.aggregate_cap or total == 0:
        return granted
    scale = group.aggregate_cap / total
    for name in members:
        granted[name] = demands[name] * scale
    return granted


def fleet_throughput(
    links: List[LinkState],
    direction: str,
    duration: float,
    step: float = 0.02,
    group: Optional[VpcGroup] = None,
) -> np.ndarray:
    """Fluid aggregate rate (bytes/s per step) of links all sending at full demand."""
    steps = int(round(duration / step))
    series = np.zeros(steps, dtype=np.float64)
    for index in range(steps):
        demands = {}
        for link in links:
            state = link.bucket(direction)
            spec = state.spec
            demands[link.name] = spec.burst_rate if state.budget > 0 else spec.baseline_rate
        grants = vpc_grant(group, demands)
        total = 0.0
        for link in links:
            state = link.bucket(direction)
            rate = grants[link.name]
            moved = rate * step
            if state.budget > 0:
                used = min(moved, state.budget)
                _spend(state, used)
                if used < moved and rate > 0:
                    moved = used + min(rate, state.spec.baseline_rate) * (step - used / rate)
            total += moved
        series[index] = total / step
    return series


def _bucket_from_record(record: Dict, shared: Dict) -> TokenBucketSpec:
    burst = record.get("burst_gib_s")
    burst_rate = burst * GiB if burst is not None else gbps(record["burst_gbps"])
    if "baseline_mib_s" in record:
        baseline = record["baseline_mib_s"] * MiB
    else:
        baseline = gbps(record["baseline_gbps"])
    unit = GiB if "rechargeable_gib" in record or "one_off_gib" in record else MiB
    suffix = "gib" if unit == GiB else "mib"
    return TokenBucketSpec(
        burst_rate=burst_rate,
        baseline_rate=baseline,
        rechargeable_capacity=record.get(f"rechargeable_{suffix}", 0) * unit,
        one_off_capacity=record.get(f"one_off_{suffix}", 0) * unit,
        refill_interval=shared.get("refill_interval_s", 0.1),
        idle_refill_threshold=shared.get("idle_refill_threshold_s", 1.0),
        quantized_refill=shared.get("quantized_refill", False),
    )


def load_link_specs(directory: Optional[Path] = None) -> Dict[str, LinkSpec]:
    """Named link specs from ``links.toml``."""
    data = calibration_file("links.toml", directory)
    specs: Dict[str, LinkSpec] = {}
    for name, record in data.items():
        if "inbound" not in record:
            raise ValidationError(f"links.toml: '{name}' has no inbound bucket")
        inbound = _bucket_from_record(record["inbound"], record)
        outbound = _bucket_from_record(record.get("outbound", record["inbound"]), record)
        specs[name] = LinkSpec(name, inbound, outbound, approximate=record.get("approximate", False))
    logger.debug("loaded %d link specs", len(specs))
    return specs
