"""Function platform and provisioned VM pool models.

The platform hands out sandboxes most-recently-used first, cold-starts new
ones when none is idle and admits concurrent invocations up to a ceiling that
starts at the burst limit and grows every minute. VM pools expose a FIFO of
worker slots once their startup time has passed.
"""

import enum
import logging
import math
from collections import Counter, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Deque, Dict, Iterable, List, Optional, Union

import simpy

from skyrise_lab.config import calibration_file
from skyrise_lab.errors import QuotaExceeded, ValidationError
from skyrise_lab.netsim import LinkSpec, LinkState, lambda_link_spec, transfer
from skyrise_lab.pricing import CostReport, PriceCatalog, faas_cost, vm_cost
from skyrise_lab.simcore import Simulation
from skyrise_lab.units import MINUTE, MiB, US_PER_S, ceil_ms, to_s, to_us

logger = logging.getLogger(__name__)

VCPU_MIB = 1769
MIN_MEMORY_MIB = 128
MAX_MEMORY_MIB = 10240


class SandboxState(enum.Enum):
    COLD = 1
    WARM = 2
    BUSY = 3


@dataclass(frozen=True)
class ColdStartModel:
    platform_overhead: float = 0.125
    download_bandwidth: float = 50 * MiB
    init_time: float = 0.1

    def latency(self, binary_bytes: float) -> float:
        return self.platform_overhead + binary_bytes / self.download_bandwidth + self.init_time


@dataclass(frozen=True)
class FunctionSpec:
    name: str
    memory_mib: int = 7076
    binary_mib: float = 30
    cold_start: ColdStartModel = ColdStartModel()

    def __post_init__(self) -> None:
        if not MIN_MEMORY_MIB <= self.memory_mib <= MAX_MEMORY_MIB:
            raise ValidationError(
                f"function '{self.name}': memory {self.memory_mib} MiB outside "
                f"[{MIN_MEMORY_MIB}, {MAX_MEMORY_MIB}]"
            )
        if self.binary_mib < 0:
            raise ValidationError(f"function '{self.name}': negative binary size")

    @property
    def vcpus(self) -> float:
        return self.memory_mib / VCPU_MIB

    @property
    def cold_latency(self) -> float:
        return self.cold_start.latency(self.binary_mib * MiB)


@dataclass(frozen=True)
class PlatformConfig:
    burst_limit: int = 3000
    scale_rate_per_min: int = 500
    account_quota: int = 10000
    idle_lifetime: float = 600.0
    warm_start: float = 0.005
    async_poll: float = 0.05
    invoke_api: float = 0.02
    reclaim_interval: float = 60.0


@dataclass(frozen=True)
class VmConfig:
    startup: float = 45.0
    slot_vcpus: int = 4
    link: str = "c6g.xlarge"


@dataclass
class PlatformCalibration:
    faas: PlatformConfig
    cold_start: ColdStartModel
    vm: VmConfig
    worker: FunctionSpec
    worker_settings: Dict[str, Any] = field(default_factory=dict)
    engine: Dict[str, Any] = field(default_factory=dict)


@dataclass
class Sandbox:
    sandbox_id: int
    function: FunctionSpec
    state: SandboxState
    created_at: int
    last_used: int
    link: LinkState


@dataclass
class InvocationRecord:
    invocation_id: int
    function: str
    memory_mib: int
    sandbox_id: int
    cold: bool
    mode: str
    requested_at: int
    admitted_at: int
    started_at: int
    finished_at: Optional[int] = None

    @property
    def start_latency(self) -> float:
        return to_s(self.started_at - self.requested_at)

    @property
    def duration(self) -> float:
        if self.finished_at is None:
            raise ValueError(f"invocation {self.invocation_id} has not finished")
        return to_s(self.finished_at - self.admitted_at)

    @property
    def billed_ms(self) -> int:
        return ceil_ms(self.duration)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "invocation_id": self.invocation_id,
            "function": self.function,
            "sandbox_id": self.sandbox_id,
            "cold": self.cold,
            "mode": self.mode,
            "start_latency_s": round(self.start_latency, 6),
            "billed_ms": self.billed_ms if self.finished_at is not None else None,
        }


class ConcurrencyScaler:
    """Step-function concurrency ceiling: burst, then +rate per minute, up to quota."""

    def __init__(self, burst_limit: int = 3000, scale_rate: int = 500, account_quota: int = 10000):
        self.burst_limit = burst_limit
        self.scale_rate = scale_rate
        self.account_quota = account_quota
        self.burst_start: Optional[int] = None

    def ceiling(self, now: int) -> int:
        if self.burst_start is None:
            return min(self.burst_limit, self.account_quota)
        minutes = (now - self.burst_start) // (MINUTE * US_PER_S)
        return min(self.account_quota, self.burst_limit + self.scale_rate * int(minutes))

    def admits(self, in_flight: int, now: int) -> bool:
        if self.burst_start is None:
            self.burst_start = now
        return in_flight < self.ceiling(now)

    def next_step(self, now: int) -> int:
        start = self.burst_start if self.burst_start is not None else now
        period = MINUTE * US_PER_S
        return start + ((now - start) // period + 1) * period

    def settle(self) -> None:
        """Scale-in: the next invocation starts a new burst window."""
        self.burst_start = None


class FaasPlatform:
    def __init__(self, sim: Simulation, config: Optional[PlatformConfig] = None, link_spec: Optional[LinkSpec] = None):
        self.sim = sim
        self.config = config or PlatformConfig()
        self.link_spec = link_spec or lambda_link_spec()
        self.scaler = ConcurrencyScaler(self.config.burst_limit, self.config.scale_rate_per_min, self.config.account_quota)
        self.sandboxes: Dict[int, Sandbox] = {}
        self.records: List[InvocationRecord] = []
        self.stats: Counter = Counter()
        self.in_flight = 0
        self._warm: Dict[str, List[int]] = {}
        self._waiting: Deque[simpy.Event] = deque()
        self._watchers: List[simpy.Event] = []
        self._drain_at: Optional[int] = None
        self._notify_at: Optional[int] = None
        self._next_sandbox = 0

    def _acquire_sandbox(self, function: FunctionSpec, now: int):
        stack = self._warm.setdefault(function.name, [])
        while stack:
            sandbox = self.sandboxes.get(stack.pop())
            if sandbox is not None and sandbox.state is SandboxState.WARM:
                sandbox.state = SandboxState.BUSY
                return sandbox, False
        sandbox_id = self._next_sandbox
        self._next_sandbox += 1
        link = self.link_spec.new_link(now, name=f"{function.name}-sb{sandbox_id}")
        sandbox = Sandbox(sandbox_id, function, SandboxState.BUSY, now, now, link)
        self.sandboxes[sandbox_id] = sandbox
        return sandbox, True

    def _schedule_drain(self) -> None:
        at = self.scaler.next_step(self.sim.now)
        if self._drain_at is not None and self._drain_at <= at:
            return
        self._drain_at = at
        self.sim.schedule(at, self._drain_tick)

    def _drain_tick(self) -> None:
        self._drain_at = None
        self._drain()
        if self._waiting:
            self._schedule_drain()

    def _drain(self) -> None:
        while self._waiting and self.scaler.admits(self.in_flight, self.sim.now):
            self.in_flight += 1
            self._waiting.popleft().succeed(self.sim.now)

    def invoke(self, function: FunctionSpec, payload_size: int = 0, mode: str = "sync"):
        """Simulation process returning the started ``InvocationRecord``.

        The sandbox stays busy until ``release`` is called with the record.
        """
        if mode not in ("sync", "async"):
            raise ValueError(f"mode must be sync or async, got '{mode}'")
        sim = self.sim
        requested = sim.now
        if self.scaler.admits(self.in_flight, requested):
            self.in_flight += 1
        elif mode == "sync":
            self.stats["rejected"] += 1
            raise QuotaExceeded(
                f"{function.name}: {self.in_flight} concurrent invocations at ceiling "
                f"{self.scaler.ceiling(requested)}"
            )
        else:
            waiter = sim.event()
            self._waiting.append(waiter)
            self.stats["queued"] += 1
            self._schedule_drain()
            yield waiter
        admitted = sim.now
        sandbox, cold = self._acquire_sandbox(function, admitted)
        latency = function.cold_latency if cold else self.config.warm_start
        if mode == "async":
            latency += self.config.async_poll
        started = admitted + to_us(latency)
        if payload_size > 0:
            started = transfer(sandbox.link, "in", payload_size, started)
        yield sim.until(started)
        record = InvocationRecord(
            invocation_id=len(self.records),
            function=function.name,
            memory_mib=function.memory_mib,
            sandbox_id=sandbox.sandbox_id,
            cold=cold,
            mode=mode,
            requested_at=requested,
            admitted_at=admitted,
            started_at=sim.now,
        )
        self.records.append(record)
        self.stats["cold" if cold else "warm"] += 1
        sim.trace.log_event("invoke", function.name, f"sb{sandbox.sandbox_id}", {"cold": cold, "mode": mode})
        return record

    def sandbox(self, record: InvocationRecord) -> Sandbox:
        return self.sandboxes[record.sandbox_id]

    def release(self, record: InvocationRecord) -> None:
        now = self.sim.now
        record.finished_at = now
        sandbox = self.sandboxes[record.sandbox_id]
        sandbox.state = SandboxState.WARM
        sandbox.last_used = now
        self._warm.setdefault(sandbox.function.name, []).append(sandbox.sandbox_id)
        self.in_flight -= 1
        self._drain()
        self._notify()
        if self.in_flight == 0 and not self._waiting:
            self.scaler.settle()

    def admission_changed(self) -> simpy.Event:
        """Event fired at the next sandbox release or concurrency ceiling step.

        Sync callers rejected with ``QuotaExceeded`` wait on it before invoking again.
        """
        event = self.sim.event()
        self._watchers.append(event)
        now = self.sim.now
        at = self.scaler.next_step(now)
        if self.scaler.ceiling(at) > self.scaler.ceiling(now) and (self._notify_at is None or at < self._notify_at):
            self._notify_at = at
            self.sim.schedule(at, self._step_tick)
        return event

    def _step_tick(self) -> None:
        self._notify_at = None
        self._notify()

    def _notify(self) -> None:
        watchers, self._watchers = self._watchers, []
        for event in watchers:
            event.succeed(self.sim.now)

    def run_invocation(self, function: FunctionSpec, body_seconds: float = 0.0, payload_size: int = 0, mode: str = "sync"):
        """Invoke, run a fixed-length body, release; returns the finished record."""
        record = yield self.sim.process(self.invoke(function, payload_size, mode))
        yield self.sim.sleep(body_seconds)
        self.release(record)
        return record

    def reclaim_idle(self, now: Optional[int] = None) -> int:
        now = self.sim.now if now is None else now
        if math.isinf(self.config.idle_lifetime):
            return 0
        lifetime = to_us(self.config.idle_lifetime)
        doomed = [
            sandbox_id
            for sandbox_id, sandbox in self.sandboxes.items()
            if sandbox.state is SandboxState.WARM and now - sandbox.last_used >= lifetime
        ]
        for sandbox_id in doomed:
            del self.sandboxes[sandbox_id]
        if doomed:
            self.stats["reclaimed"] += len(doomed)
            logger.debug("reclaimed %d idle sandboxes at %.1fs", len(doomed), to_s(now))
        return len(doomed)

    def reclaim_process(self):
        while True:
            yield self.sim.sleep(self.config.reclaim_interval)
            self.reclaim_idle()


class VmPool:
    """A provisioned cluster whose worker slots are handed out FIFO."""

    def __init__(
        self,
        sim: Simulation,
        instance_type: str,
        count: int,
        vcpus: int,
        config: Optional[VmConfig] = None,
        link_spec: Optional[LinkSpec] = None,
    ):
        if count < 1:
            raise ValidationError(f"VM pool of {instance_type} needs at least one instance, got {count}")
        self.sim = sim
        self.instance_type = instance_type
        self.count = count
        self.vcpus = vcpus
        self.config = config or VmConfig()
        self.slots_per_vm = max(1, vcpus // self.config.slot_vcpus)
        self.started_at = sim.now
        self.ready_at = sim.now + to_us(self.config.startup)
        self.stopped_at: Optional[int] = None
        self.links: List[LinkState] = []
        if link_spec is not None:
            self.links = [link_spec.new_link(self.ready_at, name=f"{instance_type}-{index}") for index in range(count)]
        self._slots = simpy.Store(sim.env)
        for slot in range(self.slots_per_vm):
            for vm in range(count):
                self._slots.put((vm, slot))
        self.tasks = 0

    @property
    def total_slots(self) -> int:
        return self.count * self.slots_per_vm

    def link_for(self, slot) -> Optional[LinkState]:
        return self.links[slot[0]] if self.links else None

    def acquire(self):
        """Simulation process yielding a ``(vm, slot)`` pair once one is free."""
        if self.sim.now < self.ready_at:
            yield self.sim.until(self.ready_at)
        slot = yield self._slots.get()
        self.tasks += 1
        return slot

    def release(self, slot) -> None:
        self._slots.put(slot)

    def shutdown(self) -> int:
        self.stopped_at = self.sim.now
        return self.stopped_at

    @property
    def billed_seconds(self) -> float:
        end = self.stopped_at if self.stopped_at is not None else self.sim.now
        return to_s(end - self.started_at)


def provision_pool(
    sim: Simulation,
    instance_type: str,
    count: int,
    catalog: PriceCatalog,
    config: Optional[VmConfig] = None,
    link_spec: Optional[LinkSpec] = None,
) -> VmPool:
    vcpus = catalog.vm_price(instance_type).vcpus
    pool = VmPool(sim, instance_type, count, vcpus, config, link_spec)
    logger.debug("provisioned %d x %s (%d slots)", count, instance_type, pool.total_slots)
    return pool


def run_task(pool: VmPool, seconds: float):
    """Simulation process: occupy one slot for ``seconds``; returns completion time."""
    slot = yield pool.sim.process(pool.acquire())
    yield pool.sim.sleep(seconds)
    pool.release(slot)
    return pool.sim.now


BillingTarget = Union[InvocationRecord, Iterable[InvocationRecord], VmPool]


def billing_meter(target: BillingTarget, catalog: PriceCatalog, reserved: bool = False) -> CostReport:
    """Bill a finished invocation, a collection of them, or a VM pool."""
    if isinstance(target, VmPool):
        return vm_cost(target.instance_type, target.billed_seconds, catalog, target.count, reserved)
    records = [target] if isinstance(target, InvocationRecord) else list(target)
    report = CostReport()
    by_memory: Dict[int, List[InvocationRecord]] = {}
    for record in records:
        by_memory.setdefault(record.memory_mib, []).append(record)
    for memory, group in sorted(by_memory.items()):
        report = report.merge(faas_cost(memory, sum(r.billed_ms for r in group), len(group), catalog))
    return report


def load_platform_calibration(directory: Optional[Path] = None) -> PlatformCalibration:
    data = calibration_file("platform.toml", directory)
    raw = data.get("faas", {})
    cold = raw.get("cold_start", {})
    cold_start = ColdStartModel(
        platform_overhead=cold.get("platform_overhead_s", 0.125),
        download_bandwidth=cold.get("download_mib_s", 50) * MiB,
        init_time=cold.get("init_s", 0.1),
    )
    idle = raw.get("idle_lifetime_s", 600.0)
    faas = PlatformConfig(
        burst_limit=raw.get("burst_limit", 3000),
        scale_rate_per_min=raw.get("scale_rate_per_min", 500),
        account_quota=raw.get("account_quota", 10000),
        idle_lifetime=math.inf if idle in ("inf", -1) else float(idle),
        warm_start=raw.get("warm_start_s", 0.005),
        async_poll=raw.get("async_poll_s", 0.05),
        invoke_api=raw.get("invoke_api_s", 0.02),
        reclaim_interval=raw.get("reclaim_interval_s", 60.0),
    )
    raw_vm = data.get("vm", {})
    vm = VmConfig(
        startup=raw_vm.get("startup_s", 45.0),
        slot_vcpus=raw_vm.get("slot_vcpus", 4),
        link=raw_vm.get("link", "c6g.xlarge"),
    )
    worker_raw = data.get("worker", {})
    worker = FunctionSpec(
        "query-worker",
        memory_mib=worker_raw.get("memory_mib", 7076),
        binary_mib=worker_raw.get("binary_mib", 30),
        cold_start=cold_start,
    )
    return PlatformCalibration(faas, cold_start, vm, worker, worker_raw, data.get("engine", {}))
