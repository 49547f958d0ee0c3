"""Deterministic discrete-event kernel.

The clock is an integer count of microseconds. Events and processes run on a
``simpy.Environment`` whose time unit is one microsecond, so ordering is by
``(fire_at, insertion sequence)`` and nothing depends on wall-clock time.
Randomness comes from per-label Philox streams keyed by the root seed.
"""

import hashlib
import logging
from functools import partial
from typing import Any, Callable, Dict, Generator, Optional, Set

import numpy as np
import simpy

from skyrise_lab.errors import PastEvent
from skyrise_lab.tracelog import SimTraceLogger
from skyrise_lab.units import to_s, to_us

logger = logging.getLogger(__name__)


def _stream_key(seed: int, label: str) -> int:
    digest = hashlib.blake2b(f"{seed}:{label}".encode("utf-8"), digest_size=16).digest()
    return int.from_bytes(digest, "little")


class RngStream:
    """Counter-based random stream derived from ``(seed, label)``.

    Attribute access is delegated to the underlying ``numpy`` generator, so
    ``stream.uniform(...)`` and friends work directly.
    """

    def __init__(self, seed: int, label: str):
        self.seed = seed
        self.label = label
        self.generator = np.random.Generator(np.random.Philox(key=_stream_key(seed, label)))

    @property
    def state(self) -> Dict[str, Any]:
        return self.generator.bit_generator.state

    def __getattr__(self, name: str) -> Any:
        return getattr(self.generator, name)


class Simulation:
    """One simulation instance: clock, event queue, process layer and RNG."""

    def __init__(self, seed: int = 42, time_scale: float = 1.0, echo: bool = False):
        if time_scale <= 0:
            raise ValueError("time_scale must be positive")
        self.env = simpy.Environment(initial_time=0)
        self.seed = seed
        self.time_scale = time_scale
        self.trace = SimTraceLogger(lambda: self.now, echo=echo)
        self._next_id = 0
        self._fired = 0
        self._cancelled: Set[int] = set()
        self._streams: Dict[str, RngStream] = {}

    @property
    def now(self) -> int:
        return int(self.env.now)

    @property
    def now_s(self) -> float:
        return to_s(self.now)

    # events

    def schedule(self, fire_at: int, action: Callable[[], None]) -> int:
        """Enqueue ``action`` to run at ``fire_at``; returns a stable event id."""
        if fire_at < self.now:
            raise PastEvent(fire_at, self.now)
        event_id = self._next_id
        self._next_id += 1
        timeout = self.env.timeout(fire_at - self.now)
        timeout.callbacks.append(partial(self._fire, event_id, action))
        return event_id

    def schedule_in(self, delay_s: float, action: Callable[[], None]) -> int:
        return self.schedule(self.now + to_us(delay_s), action)

    def cancel(self, event_id: int) -> None:
        self._cancelled.add(event_id)

    def _fire(self, event_id: int, action: Callable[[], None], _event: simpy.Event) -> None:
        if event_id in self._cancelled:
            self._cancelled.discard(event_id)
            return
        self._fired += 1
        action()

    def run_until(self, t_end: int) -> int:
        """Process everything due at or before ``t_end``; leaves the clock at ``t_end``."""
        if t_end < self.now:
            raise PastEvent(t_end, self.now)
        fired_before = self._fired
        while self.env.peek() <= t_end:
            self.env.step()
        if self.now < t_end:
            self.env.timeout(t_end - self.now)
            self.env.step()
        return self._fired - fired_before

    # processes

    def process(self, generator: Generator) -> simpy.Process:
        return self.env.process(generator)

    def sleep(self, seconds: float) -> simpy.Event:
        return self.env.timeout(max(0, to_us(seconds)))

    def sleep_us(self, micros: int) -> simpy.Event:
        return self.env.timeout(max(0, micros))

    def until(self, at_us: int) -> simpy.Event:
        return self.env.timeout(max(0, at_us - self.now))

    def event(self) -> simpy.Event:
        return self.env.event()

    def all_of(self, events: Any) -> simpy.Event:
        return simpy.AllOf(self.env, list(events))

    def any_of(self, events: Any) -> simpy.Event:
        return simpy.AnyOf(self.env, list(events))

    def run_process(self, generator: Generator) -> Any:
        """Run until ``generator`` finishes and return its value."""
        proc = self.env.process(generator)
        self.env.run(until=proc)
        return proc.value

    # randomness and scaling

    def rng_stream(self, label: str) -> RngStream:
        stream = self._streams.get(label)
        if stream is None:
            stream = RngStream(self.seed, label)
            self._streams[label] = stream
        return stream

    def scaled_us(self, seconds: float) -> int:
        """Long-horizon durations (idle cooling) compressed by ``time_scale``."""
        return to_us(seconds * self.time_scale)


def rng_stream(seed: int, label: str) -> RngStream:
    return RngStream(seed, label)
