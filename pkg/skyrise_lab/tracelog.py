"""In-memory trace of simulation events."""

import json
import logging
from collections import Counter
from typing import Any, Callable, Dict, List, Optional

from skyrise_lab.units import to_s

logger = logging.getLogger(__name__)


class SimTraceLogger:
    """Logger for detailed simulation event tracking.

    Entries carry the simulated timestamp of the owning clock, never wall
    time, so identical runs produce identical traces.
    """

    def __init__(self, clock: Callable[[], int], echo: bool = False):
        self.events: List[Dict[str, Any]] = []
        self._clock = clock
        self.echo = echo

    def log_event(
        self,
        kind: str,
        source: str,
        destination: str = "",
        data: Optional[Dict[str, Any]] = None,
    ) -> Dict[str, Any]:
        """Record one event; printed as well when ``echo`` is set"""
        payload = data or {}
        entry = {
            "t_us": self._clock(),
            "kind": kind,
            "source": source,
            "destination": destination,
            "data": payload,
        }
        self.events.append(entry)
        if self.echo:
            arrow = f" → {destination}" if destination else ""
            print(f"[{to_s(entry['t_us']):10.3f}s] {kind:<14} {source}{arrow}")
            if payload:
                print(f"    {json.dumps(payload, sort_keys=True, default=str)}")
        logger.debug("%s %s %s %s", entry["t_us"], kind, source, destination)
        return entry

    def events_of(self, kind: str) -> List[Dict[str, Any]]:
        return [event for event in self.events if event["kind"] == kind]

    def counts(self) -> Dict[str, int]:
        return dict(sorted(Counter(event["kind"] for event in self.events).items()))

    def to_records(self) -> List[Dict[str, Any]]:
        return [dict(event) for event in self.events]

    def print_summary(self) -> None:
        print("=" * 60)
        print("SIMULATION TRACE SUMMARY")
        print("=" * 60)
        print(f"Total events: {len(self.events)}")
        if self.events:
            span = self.events[-1]["t_us"] - self.events[0]["t_us"]
            print(f"Simulated span: {to_s(span):.3f}s")
        for kind, count in self.counts().items():
            print(f"  {kind:<20} {count:>8}")
