"""Validation helpers for experiment configs, region profiles and CLI inputs.

Checks raise ``ValidationError`` with a message naming the offending entry;
they never repair their input.
"""

from typing import Any, Dict, List, Mapping, Optional

from skyrise_lab.dataform import SCHEMAS
from skyrise_lab.errors import ValidationError


class LabValidator:
    """Validator for the documents the lab reads from disk"""

    SYSTEMS = {"faas", "vm_pool", "storage", "engine"}
    DRIVERS = {"minimal", "network_io", "storage_io", "query"}
    DIRECTIONS = {"in", "out"}
    DEPLOYMENTS = {"faas", "vm"}

    # driver -> mode -> parameters the mode cannot run without
    DRIVER_MODES: Dict[str, Dict[str, List[str]]] = {
        "minimal": {"startup": [], "idle_gaps": ["idle_gaps_s"]},
        "network_io": {"trace": ["duration_s"], "scale_out": ["counts"]},
        "storage_io": {"requests": ["clients"], "ramp": [], "cooldown": []},
        "query": {"run": ["query"]},
    }
    DEFAULT_MODES = {"minimal": "startup", "network_io": "trace", "storage_io": "requests", "query": "run"}

    @classmethod
    def validate_experiment(cls, record: Mapping[str, Any]) -> None:
        """Validate the ``[experiment]`` table of a config"""
        if not isinstance(record, Mapping):
            raise ValidationError("[experiment] must be a table")
        name = record.get("name")
        if not isinstance(name, str) or not name:
            raise ValidationError("[experiment] requires a non-empty 'name'")
        system = record.get("system_under_test")
        if system not in cls.SYSTEMS:
            raise ValidationError(f"{name}: system_under_test must be one of {sorted(cls.SYSTEMS)}, got {system!r}")
        driver = record.get("driver")
        if driver not in cls.DRIVERS:
            raise ValidationError(f"{name}: driver must be one of {sorted(cls.DRIVERS)}, got {driver!r}")
        repetitions = record.get("repetitions", 1)
        if not isinstance(repetitions, int) or isinstance(repetitions, bool) or repetitions < 1:
            raise ValidationError(f"{name}: repetitions must be an integer >= 1, got {repetitions!r}")
        gap = record.get("warm_gap_s", 0.0)
        if not isinstance(gap, (int, float)) or gap < 0:
            raise ValidationError(f"{name}: warm_gap_s must be a non-negative number")
        seed = record.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise ValidationError(f"{name}: seed must be an integer")

    @classmethod
    def validate_parameters(cls, driver: str, parameters: Mapping[str, Any]) -> str:
        """Validate driver parameters; returns the resolved mode"""
        modes = cls.DRIVER_MODES[driver]
        mode = parameters.get("mode", cls.DEFAULT_MODES[driver])
        if mode not in modes:
            raise ValidationError(f"driver {driver}: mode must be one of {sorted(modes)}, got {mode!r}")
        missing = [key for key in modes[mode] if key not in parameters]
        if missing:
            raise ValidationError(f"driver {driver} mode {mode}: missing parameters {missing}")
        for key, value in parameters.items():
            if key.endswith(("_s", "_mib", "_kib", "_ms")) and isinstance(value, (int, float)) and value < 0:
                raise ValidationError(f"driver {driver}: parameter '{key}' must be non-negative")
        direction = parameters.get("direction")
        if direction is not None and direction not in cls.DIRECTIONS:
            raise ValidationError(f"driver {driver}: direction must be 'in' or 'out', got {direction!r}")
        deployment = parameters.get("deployment")
        if deployment is not None and deployment not in cls.DEPLOYMENTS:
            raise ValidationError(f"driver {driver}: deployment must be one of {sorted(cls.DEPLOYMENTS)}")
        counts = parameters.get("counts")
        if counts is not None and (not counts or any(not isinstance(n, int) or n < 1 for n in counts)):
            raise ValidationError(f"driver {driver}: counts must be a non-empty list of positive integers")
        gaps = parameters.get("idle_gaps_s")
        if gaps is not None and any(not isinstance(g, (int, float)) or g < 0 for g in gaps):
            raise ValidationError(f"driver {driver}: idle_gaps_s must list non-negative numbers")
        return mode

    @classmethod
    def validate_region(cls, name: str, record: Mapping[str, Any]) -> None:
        multiplier = record.get("latency_multiplier", 1.0)
        if not isinstance(multiplier, (int, float)) or multiplier <= 0:
            raise ValidationError(f"region '{name}': latency_multiplier must be positive")
        ceiling = record.get("concurrency_ceiling")
        if ceiling is not None and (not isinstance(ceiling, int) or ceiling < 1):
            raise ValidationError(f"region '{name}': concurrency_ceiling must be a positive integer")
        unknown = set(record) - {"latency_multiplier", "concurrency_ceiling"}
        if unknown:
            raise ValidationError(f"region '{name}': unknown keys {sorted(unknown)}")

    @staticmethod
    def validate_table_kind(kind: str) -> None:
        if kind not in SCHEMAS:
            raise ValidationError(f"unknown table '{kind}', expected one of {sorted(SCHEMAS)}")

    @staticmethod
    def validate_scale(scale: float) -> None:
        if not scale > 0:
            raise ValidationError(f"scale must be positive, got {scale}")

    @staticmethod
    def validate_target_iops(target: float, quota: Optional[float] = None) -> None:
        if not target > 0:
            raise ValidationError(f"target IOPS must be positive, got {target}")
        if quota is not None and target < quota:
            raise ValidationError(f"target {target:g} IOPS is below the single-partition quota {quota:g}")
