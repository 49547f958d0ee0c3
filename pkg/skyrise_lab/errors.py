"""Exception hierarchy of the lab.

Every failure the simulators, engine or harness can raise derives from
``SkyriseLabError`` so callers (the CLI in particular) can map them to exit
codes in one place.
"""

from typing import Any, List, Optional


class SkyriseLabError(Exception):
    """Base class of all lab errors"""
    pass


class ValidationError(SkyriseLabError):
    """Malformed configuration, calibration record or plan document"""
    pass


class IoError(SkyriseLabError):
    pass


# simcore

class PastEvent(SkyriseLabError):
    def __init__(self, fire_at: int, now: int):
        super().__init__(fire_at, now)
        self.fire_at = fire_at
        self.now = now

    def __str__(self) -> str:
        return f"event at {self.fire_at} us is before the clock ({self.now} us)"


# storesim

class ItemTooLarge(SkyriseLabError):
    def __init__(self, service: str, size: int, limit: int):
        super().__init__(service, size, limit)
        self.service = service
        self.size = size
        self.limit = limit

    def __str__(self) -> str:
        return f"{self.service}: item of {self.size} bytes exceeds the {self.limit} byte limit"


class Exhausted(SkyriseLabError):
    """Retrying client gave up; ``attempts`` holds the full attempt trace"""

    def __init__(self, key: str, attempts: List[Any]):
        super().__init__(key, attempts)
        self.key = key
        self.attempts = attempts

    def __str__(self) -> str:
        return f"gave up on '{self.key}' after {len(self.attempts)} attempts"


# faassim

class QuotaExceeded(SkyriseLabError):
    pass


# pricing

class MissingEntry(SkyriseLabError):
    pass


class NegativePrice(SkyriseLabError):
    pass


class UnknownService(SkyriseLabError):
    pass


# econ

class DivisionDomain(SkyriseLabError):
    pass


# dataform

class SchemaMismatch(SkyriseLabError):
    pass


class CorruptFooter(SkyriseLabError):
    pass


# engine

class MetaMissing(SkyriseLabError):
    pass


class PlanInvalid(SkyriseLabError):
    pass


class UnknownPipeline(PlanInvalid):
    pass


class ExecutionFailed(SkyriseLabError):
    pass


class StageFailed(ExecutionFailed):
    def __init__(self, pipeline_id: str, fragment: int, cause: Optional[BaseException] = None):
        super().__init__(pipeline_id, fragment, cause)
        self.pipeline_id = pipeline_id
        self.fragment = fragment
        self.cause = cause

    def __str__(self) -> str:
        detail = f": {self.cause}" if self.cause is not None else ""
        return f"pipeline '{self.pipeline_id}' fragment {self.fragment} failed after retries{detail}"


class StorageExhausted(ExecutionFailed):
    pass


# bench

class DriverFailure(SkyriseLabError):
    """Driver crashed; ``partial`` keeps the repetitions that did finish"""

    def __init__(self, message: str, partial: Any = None):
        super().__init__(message, partial)
        self.message = message
        self.partial = partial

    def __str__(self) -> str:
        return self.message


class EmptySeries(SkyriseLabError):
    pass
