"""Byte and time units shared by every simulator module.

Simulated time is fixed-point: an ``int`` count of microseconds. Rates stay in
bytes per second as ``float``; conversions to the integer clock go through
``to_us``/``ceil_us`` only.
"""

import math

KiB = 1024
MiB = 1024 * KiB
GiB = 1024 * MiB
TiB = 1024 * GiB

KB = 1000
MB = 1000 * KB
GB = 1000 * MB

US_PER_S = 1_000_000
MINUTE = 60
HOUR = 60 * MINUTE
DAY = 24 * HOUR
MONTH_HOURS = 730


def to_us(seconds: float) -> int:
    """Round a duration in seconds to the microsecond clock."""
    return int(round(seconds * US_PER_S))


def ceil_us(seconds: float) -> int:
    """Round up to the next microsecond; transfers never finish early."""
    return int(math.ceil(seconds * US_PER_S - 1e-6))


def to_s(us: int) -> float:
    return us / US_PER_S


def ceil_ms(seconds: float) -> int:
    """Billing granularity of functions: whole milliseconds, at least one."""
    return max(1, int(math.ceil(seconds * 1000 - 1e-9)))


def gbps(value: float) -> float:
    """Gigabit per second to bytes per second."""
    return value * 1e9 / 8


def mib_per_s(value_bytes_per_s: float) -> float:
    return value_bytes_per_s / MiB
