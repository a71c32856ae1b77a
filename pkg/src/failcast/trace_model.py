"""Core domain types for machine-level trace data.

Times are integer microseconds since trace start. Usage values are
fractions of each resource's maximum, so everything lives in [0, 1].
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

MICROS_PER_SECOND = 1_000_000
MICROS_PER_MINUTE = 60 * MICROS_PER_SECOND

#: Standard 5-minute reporting interval. Fixed at dataset-build time.
INTERVAL_US = 5 * MICROS_PER_MINUTE

N_RESOURCES = 6


class ResourceKind(enum.IntEnum):
    """The six tracked resource measurements; values are the feature-layout indices."""

    CPU_USAGE = 0
    DISK_IO_TIME = 1
    DISK_SPACE = 2
    MEMORY_USAGE = 3
    PAGE_CACHE = 4
    MEM_ACCESS_PER_INSTR = 5


class MachineEventKind(enum.IntEnum):
    """Machine state-change events; values match the CSV event codes."""

    ADD = 0
    REMOVE = 1
    UPDATE = 2


class FailureType(enum.IntEnum):
    """Per-interval machine state class. Integer labels are part of the data format."""

    NORMAL = 0
    IMMEDIATE_REBOOT = 1
    SLOW_REBOOT = 2
    FORCIBLE_DECOMMISSION = 3


@dataclass(frozen=True)
class MachineEvent:
    machine_id: int
    time_us: int
    kind: MachineEventKind


@dataclass(frozen=True)
class IntervalUsage:
    """Average and peak usage per resource over one reporting interval.

    Rejects values outside [0, 1] and any avg above its peak. Upstream
    clamping happens in ingestion; this type only validates.
    """

    machine_id: int
    interval: int
    avg: tuple[float, ...]
    peak: tuple[float, ...]

    def __post_init__(self):
        if len(self.avg) != N_RESOURCES or len(self.peak) != N_RESOURCES:
            raise ValueError(
                f"expected {N_RESOURCES} resources, got avg={len(self.avg)} peak={len(self.peak)}"
            )
        for r in range(N_RESOURCES):
            a, p = self.avg[r], self.peak[r]
            if not (0.0 <= a <= p <= 1.0):
                raise ValueError(
                    f"resource {r}: need 0 <= avg <= peak <= 1, got avg={a} peak={p}"
                )


@dataclass(frozen=True)
class FailureEvent:
    """A REMOVE paired with the next ADD of the same machine, categorized by downtime.

    ``add_us`` is absent exactly when the machine never returned before the
    end of the trace, which is also exactly the FORCIBLE_DECOMMISSION case.
    """

    machine_id: int
    remove_us: int
    add_us: Optional[int]
    ftype: FailureType

    def __post_init__(self):
        if self.ftype == FailureType.NORMAL:
            raise ValueError("a failure event cannot have type NORMAL")
        permanent = self.ftype == FailureType.FORCIBLE_DECOMMISSION
        if permanent and self.add_us is not None:
            raise ValueError("FORCIBLE_DECOMMISSION must not carry an add time")
        if not permanent and self.add_us is None:
            raise ValueError(f"{self.ftype.name} requires an add time")
        if self.add_us is not None and self.add_us < self.remove_us:
            raise ValueError("add time precedes remove time")

    @property
    def duration_us(self) -> Optional[int]:
        if self.add_us is None:
            return None
        return self.add_us - self.remove_us
