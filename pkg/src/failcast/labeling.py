"""Failure pairing, categorization, and per-interval label tracks.

A REMOVE opens a failure; the next ADD of the same machine closes it.
Downtime under 30 minutes is an immediate reboot, 30 minutes or more a
slow reboot, and a machine that never returns before the end of the
trace is a forcible decommission.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence, TextIO

import numpy as np

from .ingestion import MachineSeries
from .trace_model import (
    INTERVAL_US,
    MICROS_PER_MINUTE,
    FailureEvent,
    FailureType,
    MachineEvent,
    MachineEventKind,
)

logger = logging.getLogger(__name__)

FAILURES_HEADER = "machine_id,remove_us,add_us,duration_us,type"


@dataclass(frozen=True)
class LabelingConfig:
    ir_max_downtime_us: int = 30 * MICROS_PER_MINUTE
    degenerate_min_failures: int = 100
    trace_end_us: int = 0

    def __post_init__(self):
        if self.ir_max_downtime_us <= 0:
            raise ValueError("ir_max_downtime_us must be positive")


@dataclass
class PairingResult:
    failures: list[FailureEvent]
    dropped_removes: int


@dataclass
class LabelTrack:
    """Per-interval class labels and downtime flags for one machine.

    ``y[t]`` is non-normal only at the interval containing a REMOVE.
    ``downtime[t]`` marks intervals lying entirely inside a failure's
    remove-to-add window, strictly after the removal interval.
    """

    machine_id: int
    y: np.ndarray
    downtime: np.ndarray


def categorize(duration_us: Optional[int], cfg: LabelingConfig) -> FailureType:
    """Map a failure duration to its class; absent duration means never returned."""
    if duration_us is None:
        return FailureType.FORCIBLE_DECOMMISSION
    if duration_us < cfg.ir_max_downtime_us:
        return FailureType.IMMEDIATE_REBOOT
    return FailureType.SLOW_REBOOT


def pair_failures(
    events: Sequence[MachineEvent], cfg: LabelingConfig
) -> PairingResult:
    """Pair each REMOVE with the next ADD of the same machine.

    A second REMOVE arriving while one is already open is dropped and
    counted; a REMOVE never followed by an ADD closes as permanent.
    Events must be sorted by time within each machine, which is how the
    parser returns them.
    """
    failures: list[FailureEvent] = []
    dropped = 0
    open_remove: Optional[int] = None
    current_machine: Optional[int] = None

    def close_open(machine_id: int) -> None:
        nonlocal open_remove
        if open_remove is not None:
            failures.append(
                FailureEvent(
                    machine_id=machine_id,
                    remove_us=open_remove,
                    add_us=None,
                    ftype=FailureType.FORCIBLE_DECOMMISSION,
                )
            )
            open_remove = None

    for ev in events:
        if ev.machine_id != current_machine:
            if current_machine is not None:
                close_open(current_machine)
            current_machine = ev.machine_id
        if ev.kind == MachineEventKind.UPDATE:
            continue
        if ev.kind == MachineEventKind.REMOVE:
            if open_remove is None:
                open_remove = ev.time_us
            else:
                dropped += 1
        else:  # ADD
            if open_remove is not None:
                duration = ev.time_us - open_remove
                failures.append(
                    FailureEvent(
                        machine_id=ev.machine_id,
                        remove_us=open_remove,
                        add_us=ev.time_us,
                        ftype=categorize(duration, cfg),
                    )
                )
                open_remove = None
    if current_machine is not None:
        close_open(current_machine)
    if dropped:
        logger.warning("dropped %d REMOVE events with no intervening ADD", dropped)
    return PairingResult(failures=failures, dropped_removes=dropped)


def detect_degenerate_machines(
    series: Mapping[int, MachineSeries],
    failures: Iterable[FailureEvent],
    cfg: LabelingConfig,
) -> set[int]:
    """Machines failing more than the threshold with usage that is all zero.

    A machine with no usage series at all counts as all-zero. These look
    like bookkeeping artifacts rather than real hosts and are excluded
    from every later stage.
    """
    counts: dict[int, int] = {}
    for f in failures:
        counts[f.machine_id] = counts.get(f.machine_id, 0) + 1
    degenerate = set()
    for machine_id, count in counts.items():
        if count <= cfg.degenerate_min_failures:
            continue
        s = series.get(machine_id)
        if s is None:
            degenerate.add(machine_id)
            continue
        if not np.any(s.avg[s.present]) and not np.any(s.peak[s.present]):
            degenerate.add(machine_id)
    return degenerate


def build_label_tracks(
    failures: Iterable[FailureEvent],
    series: Mapping[int, MachineSeries],
    cfg: LabelingConfig,
    interval_us: int = INTERVAL_US,
) -> dict[int, LabelTrack]:
    """Assign the per-interval label and downtime flags for every machine.

    The label lands on the interval containing the remove time. Downtime
    flags cover intervals fully inside [remove, add], after the removal
    interval; for permanent failures they extend to the end of the trace.
    """
    tracks = {
        m: LabelTrack(
            machine_id=m,
            y=np.zeros(s.n_intervals, dtype=np.int8),
            downtime=np.zeros(s.n_intervals, dtype=bool),
        )
        for m, s in series.items()
    }
    for f in sorted(failures, key=lambda f: (f.machine_id, f.remove_us)):
        track = tracks.get(f.machine_id)
        if track is None:
            continue
        n = len(track.y)
        t_remove = f.remove_us // interval_us
        if t_remove >= n:
            continue
        track.y[t_remove] = int(f.ftype)
        if f.add_us is None:
            track.downtime[t_remove + 1 :] = True
        else:
            # flag bins whose whole span fits inside the downtime window
            last_full = f.add_us // interval_us - 1
            lo = t_remove + 1
            hi = min(last_full, n - 1)
            if hi >= lo:
                track.downtime[lo : hi + 1] = True
    return tracks


def write_failures_csv(failures: Iterable[FailureEvent], out: TextIO) -> None:
    """Write the optional failures export; add/duration are empty for permanent failures."""
    out.write(FAILURES_HEADER + "\n")
    for f in failures:
        add = "" if f.add_us is None else str(f.add_us)
        dur = "" if f.duration_us is None else str(f.duration_us)
        out.write(f"{f.machine_id},{f.remove_us},{add},{dur},{int(f.ftype)}\n")


def read_failures_csv(source: Iterable[str]) -> list[FailureEvent]:
    failures = []
    for i, raw in enumerate(source):
        line = raw.strip()
        if not line or i == 0:
            if i == 0 and line != FAILURES_HEADER:
                raise ValueError("unexpected failures header")
            continue
        machine_id, remove_us, add_us, _dur, ftype = line.split(",")
        failures.append(
            FailureEvent(
                machine_id=int(machine_id),
                remove_us=int(remove_us),
                add_us=int(add_us) if add_us else None,
                ftype=FailureType(int(ftype)),
            )
        )
    return failures
