"""Adapter from the public Google clusterdata-2011 layout to the native schema.

machine_events (headerless):
    col 0 time, 1 machine_id, 2 event_type (0=ADD, 1=REMOVE, 2=UPDATE),
    3 platform_id, 4-5 capacities. Times are already microseconds; only
    the first three columns are carried over.

task_usage (headerless), columns used (0-based):
    0 start, 1 end, 4 machine_id,
    5 mean cpu, 6 canonical memory, 9 total page cache, 10 max memory,
    11 mean disk i/o time, 12 mean local disk space, 13 max cpu,
    14 max disk i/o time, 16 memory accesses per instruction.

Per machine and 5-minute bin, co-resident task usage is SUMMED (weighted
by each task record's overlap with the bin) and clamped to 1. Peaks are
the clamped sum of task maxima, an upper bound on the true machine peak.
Resources with no max column (disk space, page cache, mai) reuse the
mean. Empty numeric fields count as zero, as in the published trace.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ParseError
from .ingestion import MACHINE_EVENTS_HEADER, USAGE_HEADER
from .trace_model import INTERVAL_US, N_RESOURCES

# (mean column, max column) per native resource index
_USAGE_COLUMNS = [
    (5, 13),   # cpu
    (11, 14),  # disk i/o time
    (12, 12),  # disk space
    (6, 10),   # memory
    (9, 9),    # page cache
    (16, 16),  # memory accesses per instruction
]
_MAX_USAGE_COLUMN = max(max(c) for c in _USAGE_COLUMNS)


@dataclass
class AdaptStats:
    events_converted: int = 0
    events_skipped: int = 0
    usage_rows_read: int = 0
    usage_bins_written: int = 0
    values_clamped: int = 0


def _f(field: str) -> float:
    return float(field) if field else 0.0


def convert_machine_events(source: Iterable[str], out, stats: AdaptStats) -> None:
    out.write(MACHINE_EVENTS_HEADER + "\n")
    for line_no, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) < 3:
            raise ParseError(line_no, f"expected >= 3 columns, got {len(parts)}")
        if not parts[0] or not parts[1] or not parts[2]:
            stats.events_skipped += 1
            continue
        try:
            time_us, machine_id, code = int(parts[0]), int(parts[1]), int(parts[2])
        except ValueError as exc:
            raise ParseError(line_no, f"non-integer field: {exc}") from None
        if code not in (0, 1, 2):
            stats.events_skipped += 1
            continue
        out.write(f"{time_us},{machine_id},{code}\n")
        stats.events_converted += 1


def convert_task_usage(
    source: Iterable[str],
    out,
    stats: AdaptStats,
    interval_us: int = INTERVAL_US,
) -> None:
    """Sum co-resident task usage into native per-machine 5-minute rows."""
    acc_mean: dict[tuple[int, int], np.ndarray] = {}
    acc_peak: dict[tuple[int, int], np.ndarray] = {}
    for line_no, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) <= _MAX_USAGE_COLUMN:
            raise ParseError(
                line_no, f"expected > {_MAX_USAGE_COLUMN} columns, got {len(parts)}"
            )
        try:
            start = int(parts[0])
            end = int(parts[1])
            machine_id = int(parts[4])
            mean = np.array([_f(parts[c]) for c, _ in _USAGE_COLUMNS])
            peak = np.array([_f(parts[c]) for _, c in _USAGE_COLUMNS])
        except ValueError as exc:
            raise ParseError(line_no, f"non-numeric field: {exc}") from None
        if start >= end:
            continue
        stats.usage_rows_read += 1
        np.maximum(peak, mean, out=peak)
        for b in range(start // interval_us, (end - 1) // interval_us + 1):
            lo = max(start, b * interval_us)
            hi = min(end, (b + 1) * interval_us)
            frac = (hi - lo) / interval_us
            key = (machine_id, b)
            if key not in acc_mean:
                acc_mean[key] = np.zeros(N_RESOURCES)
                acc_peak[key] = np.zeros(N_RESOURCES)
            acc_mean[key] += frac * mean
            acc_peak[key] += peak

    out.write(USAGE_HEADER + "\n")
    for machine_id, b in sorted(acc_mean):
        mean = acc_mean[(machine_id, b)]
        peak = acc_peak[(machine_id, b)]
        over = int(np.sum(mean > 1.0) + np.sum(peak > 1.0))
        stats.values_clamped += over
        mean = np.clip(mean, 0.0, 1.0)
        peak = np.clip(peak, 0.0, 1.0)
        np.maximum(peak, mean, out=peak)
        body = ",".join(f"{v:.6f}" for v in np.concatenate([mean, peak]))
        out.write(f"{b * interval_us},{(b + 1) * interval_us},{machine_id},{body}\n")
        stats.usage_bins_written += 1


def adapt(
    machine_events_path: Path,
    task_usage_path: Path,
    out_dir: Path,
    interval_us: int = INTERVAL_US,
) -> AdaptStats:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stats = AdaptStats()
    with open(machine_events_path) as src, open(
        out_dir / "machine_events.csv", "w", newline="\n"
    ) as dst:
        convert_machine_events(src, dst, stats)
    with open(task_usage_path) as src, open(
        out_dir / "resource_usage.csv", "w", newline="\n"
    ) as dst:
        convert_task_usage(src, dst, stats, interval_us)
    return stats
