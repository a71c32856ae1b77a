"""Seeded synthetic trace generator with the structure of real cluster traces.

Reproduces the structural facts the pipeline depends on: power-law-like
per-machine failure counts, a failure-duration mixture with bumps near
16 minutes and 2 hours plus a never-returning mass, AR(1) resource usage
whose partial autocorrelation dies out within a handful of lags, a few
degenerate all-zero machines that fail constantly, and a pre-failure
usage ramp over the 30 minutes before each removal.

``signature_strength`` scales the ramp amplitude: 0 means failures are
statistically invisible (the null control), 1 means full-strength ramps
before every failure.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import GenerationError
from .ingestion import MACHINE_EVENTS_HEADER, USAGE_HEADER
from .trace_model import INTERVAL_US, MICROS_PER_SECOND, N_RESOURCES

TRUTH_HEADER = "machine_id,interval,y"

EVENTS_FILE = "machine_events.csv"
USAGE_FILE = "resource_usage.csv"
TRUTH_FILE = "truth_labels.csv"

#: resources carrying the pre-failure ramp (cpu, disk i/o, memory)
RAMP_RESOURCES = (0, 1, 3)

_LAGS = 6  # ramp length and the clean-window guarantee, in intervals


@dataclass(frozen=True)
class SynthConfig:
    machines: int = 500
    horizon_days: float = 7.0
    failure_exponent: float = 1.8
    failing_fraction: float = 0.4
    max_failures: int = 40
    duration_weights: tuple[float, float, float] = (5894.0, 2783.0, 94.0)
    ir_mode_s: float = 960.0
    sr_mode_s: float = 7200.0
    signature_strength: float = 0.9
    ramp_amplitude: float = 0.4
    ar_coefficients: tuple[float, ...] = (0.7, 0.6, 0.8, 0.7, 0.65, 0.6)
    baselines: tuple[float, ...] = (0.35, 0.25, 0.45, 0.40, 0.30, 0.20)
    ar_noise: float = 0.06
    peak_offset: float = 0.06
    degenerate_machines: int = 2
    degenerate_failures: int = 120
    rng_seed: int = 0

    def __post_init__(self):
        if self.machines < 1:
            raise ValueError("need at least one machine")
        if min(self.duration_weights) < 0 or sum(self.duration_weights) <= 0:
            raise ValueError("duration weights must be non-negative and sum > 0")
        if not 0.0 <= self.signature_strength <= 1.0:
            raise ValueError("signature_strength must be in [0, 1]")
        if len(self.ar_coefficients) != N_RESOURCES:
            raise ValueError("one AR coefficient per resource")
        if len(self.baselines) != N_RESOURCES:
            raise ValueError("one baseline per resource")

    @property
    def horizon_us(self) -> int:
        n = int(round(self.horizon_days * 86_400)) * MICROS_PER_SECOND // INTERVAL_US
        return n * INTERVAL_US

    @property
    def n_intervals(self) -> int:
        return self.horizon_us // INTERVAL_US


@dataclass(frozen=True)
class _Failure:
    machine_id: int
    remove_us: int
    add_us: int | None  # None = never returns before the horizon
    label: int


@dataclass
class SynthPaths:
    events: Path
    usage: Path
    truth: Path


def _power_law_counts(rng: np.random.Generator, n: int, cfg: SynthConfig) -> np.ndarray:
    ks = np.arange(1, cfg.max_failures + 1, dtype=float)
    pmf = ks ** (-cfg.failure_exponent)
    pmf /= pmf.sum()
    counts = np.zeros(n, dtype=np.int64)
    fails = rng.random(n) < cfg.failing_fraction
    counts[fails] = rng.choice(len(ks), size=int(fails.sum()), p=pmf) + 1
    return counts


def _draw_duration(rng: np.random.Generator, cfg: SynthConfig, allow_fd: bool) -> int | None:
    """Duration in us from the three-bump mixture, or None for never-returns."""
    w = np.array(cfg.duration_weights, dtype=float)
    if not allow_fd:
        w = w[:2]
    w = w / w.sum()
    comp = rng.choice(len(w), p=w)
    if comp == 2:
        return None
    if comp == 0:
        dur = rng.lognormal(np.log(cfg.ir_mode_s), 0.25)
        dur = min(max(dur, 60.0), 29.0 * 60.0)  # stay strictly under 30 min
    else:
        dur = rng.lognormal(np.log(cfg.sr_mode_s), 0.35)
        dur = min(max(dur, 31.0 * 60.0), 6.0 * 3600.0)  # stay at/above 30 min
    return int(dur * MICROS_PER_SECOND)


def _label_for(duration_us: int | None) -> int:
    if duration_us is None:
        return 3
    return 1 if duration_us < 30 * 60 * MICROS_PER_SECOND else 2


def _place_failures(
    rng: np.random.Generator, machine_id: int, k: int, cfg: SynthConfig
) -> list[_Failure]:
    """Sequential placement keeping >= 6 clean intervals before every removal."""
    I = INTERVAL_US
    horizon = cfg.horizon_us
    failures: list[_Failure] = []
    cursor = (_LAGS + 1) * I  # leave a full feature window before the first removal
    for i in range(k):
        remaining = horizon - cursor - I
        if remaining <= 0:
            break
        mean_gap = max(remaining / (k - i + 1) / 2.0, float(I))
        gap = min(rng.exponential(mean_gap), float(remaining - 1))
        remove = cursor + int(gap)
        duration = _draw_duration(rng, cfg, allow_fd=(i == k - 1))
        add = None if duration is None else remove + duration
        if add is not None and add >= horizon:
            add = None  # never seen returning inside the trace
        failures.append(
            _Failure(
                machine_id=machine_id,
                remove_us=remove,
                add_us=add,
                label=_label_for(None if add is None else add - remove),
            )
        )
        if add is None:
            break
        resume = -(-add // I) * I  # next full interval boundary
        cursor = resume + (_LAGS + 1) * I
    return failures


def _down_mask(failures: list[_Failure], n_intervals: int) -> np.ndarray:
    """True where the machine is not up for the interval's full span."""
    I = INTERVAL_US
    down = np.zeros(n_intervals, dtype=bool)
    for f in failures:
        first = f.remove_us // I
        if f.add_us is None:
            down[first:] = True
        else:
            last = (f.add_us - 1) // I
            down[first : min(last, n_intervals - 1) + 1] = True
    return down


def generate(cfg: SynthConfig, out_dir: Path) -> SynthPaths:
    """Write machine_events.csv, resource_usage.csv, and truth_labels.csv.

    Byte-identical for identical config and seed. Raises GenerationError
    when the horizon cannot host the requested failure structure.
    """
    T = cfg.n_intervals
    I = INTERVAL_US
    if T < _LAGS + 3:
        raise GenerationError(
            f"horizon of {T} intervals cannot host any failure with a feature window"
        )
    deg_cycle = 10 * 60 * MICROS_PER_SECOND  # 2 min down + 8 min up
    if cfg.degenerate_machines and (
        (_LAGS + 1) * I + cfg.degenerate_failures * deg_cycle >= cfg.horizon_us
    ):
        raise GenerationError(
            f"horizon too short for {cfg.degenerate_failures} degenerate failures"
        )

    if cfg.degenerate_machines >= cfg.machines:
        raise GenerationError("degenerate machines must be fewer than total machines")

    rng = np.random.default_rng(cfg.rng_seed)
    # the last machine ids are the degenerate ones; the total stays `machines`
    n_regular = cfg.machines - cfg.degenerate_machines
    degenerate_ids = list(range(n_regular, cfg.machines))

    # failure schedule, machine by machine in id order
    counts = _power_law_counts(rng, n_regular, cfg)
    failures: list[_Failure] = []
    for m in range(n_regular):
        if counts[m]:
            failures.extend(_place_failures(rng, m, int(counts[m]), cfg))
    for m in degenerate_ids:
        t = (_LAGS + 1) * I
        for _ in range(cfg.degenerate_failures):
            failures.append(
                _Failure(machine_id=m, remove_us=t, add_us=t + 2 * 60 * MICROS_PER_SECOND, label=1)
            )
            t += deg_cycle

    # AR(1) usage for every regular machine across the full horizon
    phi = np.array(cfg.ar_coefficients)
    base = np.array(cfg.baselines)
    sigma = cfg.ar_noise
    stat_sd = sigma / np.sqrt(1.0 - phi**2)
    avg = np.empty((n_regular, T, N_RESOURCES))
    state = base + stat_sd * rng.standard_normal((n_regular, N_RESOURCES))
    avg[:, 0] = state
    for t in range(1, T):
        state = base + phi * (state - base) + sigma * rng.standard_normal(
            (n_regular, N_RESOURCES)
        )
        avg[:, t] = state
    peak = avg + 0.02 + np.abs(rng.standard_normal(avg.shape)) * cfg.peak_offset

    # pre-failure ramps on the feature window
    amp = cfg.signature_strength * cfg.ramp_amplitude
    if amp > 0.0:
        for f in failures:
            if f.machine_id >= n_regular:
                continue
            tau = f.remove_us // I
            for lag in range(1, _LAGS + 1):
                t = tau - lag
                bump = amp * (_LAGS + 1 - lag) / _LAGS
                for r in RAMP_RESOURCES:
                    avg[f.machine_id, t, r] += bump
                    peak[f.machine_id, t, r] += bump

    np.clip(avg, 0.0, 1.0, out=avg)
    np.clip(peak, 0.0, 1.0, out=peak)
    np.maximum(peak, avg, out=peak)

    by_machine: dict[int, list[_Failure]] = {}
    for f in failures:
        by_machine.setdefault(f.machine_id, []).append(f)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = SynthPaths(
        events=out_dir / EVENTS_FILE,
        usage=out_dir / USAGE_FILE,
        truth=out_dir / TRUTH_FILE,
    )

    _write_events(paths.events, failures, cfg.machines, rng)
    _write_usage(paths.usage, avg, peak, by_machine, degenerate_ids, T)
    _write_truth(paths.truth, failures)
    return paths


def _write_events(
    path: Path, failures: list[_Failure], n_machines: int, rng: np.random.Generator
) -> None:
    rows: list[tuple[int, int, int]] = []
    for m in range(n_machines):
        rows.append((0, m, 0))  # machine joins at trace start
    for f in failures:
        rows.append((f.remove_us, f.machine_id, 1))
        if f.add_us is not None:
            rows.append((f.add_us, f.machine_id, 0))
    # sprinkle UPDATE events; parsers must carry them, pairing must ignore them
    for m in range(0, n_machines, 10):
        rows.append((int(rng.integers(1, INTERVAL_US)), m, 2))
    rows.sort()
    with open(path, "w", newline="\n") as f:
        f.write(MACHINE_EVENTS_HEADER + "\n")
        for time_us, machine_id, code in rows:
            f.write(f"{time_us},{machine_id},{code}\n")


def _write_usage(
    path: Path,
    avg: np.ndarray,
    peak: np.ndarray,
    by_machine: dict[int, list[_Failure]],
    degenerate_ids: list[int],
    T: int,
) -> None:
    I = INTERVAL_US
    starts = np.arange(T, dtype=float) * I
    fmt = ["%d", "%d", "%d"] + ["%.6f"] * (2 * N_RESOURCES)
    with open(path, "w", newline="\n") as f:
        f.write(USAGE_HEADER + "\n")
        for m in range(avg.shape[0]):
            up = ~_down_mask(by_machine.get(m, []), T)
            block = np.column_stack(
                [
                    starts[up],
                    starts[up] + I,
                    np.full(int(up.sum()), float(m)),
                    avg[m, up],
                    peak[m, up],
                ]
            )
            np.savetxt(f, block, fmt=fmt, delimiter=",", newline="\n")
        zeros = np.zeros((1, 2 * N_RESOURCES))
        for m in degenerate_ids:
            up = ~_down_mask(by_machine.get(m, []), T)
            n_up = int(up.sum())
            block = np.column_stack(
                [
                    starts[up],
                    starts[up] + I,
                    np.full(n_up, float(m)),
                    np.repeat(zeros, n_up, axis=0),
                ]
            )
            np.savetxt(f, block, fmt=fmt, delimiter=",", newline="\n")


def _write_truth(path: Path, failures: list[_Failure]) -> None:
    rows = sorted((f.machine_id, f.remove_us // INTERVAL_US, f.label) for f in failures)
    with open(path, "w", newline="\n") as f:
        f.write(TRUTH_HEADER + "\n")
        for machine_id, interval, label in rows:
            f.write(f"{machine_id},{interval},{label}\n")
