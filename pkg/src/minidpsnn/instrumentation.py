"""Phase timing, traffic statistics, event accounting and energy figures."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .dynamics import ExternalStimulus
from . import rng

PHASES = ("computation", "memory_management", "communication", "synchronization")


class InstrumentationError(ValueError):
    pass


class PhaseTimer:
    """Charges consecutive wall-time slices to named phases.

    ``start()`` opens the measured window, every ``lap(phase)`` charges the
    time since the previous mark to ``phase`` and ``stop()`` closes the
    window.  Whatever is not lapped ends up in the residual.
    """

    __slots__ = ("seconds", "total", "_t0", "_last", "_clock")

    def __init__(self, clock=time.perf_counter):
        self.seconds = dict.fromkeys(PHASES, 0.0)
        self.total = 0.0
        self._clock = clock
        self._t0 = self._last = None

    def start(self) -> None:
        self._t0 = self._last = self._clock()

    def lap(self, phase: str) -> None:
        now = self._clock()
        self.seconds[phase] += now - self._last
        self._last = now

    def stop(self) -> None:
        self.total += self._clock() - self._t0


@dataclass
class PhaseTimes:
    seconds: dict[str, float]
    total: float

    @classmethod
    def from_timer(cls, timer: PhaseTimer) -> "PhaseTimes":
        return cls(dict(timer.seconds), timer.total)


@dataclass
class PhaseBreakdown:
    per_rank: list[dict[str, float]]  # fractions, plus "residual" and "total_seconds"
    seconds: dict[str, float]  # pooled over ranks
    fractions: dict[str, float]
    residual: float

    def to_dict(self) -> dict:
        return asdict(self)


def _fractions(seconds: dict[str, float], total: float) -> tuple[dict[str, float], float]:
    if total <= 0:
        return dict.fromkeys(PHASES, 0.0), 1.0
    frac = {p: seconds[p] / total for p in PHASES}
    return frac, 1.0 - sum(frac.values())


def phase_report(timers: list[PhaseTimes]) -> PhaseBreakdown:
    """Per-rank and pooled phase fractions."""
    if not timers:
        raise InstrumentationError("no phase timers recorded")
    per_rank = []
    for t in timers:
        missing = [p for p in PHASES if p not in t.seconds]
        if missing:
            raise InstrumentationError(f"missing phase samples: {missing}")
        frac, res = _fractions(t.seconds, t.total)
        per_rank.append({**frac, "residual": res, "total_seconds": t.total})
    pooled = {p: sum(t.seconds[p] for t in timers) for p in PHASES}
    total = sum(t.total for t in timers)
    frac, res = _fractions(pooled, total)
    return PhaseBreakdown(per_rank, pooled, frac, res)


@dataclass
class TrafficStats:
    """Packet statistics; ``payload_bytes`` counts spike records, ``wire_bytes`` whole packets."""

    packets: int = 0
    wire_bytes: int = 0
    payload_bytes: int = 0
    max_packet_bytes: int = 0
    mean_packet_bytes: float = 0.0
    per_rank: dict[int, dict] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _summ(sizes: np.ndarray, header: int) -> dict:
    n = int(sizes.shape[0])
    wire = int(sizes.sum())
    return {
        "packets": n,
        "wire_bytes": wire,
        "payload_bytes": wire - header * n,
        "max_packet_bytes": int(sizes.max()) if n else 0,
        "mean_packet_bytes": wire / n if n else 0.0,
    }


def traffic_summary(packet_log: np.ndarray, header_bytes: int = 8) -> TrafficStats:
    """Aggregate a packet log with rows ``(step, src, dst, bytes)``.

    Per-endpoint stats are keyed by the sending endpoint.
    """
    log = np.asarray(packet_log, dtype=np.int64).reshape(-1, 4)
    sizes = log[:, 3]
    stats = TrafficStats(**_summ(sizes, header_bytes))
    for src in np.unique(log[:, 1]):
        stats.per_rank[int(src)] = _summ(sizes[log[:, 1] == src], header_bytes)
    return stats


def write_packet_log(packet_log: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "src", "dst", "bytes"])
        w.writerows(np.asarray(packet_log, dtype=np.int64).reshape(-1, 4).tolist())


def count_synaptic_events(raster_sources: np.ndarray, out_degree: np.ndarray, n_neurons: int,
                          stimulus: ExternalStimulus, n_steps: int, seed: int, dt_ms: float = 1.0) -> int:
    """Synaptic events of a finished run.

    Internal events are one per synapse of every emitted spike; external
    events are re-drawn from the counter generator for every neuron and step.
    """
    internal = int(np.asarray(out_degree, dtype=np.int64)[np.asarray(raster_sources, dtype=np.int64)].sum())
    return internal + external_event_total(n_neurons, stimulus, n_steps, seed, dt_ms)


def external_event_total(n_neurons: int, stimulus: ExternalStimulus, n_steps: int, seed: int,
                         dt_ms: float = 1.0) -> int:
    mean = stimulus.mean_events(dt_ms)
    if mean == 0.0 or n_neurons == 0:
        return 0
    cdf = rng.poisson_cdf_table(mean)
    ids = np.arange(n_neurons, dtype=np.int64)
    buf = np.empty(n_neurons, dtype=np.int64)
    s = np.uint64(seed)
    return int(sum(rng.poisson_counts(s, ids, t, cdf, buf) for t in range(n_steps)))


def synaptic_event_estimate(n_neurons: float, rate_hz: float, seconds: float, internal_synapses: float,
                            external_synapses: float, external_rate_hz: float) -> float:
    """Expected event count from mean rates: recurrent plus external drive."""
    return n_neurons * seconds * (rate_hz * internal_synapses + external_synapses * external_rate_hz)


@dataclass
class PowerSampleSeries:
    t: np.ndarray  # seconds
    p: np.ndarray  # watts

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64)
        self.p = np.asarray(self.p, dtype=np.float64)
        if self.t.shape != self.p.shape or self.t.ndim != 1:
            raise InstrumentationError("time and power arrays must be 1-D and equal length")
        if np.any(np.diff(self.t) <= 0):
            raise InstrumentationError("sample times must be strictly increasing")
        if np.any(self.p < 0):
            raise InstrumentationError("power samples must be non-negative")

    @classmethod
    def from_current(cls, t, current, voltage) -> "PowerSampleSeries":
        return cls(t, np.asarray(current, dtype=np.float64) * np.asarray(voltage, dtype=np.float64))

    @classmethod
    def constant(cls, watts: float, seconds: float) -> "PowerSampleSeries":
        return cls([0.0, seconds], [watts, watts])


def read_power_log(path) -> PowerSampleSeries:
    """Load a CSV power log with columns ``t,p`` or ``t,i,v``."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    if not rows:
        raise InstrumentationError(f"{path}: empty power log")
    header = [c.strip().lower() for c in rows[0]]
    try:
        float(header[0])
        body = rows
        header = ["t", "p"] if len(rows[0]) == 2 else ["t", "i", "v"]
    except ValueError:
        body = rows[1:]
    data = np.asarray([[float(x) for x in r] for r in body], dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 2:
        raise InstrumentationError(f"{path}: need at least two samples")
    if header[:2] == ["t", "p"] and data.shape[1] == 2:
        return PowerSampleSeries(data[:, 0], data[:, 1])
    if header[:3] == ["t", "i", "v"] and data.shape[1] == 3:
        return PowerSampleSeries.from_current(data[:, 0], data[:, 1], data[:, 2])
    raise InstrumentationError(f"{path}: unrecognised columns {header}")


def integrate_energy(series: PowerSampleSeries, t0: float | None = None, t1: float | None = None,
                     baseline_watts: float = 0.0) -> float:
    """Trapezoidal energy (J) over ``[t0, t1]``, interpolating at the edges."""
    t, p = series.t, series.p - baseline_watts
    if t.shape[0] < 2:
        raise InstrumentationError("need at least two power samples")
    t0 = t[0] if t0 is None else t0
    t1 = t[-1] if t1 is None else t1
    if t1 <= t0:
        raise InstrumentationError("t1 must be greater than t0")
    if t0 < t[0] or t1 > t[-1]:
        raise InstrumentationError(f"samples span [{t[0]}, {t[-1]}], not [{t0}, {t1}]")
    inner = (t > t0) & (t < t1)
    tt = np.concatenate(([t0], t[inner], [t1]))
    pp = np.concatenate(([np.interp(t0, t, p)], p[inner], [np.interp(t1, t, p)]))
    return float(np.sum(0.5 * (pp[1:] + pp[:-1]) * np.diff(tt)))


def per_event_energy(joules: float, events: int) -> float:
    """Microjoules per synaptic event."""
    if events <= 0:
        raise InstrumentationError("event count must be positive")
    return 1e6 * joules / events


@dataclass
class EnergyReport:
    wall_seconds: float
    joules: float
    mean_watts: float
    synaptic_events: int
    microjoules_per_event: float
    baseline_watts: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def energy_report(series: PowerSampleSeries, events: int, t0: float | None = None,
                  t1: float | None = None, baseline_watts: float = 0.0) -> EnergyReport:
    t0 = series.t[0] if t0 is None else t0
    t1 = series.t[-1] if t1 is None else t1
    joules = integrate_energy(series, t0, t1, baseline_watts)
    wall = float(t1 - t0)
    return EnergyReport(
        wall_seconds=wall,
        joules=joules,
        mean_watts=joules / wall,
        synaptic_events=int(events),
        microjoules_per_event=per_event_energy(joules, events) if events > 0 else math.nan,
        baseline_watts=baseline_watts,
    )
