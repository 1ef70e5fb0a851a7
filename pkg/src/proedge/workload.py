"""Composite synthetic workload: CPU demand, network congestion and
mobility-driven task arrivals merged into one replayable trace.

Trace text format (``write_trace`` / ``read_trace``)::

    # proedge-trace v1
    horizon,<int>,n_series,<int>,n_locations,<int>
    [series]
    t,cpu_0,...,cpu_{n_series-1},net
    <one row per timestep>
    [arrivals]
    arrival_time,location,work,data_size,sla_deadline
    <one row per task, sorted by arrival_time>

Floats are written with ``repr`` so a round trip is bit-exact.
"""
from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CompositionError, InvalidParameterError, TraceFormatError

TRACE_MAGIC = "# proedge-trace v1"


@dataclass
class TraceParams:
    """Shape of the CPU-demand trace (diurnal cycle, bursts, noise)."""

    horizon: int = 2000
    base_load: float = 0.35
    diurnal_amplitude: float = 0.25
    diurnal_period: int = 96
    burst_rate: float = 0.02
    burst_magnitude: float = 0.3
    noise_sigma: float = 0.04
    n_series: int = 4
    seed: int = 0

    def validate(self):
        if self.horizon < 1:
            raise InvalidParameterError(f"horizon must be >= 1, got {self.horizon}")
        for name in ("base_load", "diurnal_amplitude"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidParameterError(f"{name} must lie in [0, 1], got {v}")
        if self.burst_magnitude < 0 or self.burst_rate < 0:
            raise InvalidParameterError("burst_rate and burst_magnitude must be >= 0")
        if self.base_load + self.diurnal_amplitude + self.burst_magnitude > 1.5:
            raise InvalidParameterError(
                "base_load + diurnal_amplitude + burst_magnitude must be <= 1.5")
        if self.noise_sigma < 0:
            raise InvalidParameterError("noise_sigma must be >= 0")
        if self.diurnal_period < 1:
            raise InvalidParameterError("diurnal_period must be >= 1")
        if self.n_series < 1:
            raise InvalidParameterError("n_series must be >= 1")


@dataclass
class CongestionParams:
    mean_bg_traffic: float = 0.2
    spike_prob: float = 0.1
    spike_magnitude: float = 0.4
    seed: int = 0

    def validate(self):
        if not 0.0 <= self.mean_bg_traffic <= 1.0:
            raise InvalidParameterError("mean_bg_traffic must lie in [0, 1]")
        if not 0.0 <= self.spike_prob <= 1.0:
            raise InvalidParameterError("spike_prob must lie in [0, 1]")
        if self.spike_magnitude < 0:
            raise InvalidParameterError("spike_magnitude must be >= 0")


@dataclass
class MobilityParams:
    n_locations: int = 2
    mean_arrival_rate: float = 0.2
    location_drift_prob: float = 0.05
    task_size_range: tuple[float, float] = (1.0, 4.0)
    task_data_range: tuple[float, float] = (0.5, 2.0)
    sla_deadline_range: tuple[int, int] = (6, 14)
    seed: int = 0

    def validate(self):
        if self.n_locations < 1:
            raise InvalidParameterError("n_locations must be >= 1")
        if self.mean_arrival_rate < 0:
            raise InvalidParameterError("mean_arrival_rate must be >= 0")
        if not 0.0 <= self.location_drift_prob <= 1.0:
            raise InvalidParameterError("location_drift_prob must lie in [0, 1]")
        for name in ("task_size_range", "task_data_range", "sla_deadline_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise InvalidParameterError(f"{name}: min {lo} exceeds max {hi}")
        if self.task_size_range[0] <= 0:
            raise InvalidParameterError("task sizes must be > 0")
        if self.task_data_range[0] < 0:
            raise InvalidParameterError("task data sizes must be >= 0")
        if self.sla_deadline_range[0] <= 0:
            raise InvalidParameterError("SLA deadlines must be > 0")


@dataclass(frozen=True)
class TaskArrival:
    arrival_time: int
    location: int
    work: float
    data_size: float
    sla_deadline: int


@dataclass(eq=False)
class WorkloadTrace:
    """Per-timestep demand series plus the task arrivals they drive.

    ``cpu_series`` has shape ``(horizon, n_series)``; ``net_series`` has
    shape ``(horizon,)``.
    """

    cpu_series: np.ndarray
    net_series: np.ndarray
    arrivals: list[TaskArrival]
    horizon: int
    n_locations: int = 1
    _by_time: dict = field(default=None, init=False, repr=False, compare=False)

    @property
    def n_series(self) -> int:
        return self.cpu_series.shape[1]

    def arrivals_at(self, t: int) -> list[TaskArrival]:
        if self._by_time is None:
            index: dict[int, list[TaskArrival]] = {}
            for a in self.arrivals:
                index.setdefault(a.arrival_time, []).append(a)
            self._by_time = index
        return self._by_time.get(t, [])

    def channels(self) -> np.ndarray:
        """Exogenous load channels ``[cpu_0..cpu_{n-1}, net]``, shape (horizon, n+1)."""
        return np.column_stack([self.cpu_series, self.net_series])

    def digest(self) -> str:
        return hashlib.sha256(dumps_trace(self).encode()).hexdigest()


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), stream]))


def generate_cpu_trace(p: TraceParams) -> np.ndarray:
    """CPU demand per series: clip(base + sinusoid + Poisson bursts + noise, 0, 1).

    Series ``i`` is phase-shifted by ``i / n_series`` of a period so that
    nodes peak at different times. Returns shape ``(horizon, n_series)``.
    """
    p.validate()
    rng = _rng(p.seed, 0)
    t = np.arange(p.horizon, dtype=np.float64)[:, None]
    phase = 2.0 * np.pi * np.arange(p.n_series, dtype=np.float64)[None, :] / p.n_series
    signal = p.base_load + p.diurnal_amplitude * np.sin(2.0 * np.pi * t / p.diurnal_period + phase)
    shape = (p.horizon, p.n_series)
    if p.burst_rate > 0:
        signal = signal + rng.poisson(p.burst_rate, size=shape) * p.burst_magnitude
    if p.noise_sigma > 0:
        signal = signal + rng.normal(0.0, p.noise_sigma, size=shape)
    return np.clip(signal, 0.0, 1.0)


def generate_congestion(p: CongestionParams, horizon: int) -> np.ndarray:
    """Background traffic with Bernoulli spikes, clipped to [0, 1]."""
    p.validate()
    if horizon < 1:
        raise InvalidParameterError(f"horizon must be >= 1, got {horizon}")
    rng = _rng(p.seed, 1)
    spikes = rng.random(horizon) < p.spike_prob
    return np.clip(p.mean_bg_traffic + spikes * p.spike_magnitude, 0.0, 1.0)


def generate_arrivals(p: MobilityParams, horizon: int) -> list[TaskArrival]:
    """Poisson task arrivals from mobile sources.

    There is one source per location; every timestep each source moves to a
    neighbouring location with probability ``location_drift_prob`` (reflecting
    random walk) and then emits Poisson(mean_arrival_rate) tasks at its
    current location.
    """
    p.validate()
    if horizon < 1:
        raise InvalidParameterError(f"horizon must be >= 1, got {horizon}")
    rng = _rng(p.seed, 2)
    n = p.n_locations
    positions = np.arange(n)
    counts = rng.poisson(p.mean_arrival_rate, size=(horizon, n))
    moves = rng.random((horizon, n)) < p.location_drift_prob
    steps = np.where(rng.random((horizon, n)) < 0.5, -1, 1)
    total = int(counts.sum())
    work = rng.uniform(*p.task_size_range, size=total)
    data = rng.uniform(*p.task_data_range, size=total)
    lo, hi = p.sla_deadline_range
    deadlines = rng.integers(lo, hi + 1, size=total)

    arrivals = []
    k = 0
    for t in range(horizon):
        if n > 1:
            step = np.where(moves[t], steps[t], 0)
            positions = positions + step
            # reflect at the boundaries
            positions = np.where(positions < 0, 1, positions)
            positions = np.where(positions >= n, n - 2, positions)
        for src in range(n):
            for _ in range(counts[t, src]):
                arrivals.append(TaskArrival(t, int(positions[src]), float(work[k]),
                                            float(data[k]), int(deadlines[k])))
                k += 1
    return arrivals


def compose(cpu, net, arrivals, n_locations: int | None = None) -> WorkloadTrace:
    """Assemble the three components into a validated trace (no copying or mutation)."""
    cpu = np.asarray(cpu, dtype=np.float64)
    net = np.asarray(net, dtype=np.float64)
    if cpu.ndim == 1:
        cpu = cpu[:, None]
    if cpu.ndim != 2 or net.ndim != 1:
        raise CompositionError(f"bad series ranks: cpu {cpu.shape}, net {net.shape}")
    horizon = cpu.shape[0]
    if net.shape[0] != horizon:
        raise CompositionError(f"series length mismatch: cpu {horizon}, net {net.shape[0]}")
    if horizon < 1:
        raise CompositionError("empty series")
    for name, s in (("cpu", cpu), ("net", net)):
        if not np.all(np.isfinite(s)) or s.min() < 0.0 or s.max() > 1.0:
            raise CompositionError(f"{name} series values must lie in [0, 1]")
    arrivals = list(arrivals)
    if n_locations is None:
        n_locations = max((a.location for a in arrivals), default=0) + 1
    prev = 0
    for a in arrivals:
        if not 0 <= a.arrival_time < horizon:
            raise CompositionError(f"arrival at t={a.arrival_time} outside horizon {horizon}")
        if a.arrival_time < prev:
            raise CompositionError("arrivals are not sorted by arrival_time")
        prev = a.arrival_time
        if not 0 <= a.location < n_locations:
            raise CompositionError(f"arrival location {a.location} out of range")
        if a.work <= 0 or a.data_size < 0 or a.sla_deadline <= 0:
            raise CompositionError(f"invalid task {a}")
    return WorkloadTrace(cpu, net, arrivals, horizon, n_locations)


def generate_trace(cpu_p: TraceParams, net_p: CongestionParams, mob_p: MobilityParams) -> WorkloadTrace:
    """Full pipeline; all three generators share ``cpu_p.horizon``."""
    cpu = generate_cpu_trace(cpu_p)
    net = generate_congestion(net_p, cpu_p.horizon)
    arrivals = generate_arrivals(mob_p, cpu_p.horizon)
    return compose(cpu, net, arrivals, n_locations=mob_p.n_locations)


def dumps_trace(trace: WorkloadTrace) -> str:
    buf = io.StringIO()
    buf.write(TRACE_MAGIC + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["horizon", trace.horizon, "n_series", trace.n_series,
                "n_locations", trace.n_locations])
    buf.write("[series]\n")
    w.writerow(["t"] + [f"cpu_{i}" for i in range(trace.n_series)] + ["net"])
    for t in range(trace.horizon):
        w.writerow([t] + [repr(float(v)) for v in trace.cpu_series[t]]
                   + [repr(float(trace.net_series[t]))])
    buf.write("[arrivals]\n")
    w.writerow(["arrival_time", "location", "work", "data_size", "sla_deadline"])
    for a in trace.arrivals:
        w.writerow([a.arrival_time, a.location, repr(a.work), repr(a.data_size), a.sla_deadline])
    return buf.getvalue()


def loads_trace(text: str) -> WorkloadTrace:
    lines = text.splitlines()
    if not lines or lines[0].strip() != TRACE_MAGIC:
        raise TraceFormatError("missing trace header line")
    try:
        head = next(csv.reader([lines[1]]))
        meta = dict(zip(head[0::2], (int(v) for v in head[1::2])))
        horizon, n_series, n_locations = meta["horizon"], meta["n_series"], meta["n_locations"]
        if lines[2] != "[series]":
            raise TraceFormatError("expected [series] section on line 3")
        rows = list(csv.reader(lines[4:4 + horizon]))
        cpu = np.array([[float(v) for v in r[1:1 + n_series]] for r in rows], dtype=np.float64)
        net = np.array([float(r[1 + n_series]) for r in rows], dtype=np.float64)
        pos = 4 + horizon
        if lines[pos] != "[arrivals]":
            raise TraceFormatError(f"expected [arrivals] section on line {pos + 1}")
        arrivals = [TaskArrival(int(r[0]), int(r[1]), float(r[2]), float(r[3]), int(r[4]))
                    for r in csv.reader(lines[pos + 2:]) if r]
    except (KeyError, IndexError, ValueError) as exc:
        raise TraceFormatError(f"malformed trace: {exc}") from exc
    return compose(cpu.reshape(horizon, n_series), net, arrivals, n_locations=n_locations)


def write_trace(trace: WorkloadTrace, path) -> None:
    Path(path).write_text(dumps_trace(trace))


def read_trace(path) -> WorkloadTrace:
    return loads_trace(Path(path).read_text())
