"""Graphical timetables (elapsed time vs accumulated distance) and their
Ramer-Douglas-Peucker simplification.

RDP runs in a scaled plane where ``x = t * time_scale`` (meters) and ``y = d``
(meters), so a single ``epsilon`` in meters bounds the deviation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import date

import numpy as np

from . import _kernels
from .geo import haversine_np
from .ingest import SECONDS_PER_DAY, AntennaRegistry, EventTable, TraceSet, UserDayTrace

DEFAULT_EPSILON_M = 500.0
DEFAULT_TIME_SCALE = 100.0  # meters per minute


@dataclass(frozen=True)
class TimetablePoint:
    t: float  # minutes since local midnight
    d: float  # accumulated meters since the first event
    antenna_id: str
    timestamp: int  # local seconds since epoch


@dataclass(frozen=True)
class Timetable:
    user_id: str
    day: date
    points: tuple[TimetablePoint, ...]

    def events(self) -> tuple[tuple[int, str], ...]:
        """The ``(timestamp, antenna_id)`` sequence the timetable was built from."""
        return tuple((p.timestamp, p.antenna_id) for p in self.points)


class TimetableBatch:
    """Timetables for every trace of a :class:`TraceSet`, column-wise.

    Point ``i`` carries the sorted event ``src[i]`` of the trace set.
    """

    def __init__(self, traces: TraceSet, t, d, offsets, src):
        self.traces = traces
        self.t = t
        self.d = d
        self.offsets = offsets
        self.src = src

    @property
    def antenna(self) -> np.ndarray:
        return self.traces.events.antenna[self.src]

    @property
    def ts(self) -> np.ndarray:
        return self.traces.events.ts[self.src]

    def __len__(self) -> int:
        return self.offsets.shape[0] - 1

    def __getitem__(self, k: int) -> Timetable:
        lo, hi = self.offsets[k], self.offsets[k + 1]
        ids = self.traces.registry.antenna_ids
        ant, ts = self.antenna, self.ts
        pts = tuple(
            TimetablePoint(float(self.t[i]), float(self.d[i]), str(ids[ant[i]]), int(ts[i]))
            for i in range(lo, hi)
        )
        return Timetable(self.traces.user_id(k), self.traces.date(k), pts)


def build_timetables(traces: TraceSet) -> TimetableBatch:
    ev = traces.events
    reg = traces.registry
    n = len(ev)
    lat = reg.lat[ev.antenna]
    lon = reg.lon[ev.antenna]
    step = np.zeros(n)
    if n > 1:
        step[1:] = haversine_np(lat[:-1], lon[:-1], lat[1:], lon[1:])
    d = _kernels.segmented_cumsum(step, traces.offsets)
    day = ev.ts // SECONDS_PER_DAY
    t = (ev.ts - day * SECONDS_PER_DAY) / 60.0
    return TimetableBatch(traces, t, d, traces.offsets.copy(), np.arange(n, dtype=np.int64))


def _single_trace_set(trace: UserDayTrace, registry: AntennaRegistry) -> TraceSet:
    if not trace.events:
        raise ValueError("trace has no events")
    antenna = []
    for _, a in trace.events:
        if a not in registry:
            raise KeyError(f"antenna {a!r} not in registry")
        antenna.append(registry.index[a])
    ts = np.array([t for t, _ in trace.events], dtype=np.int64)
    n = len(antenna)
    table = EventTable(np.zeros(n, dtype=np.int64), [trace.user_id], antenna, ts,
                       np.zeros(n, dtype=np.int8), registry)
    return TraceSet(table, np.array([0, n], dtype=np.int64))


def build_timetable(trace: UserDayTrace, registry: AntennaRegistry) -> Timetable:
    """One point per event; ``d`` is the running sum of inter-antenna hops."""
    return build_timetables(_single_trace_set(trace, registry))[0]


def _collapse_mask(t, d, offsets) -> np.ndarray:
    """False for points repeating the previous point's (t, d) in the same trace."""
    n = t.shape[0]
    keep = np.ones(n, dtype=bool)
    if n > 1:
        keep[1:] = (t[1:] != t[:-1]) | (d[1:] != d[:-1])
    keep[offsets[:-1][offsets[:-1] < n]] = True
    return keep


def _check_params(epsilon, time_scale):
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if not time_scale > 0:
        raise ValueError(f"time_scale must be positive, got {time_scale}")


def _reoffset(keep, offsets):
    cum = np.zeros(keep.shape[0] + 1, dtype=np.int64)
    np.cumsum(keep, out=cum[1:])
    return cum[offsets]


def _compact(t, d, offsets):
    keep = _collapse_mask(t, d, offsets)
    return np.flatnonzero(keep), _reoffset(keep, offsets)


def simplify_batch(tt: TimetableBatch, epsilon: float = DEFAULT_EPSILON_M,
                   time_scale: float = DEFAULT_TIME_SCALE) -> tuple[np.ndarray, np.ndarray]:
    """Turning points of every timetable.

    Returns ``(points, offsets)``: indices into ``tt`` of retained points and
    CSR offsets per trace.
    """
    _check_params(epsilon, time_scale)
    idx, offsets = _compact(tt.t, tt.d, tt.offsets)
    keep = _kernels.rdp_mask(tt.t[idx] * time_scale, tt.d[idx], offsets, epsilon)
    return idx[keep], _reoffset(keep, offsets)


def _timetable_arrays(tt: Timetable):
    t = np.array([p.t for p in tt.points], dtype=np.float64)
    d = np.array([p.d for p in tt.points], dtype=np.float64)
    return t, d, np.array([0, len(tt.points)], dtype=np.int64)


def simplify_rdp(tt: Timetable, epsilon: float = DEFAULT_EPSILON_M,
                 time_scale: float = DEFAULT_TIME_SCALE) -> Timetable:
    """Keep the candidate turning points of one timetable.

    Consecutive points with identical ``(t, d)`` are first collapsed onto the
    earliest one.  Endpoints are always kept; output order and provenance are
    those of the input.
    """
    _check_params(epsilon, time_scale)
    if not tt.points:
        raise ValueError("timetable has no points")
    t, d, offsets = _timetable_arrays(tt)
    idx, coff = _compact(t, d, offsets)
    keep = _kernels.rdp_mask(t[idx] * time_scale, d[idx], coff, epsilon)
    return Timetable(tt.user_id, tt.day, tuple(tt.points[i] for i in idx[keep]))


@dataclass(frozen=True)
class RdpStep:
    """How one input point fared during simplification.

    ``chord`` is the pair of input indices of the chord the point was last
    measured against (``None`` for endpoints and collapsed duplicates).
    """

    index: int
    retained: bool
    collapsed: bool
    chord: tuple[int, int] | None
    deviation: float


def explain_rdp(tt: Timetable, epsilon: float = DEFAULT_EPSILON_M,
                time_scale: float = DEFAULT_TIME_SCALE) -> list[RdpStep]:
    _check_params(epsilon, time_scale)
    t, d, offsets = _timetable_arrays(tt)
    idx, coff = _compact(t, d, offsets)
    keep, lo, hi, dev = _kernels.rdp_record(t[idx] * time_scale, d[idx], coff, epsilon)
    steps = {}
    for j, i in enumerate(idx):
        chord = None if lo[j] < 0 else (int(idx[lo[j]]), int(idx[hi[j]]))
        steps[int(i)] = RdpStep(int(i), bool(keep[j]), False, chord, float(dev[j]))
    return [steps.get(i, RdpStep(i, False, True, None, float("nan"))) for i in range(len(tt.points))]


def write_timetable_debug(tt: Timetable, path, epsilon: float = DEFAULT_EPSILON_M,
                          time_scale: float = DEFAULT_TIME_SCALE) -> None:
    """CSV ``t_min,d_m,antenna_id,retained`` for plotting a timetable and its turning points."""
    steps = explain_rdp(tt, epsilon, time_scale)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["t_min", "d_m", "antenna_id", "retained"])
        for p, s in zip(tt.points, steps):
            w.writerow([repr(p.t), repr(p.d), p.antenna_id, int(s.retained)])
