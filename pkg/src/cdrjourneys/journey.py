"""Daily journeys: classify the segments between turning points, merge them
into activities and pull out trips.

Rule order for a segment (first match wins):

1. ``unknown``  if the covered path is longer than ``unknown_km``;
2. ``non_trip`` if the endpoint displacement is below ``d_min``, or the
   segment lasts more than ``non_trip_min`` minutes;
3. ``trip``     if it lasts at least ``trip_min_duration`` minutes;
4. ``unknown``  otherwise.

Merging collapses runs of equal kind, turns every short ``non_trip`` run
(``<= sandwich_max_min``) flanked by ``trip`` runs into ``trip`` (one pass,
no cascading), and collapses runs again.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import date
from typing import Iterator, Sequence

import numpy as np

from .geo import haversine_np
from .ingest import SECONDS_PER_DAY, AntennaRegistry, day_to_date, format_timestamp
from .timetable import (
    DEFAULT_EPSILON_M,
    DEFAULT_TIME_SCALE,
    TimetableBatch,
    TimetablePoint,
    build_timetables,
    simplify_batch,
)

TRIP, NON_TRIP, UNKNOWN = 0, 1, 2
KIND_NAMES = ("trip", "non_trip", "unknown")
KIND_CODES = {k: i for i, k in enumerate(KIND_NAMES)}


class ContractError(ValueError):
    """Input breaks a documented precondition."""


@dataclass(frozen=True)
class ClassifierConfig:
    unknown_km: float = 100.0
    non_trip_min: float = 180.0
    trip_min_duration: float = 15.0
    sandwich_max_min: float = 15.0


@dataclass(frozen=True)
class Segment:
    start: TimetablePoint
    end: TimetablePoint
    duration: float  # minutes
    displacement: float  # meters, chord between the endpoint antennas
    covered: float  # meters, end.d - start.d


def make_segment(start: TimetablePoint, end: TimetablePoint, registry: AntennaRegistry) -> Segment:
    (la, loa), (lb, lob) = registry.position(start.antenna_id), registry.position(end.antenna_id)
    return Segment(
        start,
        end,
        (end.timestamp - start.timestamp) / 60.0,
        float(haversine_np(la, loa, lb, lob)),
        end.d - start.d,
    )


def classify_arrays(covered, displacement, duration, d_min, limits: ClassifierConfig = ClassifierConfig()):
    covered = np.asarray(covered, dtype=np.float64)
    displacement = np.asarray(displacement, dtype=np.float64)
    duration = np.asarray(duration, dtype=np.float64)
    d_min = np.asarray(d_min, dtype=np.float64)
    unknown = covered > limits.unknown_km * 1000.0
    non_trip = ~unknown & ((displacement < d_min) | (duration > limits.non_trip_min))
    trip = ~unknown & ~non_trip & (duration >= limits.trip_min_duration)
    kind = np.full(covered.shape, UNKNOWN, dtype=np.int8)
    kind[non_trip] = NON_TRIP
    kind[trip] = TRIP
    return kind


def classify_segment(seg: Segment, d_min: float, limits: ClassifierConfig = ClassifierConfig()) -> str:
    if d_min < 0:
        raise ValueError(f"d_min must be non-negative, got {d_min}")
    return KIND_NAMES[int(classify_arrays(seg.covered, seg.displacement, seg.duration, d_min, limits))]


def merge_plan(group, kind, t_start, t_end, sandwich_max_min: float = 15.0):
    """Merged activities for CSR-ordered segments.

    ``group`` labels the trace of each segment (sorted), ``t_start``/``t_end``
    are in minutes.  Returns ``(first, last, kind)``: for every output
    activity the indices of its first and last input segment and its kind.
    """
    group = np.asarray(group)
    kind = np.asarray(kind, dtype=np.int8)
    t_start = np.asarray(t_start, dtype=np.float64)
    t_end = np.asarray(t_end, dtype=np.float64)
    n = kind.shape[0]
    if n == 0:
        e = np.zeros(0, dtype=np.int64)
        return e, e, np.zeros(0, dtype=np.int8)

    def runs(grp, k):
        new = np.ones(grp.shape[0], dtype=bool)
        new[1:] = (grp[1:] != grp[:-1]) | (k[1:] != k[:-1])
        first = np.flatnonzero(new)
        last = np.append(first[1:] - 1, grp.shape[0] - 1)
        return first, last

    first, last = runs(group, kind)
    rkind = kind[first].copy()
    rgroup = group[first]
    dur = t_end[last] - t_start[first]
    m = first.shape[0]
    if m >= 3:
        mid = np.arange(1, m - 1)
        hit = (
            (rkind[mid] == NON_TRIP)
            & (dur[mid] <= sandwich_max_min)
            & (rkind[mid - 1] == TRIP)
            & (rkind[mid + 1] == TRIP)
            & (rgroup[mid - 1] == rgroup[mid])
            & (rgroup[mid + 1] == rgroup[mid])
        )
        rkind[mid[hit]] = TRIP
    f2, l2 = runs(rgroup, rkind)
    return first[f2], last[l2], rkind[f2]


# --------------------------------------------------------------------------
# row objects
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Place:
    antenna_id: str
    lat: float
    lon: float
    zone_id: str
    municipality_id: str


def place_of(registry: AntennaRegistry, antenna_id: str) -> Place:
    r = registry[antenna_id]
    return Place(r.antenna_id, r.lat, r.lon, r.zone_id, r.municipality_id)


@dataclass(frozen=True)
class Activity:
    kind: str
    t_origin: int  # local seconds since epoch
    t_destination: int
    p_origin: Place
    p_destination: Place

    @property
    def duration(self) -> float:
        return (self.t_destination - self.t_origin) / 60.0

    @property
    def displacement(self) -> float:
        o, d = self.p_origin, self.p_destination
        return float(haversine_np(o.lat, o.lon, d.lat, d.lon))


@dataclass(frozen=True)
class DailyJourney:
    user_id: str
    day: date
    activities: tuple[Activity, ...]

    @property
    def excluded(self) -> bool:
        """True when the journey has neither trips nor non-trips."""
        return not any(a.kind in ("trip", "non_trip") for a in self.activities)

    def to_dict(self, tz_offset_minutes: int = 0) -> dict:
        return {
            "user_id": self.user_id,
            "day": self.day.isoformat(),
            "activities": [
                {
                    "kind": a.kind,
                    "t_o": format_timestamp(a.t_origin, tz_offset_minutes),
                    "t_d": format_timestamp(a.t_destination, tz_offset_minutes),
                    "antenna_o": a.p_origin.antenna_id,
                    "antenna_d": a.p_destination.antenna_id,
                    "zone_o": a.p_origin.zone_id,
                    "zone_d": a.p_destination.zone_id,
                    "mun_o": a.p_origin.municipality_id,
                    "mun_d": a.p_destination.municipality_id,
                }
                for a in self.activities
            ],
        }


def segment_activity(seg: Segment, kind: str, registry: AntennaRegistry) -> Activity:
    """A classified segment as a one-segment activity, ready for merging."""
    return Activity(kind, seg.start.timestamp, seg.end.timestamp,
                    place_of(registry, seg.start.antenna_id), place_of(registry, seg.end.antenna_id))


def merge_activities(items: Sequence[Activity], user_id: str = "", day: date | None = None,
                     sandwich_max_min: float = 15.0) -> DailyJourney:
    """Merge time-ordered, contiguous classified activities into a journey."""
    for a, b in zip(items, items[1:]):
        if a.t_destination != b.t_origin or a.p_destination.antenna_id != b.p_origin.antenna_id:
            raise ContractError(
                f"activities are not contiguous: {a.t_destination}/{a.p_destination.antenna_id} "
                f"then {b.t_origin}/{b.p_origin.antenna_id}"
            )
    for a in items:
        if a.kind not in KIND_CODES:
            raise ContractError(f"unknown activity kind {a.kind!r}")
    n = len(items)
    first, last, kind = merge_plan(
        np.zeros(n, dtype=np.int64),
        [KIND_CODES[a.kind] for a in items],
        [a.t_origin / 60.0 for a in items],
        [a.t_destination / 60.0 for a in items],
        sandwich_max_min,
    )
    acts = tuple(
        Activity(KIND_NAMES[k], items[f].t_origin, items[l].t_destination, items[f].p_origin, items[l].p_destination)
        for f, l, k in zip(first, last, kind)
    )
    if day is None and items:
        day = day_to_date(items[0].t_origin // SECONDS_PER_DAY)
    return DailyJourney(user_id, day, acts)


@dataclass(frozen=True)
class TripRecord:
    user_id: str
    day: date
    mun_o: str
    mun_d: str
    t_start: int  # local seconds since epoch
    duration: float  # minutes
    displacement: float  # meters


def extract_trips(j: DailyJourney) -> list[TripRecord]:
    return [
        TripRecord(j.user_id, j.day, a.p_origin.municipality_id, a.p_destination.municipality_id,
                   a.t_origin, a.duration, a.displacement)
        for a in j.activities
        if a.kind == "trip"
    ]


# --------------------------------------------------------------------------
# batch path
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class JourneyConfig:
    epsilon_m: float = DEFAULT_EPSILON_M
    time_scale: float = DEFAULT_TIME_SCALE
    limits: ClassifierConfig = ClassifierConfig()


class TripTable:
    """Trips of many journeys, column-wise (municipality codes index the registry labels)."""

    def __init__(self, registry, user_labels, user, day, mun_o, mun_d, t_start, duration, displacement):
        self.registry = registry
        self.user_labels = user_labels
        self.user = user
        self.day = day
        self.mun_o = mun_o
        self.mun_d = mun_d
        self.t_start = t_start
        self.duration = duration
        self.displacement = displacement

    def __len__(self) -> int:
        return self.user.shape[0]

    def __iter__(self) -> Iterator[TripRecord]:
        labels = self.registry.municipality_labels
        for i in range(len(self)):
            yield TripRecord(str(self.user_labels[self.user[i]]), day_to_date(self.day[i]),
                             labels[self.mun_o[i]], labels[self.mun_d[i]], int(self.t_start[i]),
                             float(self.duration[i]), float(self.displacement[i]))

    def take(self, idx) -> "TripTable":
        return TripTable(self.registry, self.user_labels, self.user[idx], self.day[idx], self.mun_o[idx],
                         self.mun_d[idx], self.t_start[idx], self.duration[idx], self.displacement[idx])

    def days(self) -> list[int]:
        return sorted(set(self.day.tolist()))


class JourneyBatch:
    """Merged activities of every trace; activity ``i`` spans timetable
    points ``start[i]`` to ``end[i]`` of ``timetables``."""

    def __init__(self, timetables: TimetableBatch, trace, kind, start, end):
        self.timetables = timetables
        self.trace = trace
        self.kind = kind
        self.start = start
        self.end = end
        n = len(timetables)
        counts = np.bincount(trace, minlength=n) if n else np.zeros(0, dtype=np.int64)
        self.offsets = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(counts, out=self.offsets[1:])

    @property
    def traces(self):
        return self.timetables.traces

    def __len__(self) -> int:
        return len(self.timetables)

    def excluded(self) -> np.ndarray:
        """Per trace: no trip and no non-trip activity."""
        useful = np.isin(self.kind, (TRIP, NON_TRIP))
        n = len(self)
        return np.bincount(self.trace[useful], minlength=n) == 0 if n else np.zeros(0, dtype=bool)

    def __getitem__(self, k: int) -> DailyJourney:
        reg = self.traces.registry
        ant = self.timetables.antenna
        ts = self.timetables.ts
        ids = reg.antenna_ids
        acts = []
        for i in range(self.offsets[k], self.offsets[k + 1]):
            s, e = self.start[i], self.end[i]
            acts.append(Activity(KIND_NAMES[self.kind[i]], int(ts[s]), int(ts[e]),
                                 place_of(reg, str(ids[ant[s]])), place_of(reg, str(ids[ant[e]]))))
        return DailyJourney(self.traces.user_id(k), self.traces.date(k), tuple(acts))

    def __iter__(self) -> Iterator[DailyJourney]:
        for k in range(len(self)):
            yield self[k]

    def trips(self) -> TripTable:
        reg = self.traces.registry
        sel = np.flatnonzero(self.kind == TRIP)
        s, e = self.start[sel], self.end[sel]
        ant = self.timetables.antenna
        ts = self.timetables.ts
        a_s, a_e = ant[s], ant[e]
        return TripTable(
            reg,
            self.traces.events.user_labels,
            self.traces.user[self.trace[sel]],
            self.traces.day[self.trace[sel]],
            reg.municipality[a_s],
            reg.municipality[a_e],
            ts[s],
            (ts[e] - ts[s]) / 60.0,
            haversine_np(reg.lat[a_s], reg.lon[a_s], reg.lat[a_e], reg.lon[a_e]),
        )

    def write_jsonl(self, path, tz_offset_minutes: int = 0) -> None:
        with open(path, "w") as f:
            for j in self:
                f.write(json.dumps(j.to_dict(tz_offset_minutes), separators=(",", ":")))
                f.write("\n")


def estimate_journeys(traces, zone_q: np.ndarray, config: JourneyConfig = JourneyConfig()) -> JourneyBatch:
    """Timetables, turning points, classification and merging for every trace.

    ``zone_q`` is the per-zone minimum-trip-distance array aligned with the
    registry's zone codes.
    """
    reg = traces.registry
    tt = build_timetables(traces)
    pts, poff = simplify_batch(tt, config.epsilon_m, config.time_scale)
    # a segment joins consecutive turning points of the same trace
    n_pts = np.diff(poff)
    seg_trace = np.repeat(np.arange(len(tt), dtype=np.int64), np.maximum(n_pts - 1, 0))
    is_last = np.zeros(pts.shape[0], dtype=bool)
    is_last[poff[1:][n_pts > 0] - 1] = True
    s = pts[~is_last]
    e = pts[np.flatnonzero(~is_last) + 1]
    ant = tt.antenna
    a_s, a_e = ant[s], ant[e]
    ts = tt.ts
    duration = (ts[e] - ts[s]) / 60.0
    displacement = haversine_np(reg.lat[a_s], reg.lon[a_s], reg.lat[a_e], reg.lon[a_e])
    covered = tt.d[e] - tt.d[s]
    d_min = np.maximum(zone_q[reg.zone[a_s]], zone_q[reg.zone[a_e]])
    kind = classify_arrays(covered, displacement, duration, d_min, config.limits)
    first, last, mkind = merge_plan(seg_trace, kind, ts[s] / 60.0, ts[e] / 60.0, config.limits.sandwich_max_min)
    return JourneyBatch(tt, seg_trace[first], mkind, s[first], e[last])
