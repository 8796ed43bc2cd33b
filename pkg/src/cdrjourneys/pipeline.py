"""End-to-end batch pipeline: ingest, entropy filter, journeys, OD matrices, stats.

Every artifact is written in a fixed order (traces by user then day, days
ascending, municipalities by label) so reruns are byte-identical whatever
the worker count.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import date, datetime
from typing import Sequence

import numpy as np

from . import filters, geo, odflow
from .config import PipelineConfig
from .timetable import build_timetables
from .ingest import (
    SECONDS_PER_DAY,
    AntennaRegistry,
    EventTable,
    IngestReport,
    TraceSet,
    date_to_day,
    day_to_date,
    group_user_days,
    load_registry,
    parse_cdr,
)
from .journey import (
    Activity,
    DailyJourney,
    JourneyBatch,
    JourneyConfig,
    Place,
    TripTable,
    estimate_journeys,
    place_of,
)

logger = logging.getLogger(__name__)


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


def ingest_files(paths: Sequence[str], registry: AntennaRegistry, config: PipelineConfig):
    tables, report = [], IngestReport()
    for p in paths:
        ev, rep = parse_cdr(p, registry, max_reject_fraction=config.max_reject_fraction,
                            tz_offset_minutes=config.tz_offset_minutes)
        tables.append(ev)
        report = report.merge(rep)
    if not tables:
        return EventTable.empty(registry, config.tz_offset_minutes), report
    return EventTable.concat(tables), report


def _journey_job(args):
    traces, zone_q, jcfg = args
    jb = estimate_journeys(traces, zone_q, jcfg)
    return jb.trace, jb.kind, jb.start, jb.end


def estimate_journeys_parallel(traces: TraceSet, zone_q: np.ndarray, jcfg: JourneyConfig,
                               workers: int = 1) -> JourneyBatch:
    """:func:`estimate_journeys` over trace chunks in worker processes.

    Traces are independent, so the stitched result equals the serial one.
    """
    if workers <= 1 or len(traces) < 2 * workers:
        return estimate_journeys(traces, zone_q, jcfg)
    bounds = np.linspace(0, len(traces), workers + 1).astype(np.int64)
    chunks = [traces.select(np.arange(a, b)) for a, b in zip(bounds[:-1], bounds[1:])]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_journey_job, [(c, zone_q, jcfg) for c in chunks]))
    tt = build_timetables(traces)
    tr, kd, st, en = [], [], [], []
    for a, (t, k, s, e) in zip(bounds[:-1], parts):
        ev0 = traces.offsets[a]
        tr.append(t + a)
        kd.append(k)
        st.append(s + ev0)
        en.append(e + ev0)
    return JourneyBatch(tt, np.concatenate(tr), np.concatenate(kd), np.concatenate(st), np.concatenate(en))


# --------------------------------------------------------------------------
# journeys file round trip
# --------------------------------------------------------------------------


def _parse_local(stamp: str) -> int:
    """Local wall-clock seconds from an ISO timestamp (its offset is the dataset's)."""
    dt = datetime.fromisoformat(stamp).replace(tzinfo=None)
    return int((dt - datetime(1970, 1, 1)).total_seconds())


def read_journeys_jsonl(path, registry: AntennaRegistry | None = None) -> list[DailyJourney]:
    """Load journeys written by the pipeline (or ground truth from ``synth``).

    Without a registry, places carry only the ids found in the file.
    """
    out = []
    with open(path) as f:
        for line in f:
            if not line.strip():
                continue
            d = json.loads(line)
            acts = []
            for a in d["activities"]:
                if registry is not None:
                    po, pd_ = place_of(registry, a["antenna_o"]), place_of(registry, a["antenna_d"])
                else:
                    po = Place(a["antenna_o"], float("nan"), float("nan"), a["zone_o"], a["mun_o"])
                    pd_ = Place(a["antenna_d"], float("nan"), float("nan"), a["zone_d"], a["mun_d"])
                acts.append(Activity(a["kind"], _parse_local(a["t_o"]), _parse_local(a["t_d"]), po, pd_))
            out.append(DailyJourney(d["user_id"], date.fromisoformat(d["day"]), tuple(acts)))
    return out


def trips_from_journeys(journeys: Sequence[DailyJourney], registry: AntennaRegistry) -> TripTable:
    """Column-wise trips of already merged journeys (codes follow ``registry``)."""
    mpos = {m: i for i, m in enumerate(registry.municipality_labels)}
    users = sorted({j.user_id for j in journeys})
    upos = {u: i for i, u in enumerate(users)}
    rows = [(upos[j.user_id], date_to_day(j.day), mpos[a.p_origin.municipality_id],
             mpos[a.p_destination.municipality_id], a.t_origin, a.duration, a.displacement)
            for j in journeys for a in j.activities if a.kind == "trip"]
    cols = list(zip(*rows)) if rows else [[]] * 7
    return TripTable(registry, np.array(users, dtype=object),
                     np.array(cols[0], dtype=np.int64), np.array(cols[1], dtype=np.int64),
                     np.array(cols[2], dtype=np.int64), np.array(cols[3], dtype=np.int64),
                     np.array(cols[4], dtype=np.int64), np.array(cols[5], dtype=np.float64),
                     np.array(cols[6], dtype=np.float64))


# --------------------------------------------------------------------------
# OD matrices and stats
# --------------------------------------------------------------------------


def daily_matrices(trips: TripTable, days: Sequence[int]) -> dict[int, odflow.ODMatrix]:
    labels = trips.registry.municipality_labels
    out = {}
    for d in days:
        sel = trips.day == d
        out[d] = odflow.build_od_codes(trips.mun_o[sel], trips.mun_d[sel], labels, day_to_date(d))
    return out


def write_od_outputs(trips: TripTable, days: Sequence[int], out_dir) -> dict[int, odflow.ODMatrix]:
    os.makedirs(out_dir, exist_ok=True)
    mats = daily_matrices(trips, days)
    for d, m in mats.items():
        m.to_csv(os.path.join(out_dir, f"od_{day_to_date(d).isoformat()}.csv"))
    if mats:
        odflow.average_matrices(list(mats.values())).to_csv(os.path.join(out_dir, "od_mean.csv"))
        odflow.l2_normalize_rows(odflow.average_matrices(list(mats.values()))).to_csv(
            os.path.join(out_dir, "od_mean_l2rows.csv"))
    return mats


def write_stats_outputs(trips: TripTable, days: Sequence[int], out_dir, events: EventTable | None = None,
                        n_users: dict[int, int] | None = None) -> list[dict]:
    """Per-day histogram/CDF files plus ``summary.csv`` of counts and means."""
    os.makedirs(out_dir, exist_ok=True)
    summary = []
    ev_day = events.ts // SECONDS_PER_DAY if events is not None else None
    for d in days:
        sel = trips.day == d
        ev = events.ts[ev_day == d] if events is not None else None
        st = odflow.trip_stats(trips.t_start[sel], trips.duration[sel], trips.displacement[sel], ev)
        odflow.write_trip_stats(st, out_dir, day_to_date(d).isoformat())
        summary.append({
            "day": day_to_date(d).isoformat(),
            "n_users": (n_users or {}).get(d, int(len(set(trips.user[sel].tolist())))),
            "n_trips": st.n_trips,
            "mean_duration_min": st.mean_duration_min,
            "mean_distance_km": st.mean_distance_km,
        })
    with open(os.path.join(out_dir, "summary.csv"), "w") as f:
        f.write("day,n_users,n_trips,mean_duration_min,mean_distance_km\n")
        for r in summary:
            f.write(f"{r['day']},{r['n_users']},{r['n_trips']},{r['mean_duration_min']!r},{r['mean_distance_km']!r}\n")
    return summary


def write_trips_csv(trips: TripTable, path) -> None:
    labels = trips.registry.municipality_labels
    with open(path, "w") as f:
        f.write("user_id,day,mun_o,mun_d,t_start,duration_min,displacement_m\n")
        for i in range(len(trips)):
            f.write(f"{trips.user_labels[trips.user[i]]},{day_to_date(trips.day[i]).isoformat()},"
                    f"{labels[trips.mun_o[i]]},{labels[trips.mun_d[i]]},{int(trips.t_start[i])},"
                    f"{float(trips.duration[i])!r},{float(trips.displacement[i])!r}\n")


# --------------------------------------------------------------------------
# full run
# --------------------------------------------------------------------------


@dataclass
class RunResult:
    ingest: IngestReport
    filter: filters.FilterResult | None
    journeys: JourneyBatch | None
    trips: TripTable | None
    days: list[int]
    artifacts: list[str] = field(default_factory=list)


def select_days(traces: TraceSet, days: Sequence[date]) -> TraceSet:
    if not days:
        return traces
    wanted = np.array([date_to_day(d) for d in days], dtype=np.int64)
    return traces.select(np.isin(traces.day, wanted))


def run_pipeline(config: PipelineConfig, cdr_paths: Sequence[str], registry_path: str, out_dir: str) -> RunResult:
    """Run every stage and write all artifacts into ``out_dir``.

    Raises :class:`StageError` naming the failing stage.
    """
    config.validate()
    try:
        registry = load_registry(registry_path)
    except FileNotFoundError as e:
        raise StageError("registry", str(e)) from e
    except ValueError as e:
        raise StageError("registry", str(e)) from e
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        raise StageError("output", str(e)) from e

    try:
        events, report = ingest_files(cdr_paths, registry, config)
    except OSError as e:
        raise StageError("ingest", str(e)) from e
    except ValueError as e:
        raise StageError("ingest", str(e)) from e
    artifacts = []

    def out(name):
        p = os.path.join(out_dir, name)
        artifacts.append(p)
        return p

    with open(out("ingest_report.json"), "w") as f:
        d = report.to_dict()
        d["sources"] = [os.path.basename(s) for s in d["sources"]]
        json.dump(d, f, indent=2, sort_keys=True)
        f.write("\n")
    if len(events) == 0:
        logger.warning("no CDR events accepted; writing empty artifacts")

    traces = select_days(group_user_days(events), config.days)
    days = sorted({date_to_day(d) for d in config.days}) if config.days else sorted(set(traces.day.tolist()))

    h = filters.trace_entropies(traces)
    filters.write_entropy_csv(traces, h, out("entropy.csv"))
    lo, hi = config.entropy_cuts
    fres = filters.entropy_cuts(h, config.entropy_mode, lo, hi)
    filters.write_filter_report(fres, out("filter_report.json"))
    kept = traces.select(fres.retained)

    stats = geo.zone_quantiles(registry, config.quantile, config.dmin_floor_m)
    geo.write_zone_stats(stats, out("zone_stats.csv"))
    zone_q = geo.zone_threshold_array(registry, stats)

    jb = estimate_journeys_parallel(kept, zone_q, config.journey, config.workers)
    jb.write_jsonl(out("journeys.jsonl"), config.tz_offset_minutes)
    trips = jb.trips()
    write_trips_csv(trips, out("trips.csv"))

    excluded = jb.excluded()
    users_per_day = {d: int(((kept.day == d) & ~excluded).sum()) for d in days}
    mats = write_od_outputs(trips, days, os.path.join(out_dir, "od"))
    artifacts += [os.path.join(out_dir, "od", f"od_{day_to_date(d).isoformat()}.csv") for d in mats]
    write_stats_outputs(trips, days, os.path.join(out_dir, "stats"), events=traces.events, n_users=users_per_day)

    with open(out("run_config.json"), "w") as f:
        # worker count does not affect results, so it stays out of the artifact
        json.dump({k: v for k, v in config.to_dict().items() if k != "workers"}, f, indent=2, sort_keys=True)
        f.write("\n")
    return RunResult(report, fres, jb, trips, days, artifacts)
