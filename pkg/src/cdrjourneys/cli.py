"""Command-line entry point (``cdrjourneys`` / ``python -m cdrjourneys``)."""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

from . import odflow, synthcity
from .config import ConfigError, load_config, parse_days
from .ingest import CorruptInputError, date_to_day, load_registry
from .pipeline import (
    StageError,
    ingest_files,
    read_journeys_jsonl,
    run_pipeline,
    trips_from_journeys,
    write_od_outputs,
    write_stats_outputs,
)

log = logging.getLogger("cdrjourneys")


def _pipeline_flags(p: argparse.ArgumentParser, cdr=True):
    p.add_argument("--config", help="key = value config file")
    if cdr:
        p.add_argument("--cdr", nargs="+", default=[], help="CDR CSV files")
    p.add_argument("--antennas", required=True, help="antenna registry CSV")
    p.add_argument("--days", help="comma-separated YYYY-MM-DD list")
    p.add_argument("--epsilon-m", type=float)
    p.add_argument("--time-scale", type=float)
    p.add_argument("--quantile", type=float)
    p.add_argument("--entropy-mode", choices=["fixed", "quantile"])
    p.add_argument("--workers", type=int)


def _config(args):
    return load_config(
        args.config,
        days=parse_days(args.days) if getattr(args, "days", None) else None,
        epsilon_m=getattr(args, "epsilon_m", None),
        time_scale=getattr(args, "time_scale", None),
        quantile=getattr(args, "quantile", None),
        entropy_mode=getattr(args, "entropy_mode", None),
        workers=getattr(args, "workers", None),
    )


def _dump(obj, as_json: bool):
    if as_json:
        print(json.dumps(obj, indent=2, sort_keys=True, default=_json_default))
    else:
        for k, v in obj.items():
            print(f"{k}: {v}")


def _json_default(o):
    if isinstance(o, float) and math.isnan(o):
        return None
    raise TypeError(type(o).__name__)


def cmd_ingest_check(args) -> int:
    cfg = _config(args)
    reg = load_registry(args.antennas)
    _, report = ingest_files(args.cdr, reg, cfg)
    d = report.to_dict()
    if args.json:
        print(json.dumps(d, indent=2, sort_keys=True))
    else:
        _dump(d, False)
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    res = run_pipeline(cfg, args.cdr, args.antennas, args.out)
    print(f"accepted {res.ingest.accepted} of {res.ingest.rows_total} rows; "
          f"{res.filter.n_retained} of {res.filter.n_total} user-days kept; "
          f"{len(res.trips)} trips over {len(res.days)} day(s) -> {args.out}")
    return 0


def cmd_journeys(args) -> int:
    return cmd_run(args)


def _load_trips(args):
    reg = load_registry(args.antennas)
    journeys = read_journeys_jsonl(args.journeys, reg)
    return reg, trips_from_journeys([j for j in journeys], reg)


def cmd_od(args) -> int:
    cfg = _config(args)
    _, trips = _load_trips(args)
    days = sorted(set(trips.day.tolist()))
    if cfg.days:
        days = [date_to_day(d) for d in cfg.days]
    write_od_outputs(trips, days, args.out)
    print(f"{len(trips)} trips, {len(days)} day(s) -> {args.out}")
    return 0


def cmd_stats(args) -> int:
    cfg = _config(args)
    reg, trips = _load_trips(args)
    events = ingest_files(args.cdr, reg, cfg)[0] if args.cdr else None
    days = sorted(set(trips.day.tolist()))
    summary = write_stats_outputs(trips, days, args.out, events=events)
    for r in summary:
        print(r)
    return 0


def cmd_compare(args) -> int:
    a = odflow.ODMatrix.from_csv(args.matrix_a)
    b = odflow.ODMatrix.from_csv(args.matrix_b)
    out = {}
    variants = [False] if args.no_diagonal else [True, False]
    for diag in variants:
        rc = odflow.spearman(a, b, include_diagonal=diag)
        key = "with_diagonal" if diag else "without_diagonal"
        out[key] = {"rho": rc.rho, "p_value": rc.p_value, "n": rc.n}
    if args.json:
        print(json.dumps(out, indent=2, sort_keys=True))
    else:
        for k, v in out.items():
            print(f"{k}: rho={v['rho']:.6f} p={v['p_value']:.3g} n={v['n']}")
    return 0


def cmd_synth(args) -> int:
    overrides = {}
    if args.synth_config:
        with open(args.synth_config) as f:
            overrides.update(json.load(f))
    for name in ("seed", "users", "jitter"):
        v = getattr(args, name)
        if v is not None:
            overrides[name] = v
    if args.days:
        overrides["days"] = [d.isoformat() for d in parse_days(args.days)]
    cfg = synthcity.SynthConfig.from_dict(overrides)
    reg, events, truth = synthcity.generate(cfg)
    paths = synthcity.write_outputs(args.out, reg, events, truth)
    print(f"{len(reg)} antennas, {cfg.users} users, {len(events)} events -> {args.out}")
    for k, p in paths.items():
        print(f"  {k}: {p}")
    return 0


def cmd_score(args) -> int:
    reg = load_registry(args.antennas)
    truth = read_journeys_jsonl(args.truth, reg)
    rec = read_journeys_jsonl(args.journeys, reg)
    # user-days the entropy filter dropped are not held against recall
    report = synthcity.score_recovery(truth, rec, labels=reg.municipality_labels,
                                      universe={(j.user_id, j.day) for j in rec})
    d = report.to_dict()
    if args.json:
        print(json.dumps(d, indent=2, sort_keys=True, default=_json_default))
    else:
        _dump(d, False)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cdrjourneys", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest-check", help="validate CDR files and print the ingest report")
    _pipeline_flags(s)
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_ingest_check)

    for name, func, helptext in (("run", cmd_run, "full pipeline"),
                                 ("journeys", cmd_journeys, "estimate daily journeys (writes all artifacts)")):
        s = sub.add_parser(name, help=helptext)
        _pipeline_flags(s)
        s.add_argument("--out", required=True)
        s.set_defaults(func=func)

    s = sub.add_parser("od", help="OD matrices from a journeys file")
    _pipeline_flags(s, cdr=False)
    s.add_argument("--journeys", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_od)

    s = sub.add_parser("stats", help="trip-variable distributions from a journeys file")
    _pipeline_flags(s)
    s.add_argument("--journeys", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("compare", help="Spearman comparison of two OD matrix CSVs")
    s.add_argument("matrix_a")
    s.add_argument("matrix_b")
    s.add_argument("--no-diagonal", action="store_true", help="only the off-diagonal comparison")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("synth", help="generate a synthetic city, CDR log and ground truth")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--users", type=int)
    s.add_argument("--jitter", type=float)
    s.add_argument("--days", help="comma-separated YYYY-MM-DD list")
    s.add_argument("--synth-config", help="JSON file of SynthConfig fields")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("score", help="score recovered journeys against synthetic ground truth")
    s.add_argument("--truth", required=True)
    s.add_argument("--journeys", required=True)
    s.add_argument("--antennas", required=True)
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_score)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as e:
        print(json.dumps({"error": str(e), "stage": e.stage}), file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        msg = str(e) if "not found" in str(e) else f"not found: {e.filename}"
        print(json.dumps({"error": msg, "stage": args.command}), file=sys.stderr)
        return 2
    except (ConfigError, CorruptInputError, odflow.LabelMismatch, ValueError, KeyError) as e:
        print(json.dumps({"error": str(e), "stage": args.command}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
