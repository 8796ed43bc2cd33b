"""CDR log and antenna registry loading, validation and user-day grouping.

Events are held column-wise (numpy arrays) so multi-million row logs stay
cheap; the containers still behave as read-only sequences of :class:`CdrEvent`
and :class:`UserDayTrace` for row-level code and tests.

Timestamps are stored as integer seconds of local wall-clock time since
1970-01-01T00:00 (the dataset timezone offset is carried separately), so a
calendar day is simply ``ts // 86400``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from datetime import date, datetime, timedelta, timezone
from typing import BinaryIO, Iterator, Sequence, Union

import numpy as np
import pyarrow as pa
import pyarrow.compute as pc
import pyarrow.csv as pacsv

logger = logging.getLogger(__name__)

SECONDS_PER_DAY = 86_400
EPOCH = date(1970, 1, 1)

KINDS = ("call", "sms", "data")
CDR_COLUMNS = ("user_id", "antenna_id", "timestamp", "kind")
REGISTRY_COLUMNS = ("antenna_id", "lat", "lon", "zone_id", "municipality_id")
TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%S"

PathOrStream = Union[str, os.PathLike, BinaryIO]


class IngestError(ValueError):
    """Base class for input problems that abort a load."""


class CorruptInputError(IngestError):
    pass


class RegistryError(IngestError):
    pass


def day_to_date(day: int) -> date:
    return EPOCH + timedelta(days=int(day))


def date_to_day(d: date) -> int:
    return (d - EPOCH).days


def format_timestamp(ts: int, tz_offset_minutes: int = 0) -> str:
    """ISO-8601 with the dataset offset, e.g. ``2015-06-01T08:00:00-04:00``."""
    tz = timezone(timedelta(minutes=tz_offset_minutes))
    return (datetime(1970, 1, 1) + timedelta(seconds=int(ts))).replace(tzinfo=tz).isoformat()


# --------------------------------------------------------------------------
# antenna registry
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AntennaRecord:
    antenna_id: str
    lat: float
    lon: float
    zone_id: str
    municipality_id: str


class AntennaRegistry:
    """Read-only antenna table with integer codes for zones and municipalities.

    Municipality labels are the sorted unique municipality ids; that order is
    the row/column order of every OD matrix built from this registry.
    """

    def __init__(self, records: Sequence[AntennaRecord]):
        ids = [r.antenna_id for r in records]
        self.index: dict[str, int] = {}
        for i, a in enumerate(ids):
            if not a:
                raise RegistryError("empty antenna_id")
            if a in self.index:
                raise RegistryError(f"duplicate antenna_id {a!r}")
            self.index[a] = i
        zone_mun: dict[str, str] = {}
        for r in records:
            if not (-90.0 <= r.lat <= 90.0) or not (-180.0 <= r.lon <= 180.0):
                raise RegistryError(f"antenna {r.antenna_id!r} has invalid coordinates ({r.lat}, {r.lon})")
            prev = zone_mun.setdefault(r.zone_id, r.municipality_id)
            if prev != r.municipality_id:
                raise RegistryError(
                    f"zone {r.zone_id!r} maps to municipalities {prev!r} and {r.municipality_id!r}"
                )
        self.records = list(records)
        self.antenna_ids = np.array(ids, dtype=object)
        self.lat = np.array([r.lat for r in records], dtype=np.float64)
        self.lon = np.array([r.lon for r in records], dtype=np.float64)
        self.zone_labels = sorted(zone_mun)
        self.municipality_labels = sorted(set(zone_mun.values()))
        zpos = {z: i for i, z in enumerate(self.zone_labels)}
        mpos = {m: i for i, m in enumerate(self.municipality_labels)}
        self.zone = np.array([zpos[r.zone_id] for r in records], dtype=np.int64)
        self.municipality = np.array([mpos[r.municipality_id] for r in records], dtype=np.int64)
        self.zone_municipality = np.array([mpos[zone_mun[z]] for z in self.zone_labels], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, antenna_id: str) -> AntennaRecord:
        return self.records[self.index[antenna_id]]

    def __contains__(self, antenna_id: object) -> bool:
        return antenna_id in self.index

    def position(self, antenna_id: str) -> tuple[float, float]:
        i = self.index[antenna_id]
        return float(self.lat[i]), float(self.lon[i])

    def lookup(self, antenna_id: str) -> int:
        try:
            return self.index[antenna_id]
        except KeyError:
            raise KeyError(f"antenna {antenna_id!r} not in registry") from None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(REGISTRY_COLUMNS)
            for r in self.records:
                w.writerow([r.antenna_id, repr(r.lat), repr(r.lon), r.zone_id, r.municipality_id])


def load_registry(source: PathOrStream) -> AntennaRegistry:
    """Read ``antenna_id,lat,lon,zone_id,municipality_id`` (header optional)."""
    if isinstance(source, (str, os.PathLike)):
        if not os.path.exists(source):
            raise FileNotFoundError(f"registry not found: {source}")
        with open(source, "rb") as f:
            raw = f.read()
    else:
        raw = source.read()
    text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
    records = []
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or all(not c.strip() for c in row):
            continue
        row = [c.strip() for c in row]
        if lineno == 1 and tuple(row) == REGISTRY_COLUMNS:
            continue
        if len(row) != 5:
            raise RegistryError(f"line {lineno}: expected 5 columns, got {len(row)}")
        try:
            lat, lon = float(row[1]), float(row[2])
        except ValueError:
            raise RegistryError(f"line {lineno}: bad coordinates {row[1]!r}, {row[2]!r}") from None
        records.append(AntennaRecord(row[0], lat, lon, row[3], row[4]))
    return AntennaRegistry(records)


# --------------------------------------------------------------------------
# CDR events
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CdrEvent:
    user_id: str
    antenna_id: str
    timestamp: datetime
    kind: str


@dataclass
class IngestReport:
    rows_total: int = 0
    accepted: int = 0
    bad_timestamp: int = 0
    unknown_antenna: int = 0
    malformed_row: int = 0
    sources: list[str] = field(default_factory=list)

    @property
    def rejected(self) -> int:
        return self.bad_timestamp + self.unknown_antenna + self.malformed_row

    def merge(self, other: "IngestReport") -> "IngestReport":
        return IngestReport(
            self.rows_total + other.rows_total,
            self.accepted + other.accepted,
            self.bad_timestamp + other.bad_timestamp,
            self.unknown_antenna + other.unknown_antenna,
            self.malformed_row + other.malformed_row,
            self.sources + other.sources,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rejected"] = self.rejected
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


class EventTable:
    """Column store of accepted CDR events, in input order.

    ``user`` indexes into ``user_labels`` (sorted), ``antenna`` into the
    registry, ``kind`` into :data:`KINDS`.
    """

    def __init__(self, user, user_labels, antenna, ts, kind, registry, tz_offset_minutes=0):
        self.user = np.asarray(user, dtype=np.int64)
        self.user_labels = np.asarray(user_labels, dtype=object)
        self.antenna = np.asarray(antenna, dtype=np.int64)
        self.ts = np.asarray(ts, dtype=np.int64)
        self.kind = np.asarray(kind, dtype=np.int8)
        self.registry = registry
        self.tz_offset_minutes = tz_offset_minutes

    @classmethod
    def empty(cls, registry, tz_offset_minutes=0) -> "EventTable":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, [], z, z, z, registry, tz_offset_minutes)

    @classmethod
    def from_events(cls, events: Sequence[CdrEvent], registry: AntennaRegistry, tz_offset_minutes=0):
        """Build a table from row objects; naive timestamps are taken as local time."""
        labels = sorted({e.user_id for e in events})
        upos = {u: i for i, u in enumerate(labels)}
        ts = []
        for e in events:
            t = e.timestamp.replace(tzinfo=None) if e.timestamp.tzinfo is None else (
                e.timestamp.astimezone(timezone(timedelta(minutes=tz_offset_minutes))).replace(tzinfo=None)
            )
            ts.append(int((t - datetime(1970, 1, 1)).total_seconds()))
        return cls(
            [upos[e.user_id] for e in events],
            labels,
            [registry.lookup(e.antenna_id) for e in events],
            ts,
            [KINDS.index(e.kind) for e in events],
            registry,
            tz_offset_minutes,
        )

    @classmethod
    def concat(cls, tables: Sequence["EventTable"]) -> "EventTable":
        if not tables:
            raise ValueError("nothing to concatenate")
        labels = sorted(set().union(*(set(t.user_labels.tolist()) for t in tables)))
        upos = {u: i for i, u in enumerate(labels)}
        users = [np.array([upos[u] for u in t.user_labels], dtype=np.int64)[t.user] if len(t) else t.user
                 for t in tables]
        return cls(
            np.concatenate(users),
            labels,
            np.concatenate([t.antenna for t in tables]),
            np.concatenate([t.ts for t in tables]),
            np.concatenate([t.kind for t in tables]),
            tables[0].registry,
            tables[0].tz_offset_minutes,
        )

    def __len__(self) -> int:
        return self.ts.shape[0]

    def __getitem__(self, i: int) -> CdrEvent:
        tz = timezone(timedelta(minutes=self.tz_offset_minutes))
        when = (datetime(1970, 1, 1) + timedelta(seconds=int(self.ts[i]))).replace(tzinfo=tz)
        return CdrEvent(
            str(self.user_labels[self.user[i]]),
            str(self.registry.antenna_ids[self.antenna[i]]),
            when,
            KINDS[self.kind[i]],
        )

    def __iter__(self) -> Iterator[CdrEvent]:
        for i in range(len(self)):
            yield self[i]

    def take(self, idx) -> "EventTable":
        return EventTable(self.user[idx], self.user_labels, self.antenna[idx], self.ts[idx],
                          self.kind[idx], self.registry, self.tz_offset_minutes)

    def write_csv(self, path) -> None:
        """Write headered CDR CSV in the ingest format."""
        # dictionary columns keep string building proportional to distinct values
        uniq, inv = np.unique(self.ts, return_inverse=True)
        stamps = np.datetime_as_string(uniq.astype("datetime64[s]"), unit="s").astype(object)

        def col(codes, values):
            return pa.DictionaryArray.from_arrays(
                pa.array(np.asarray(codes, dtype=np.int32).ravel()),
                pa.array([str(v) for v in values], pa.string()),
            ).cast(pa.string())

        table = pa.table({
            "user_id": col(self.user, self.user_labels),
            "antenna_id": col(self.antenna, self.registry.antenna_ids),
            "timestamp": col(inv, stamps),
            "kind": col(self.kind, KINDS),
        })
        with open(path, "wb") as f:
            f.write((",".join(CDR_COLUMNS) + "\n").encode())
            pacsv.write_csv(table, f, pacsv.WriteOptions(include_header=False, quoting_style="none"))


def _read_bytes_head(source: PathOrStream):
    """Return (pyarrow input, first line) without loading large files twice."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as f:
            first = f.readline()
        return os.fspath(source), first
    data = source.read()
    if isinstance(data, str):
        data = data.encode("utf-8")
    first = data.split(b"\n", 1)[0]
    return pa.BufferReader(data), first


def _check_rejects(report: IngestReport, name: str, max_reject_fraction: float) -> None:
    if report.rows_total and report.rejected / report.rows_total > max_reject_fraction:
        raise CorruptInputError(
            f"{name}: {report.rejected} of {report.rows_total} rows rejected "
            f"(malformed={report.malformed_row}, bad_timestamp={report.bad_timestamp}, "
            f"unknown_antenna={report.unknown_antenna})"
        )
    if report.rejected:
        logger.warning("%s: rejected %d of %d rows", name, report.rejected, report.rows_total)


def _fields_round_trip(stamp, parsed, candidate: np.ndarray) -> np.ndarray:
    """False where strptime rolled an out-of-range field over (June 31, :60)."""
    arr = stamp.combine_chunks() if isinstance(stamp, pa.ChunkedArray) else stamp
    if not isinstance(arr, pa.StringArray):
        arr = arr.cast(pa.string())
    buf_off, buf_data = arr.buffers()[1:3]
    offsets = np.frombuffer(buf_off, dtype=np.int32)[arr.offset:arr.offset + len(arr)]
    data = np.frombuffer(buf_data, dtype=np.uint8)
    idx = np.flatnonzero(candidate)
    start = offsets[idx].astype(np.int64)

    def two(pos):
        return (data[start + pos].astype(np.int64) - 48) * 10 + (data[start + pos + 1] - 48)

    ts = parsed.combine_chunks() if isinstance(parsed, pa.ChunkedArray) else parsed
    sec = ts.cast(pa.int64()).to_numpy(zero_copy_only=False)[idx]
    dt = sec.astype("datetime64[s]")
    mday = (dt.astype("datetime64[D]") - dt.astype("datetime64[M]")).astype(np.int64) + 1
    good = (two(8) == mday) & (two(14) == sec // 60 % 60) & (two(17) == sec % 60)
    out = np.ones(len(candidate), dtype=bool)
    out[idx] = good
    return out


def parse_cdr(
    source: PathOrStream,
    registry: AntennaRegistry,
    *,
    max_reject_fraction: float = 0.5,
    tz_offset_minutes: int = 0,
) -> tuple[EventTable, IngestReport]:
    """Parse a CDR CSV (``user_id,antenna_id,timestamp,kind``; header optional).

    Rows are rejected, never repaired: a row with the wrong column count, an
    empty id or an unknown ``kind`` is malformed; then timestamps that do not
    match ``YYYY-MM-DDTHH:MM:SS`` are bad; then antennas missing from the
    registry are unknown.  Each rejected row is counted under its first reason.
    Raises :class:`CorruptInputError` when more than ``max_reject_fraction`` of
    the rows are rejected.
    """
    name = os.fspath(source) if isinstance(source, (str, os.PathLike)) else "<stream>"
    src, first = _read_bytes_head(source)
    header = first.strip().decode("utf-8", "replace").replace(" ", "").replace('"', "") == ",".join(CDR_COLUMNS)

    n_invalid = 0

    def on_invalid(row):
        nonlocal n_invalid
        n_invalid += 1
        return "skip"

    report = IngestReport(sources=[name])
    try:
        table = pacsv.read_csv(
            src,
            read_options=pacsv.ReadOptions(column_names=list(CDR_COLUMNS), skip_rows=1 if header else 0),
            parse_options=pacsv.ParseOptions(invalid_row_handler=on_invalid),
            convert_options=pacsv.ConvertOptions(
                column_types={c: pa.string() for c in CDR_COLUMNS},
                strings_can_be_null=False,
                quoted_strings_can_be_null=False,
            ),
        )
    except pa.ArrowInvalid as e:
        if "Empty CSV file" not in str(e):
            raise
        return EventTable.empty(registry, tz_offset_minutes), report
    report.malformed_row = n_invalid
    report.rows_total = table.num_rows + n_invalid
    if table.num_rows == 0:
        _check_rejects(report, name, max_reject_fraction)
        return EventTable.empty(registry, tz_offset_minutes), report

    user = pc.utf8_trim_whitespace(table["user_id"])
    antenna = pc.utf8_trim_whitespace(table["antenna_id"])
    stamp = pc.utf8_trim_whitespace(table["timestamp"])
    kind = pc.utf8_trim_whitespace(table["kind"])

    kind_code = pc.index_in(kind, value_set=pa.array(KINDS))
    ok_shape = pc.and_(
        pc.and_(pc.greater(pc.utf8_length(user), 0), pc.greater(pc.utf8_length(antenna), 0)),
        pc.is_valid(kind_code),
    )
    parsed = pc.strptime(stamp, format=TIMESTAMP_FORMAT, unit="s", error_is_null=True)
    ok_time = pc.and_(pc.is_valid(parsed), pc.equal(pc.utf8_length(stamp), 19))
    antenna_code = pc.index_in(antenna, value_set=pa.array(registry.antenna_ids.tolist(), pa.string()))
    ok_antenna = pc.is_valid(antenna_code)

    ok_shape_np = ok_shape.to_numpy(zero_copy_only=False)
    ok_time_np = ok_time.to_numpy(zero_copy_only=False)
    ok_time_np &= _fields_round_trip(stamp, parsed, ok_time_np)
    ok_antenna_np = ok_antenna.to_numpy(zero_copy_only=False)
    report.malformed_row += int((~ok_shape_np).sum())
    report.bad_timestamp = int((ok_shape_np & ~ok_time_np).sum())
    report.unknown_antenna = int((ok_shape_np & ok_time_np & ~ok_antenna_np).sum())
    keep = ok_shape_np & ok_time_np & ok_antenna_np
    report.accepted = int(keep.sum())

    _check_rejects(report, name, max_reject_fraction)

    mask = pa.array(keep)
    users = pc.filter(user, mask).combine_chunks().dictionary_encode()
    labels = np.array(users.dictionary.to_pylist(), dtype=object)
    order = np.argsort(labels, kind="stable")
    rank = np.empty(len(labels), dtype=np.int64)
    rank[order] = np.arange(len(labels))
    user_idx = rank[users.indices.to_numpy(zero_copy_only=False).astype(np.int64)]
    ts = pc.filter(parsed, mask).cast(pa.int64()).to_numpy(zero_copy_only=False)
    events = EventTable(
        user_idx,
        labels[order],
        pc.filter(antenna_code, mask).to_numpy(zero_copy_only=False).astype(np.int64),
        ts,
        pc.filter(kind_code, mask).to_numpy(zero_copy_only=False).astype(np.int8),
        registry,
        tz_offset_minutes,
    )
    return events, report


# --------------------------------------------------------------------------
# user-day grouping
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class UserDayTrace:
    user_id: str
    day: date
    events: tuple  # ((timestamp seconds, antenna_id), ...)


class TraceSet:
    """Events sorted into per-(user, day) traces, CSR style.

    ``events`` is the sorted :class:`EventTable`; trace ``k`` spans
    ``offsets[k]:offsets[k+1]``.  Traces are ordered by user label, then day.
    """

    def __init__(self, events: EventTable, offsets: np.ndarray):
        self.events = events
        self.offsets = np.asarray(offsets, dtype=np.int64)
        starts = self.offsets[:-1]
        if len(events):
            self.user = events.user[starts]
            self.day = events.ts[starts] // SECONDS_PER_DAY
        else:
            self.user = np.zeros(0, dtype=np.int64)
            self.day = np.zeros(0, dtype=np.int64)

    @property
    def registry(self):
        return self.events.registry

    @property
    def sizes(self) -> np.ndarray:
        return np.diff(self.offsets)

    def __len__(self) -> int:
        return self.offsets.shape[0] - 1

    def user_id(self, k: int) -> str:
        return str(self.events.user_labels[self.user[k]])

    def date(self, k: int) -> date:
        return day_to_date(self.day[k])

    def __getitem__(self, k: int) -> UserDayTrace:
        lo, hi = self.offsets[k], self.offsets[k + 1]
        ids = self.events.registry.antenna_ids
        return UserDayTrace(
            self.user_id(k),
            self.date(k),
            tuple((int(t), str(ids[a])) for t, a in zip(self.events.ts[lo:hi], self.events.antenna[lo:hi])),
        )

    def __iter__(self) -> Iterator[UserDayTrace]:
        for k in range(len(self)):
            yield self[k]

    def select(self, traces) -> "TraceSet":
        """Subset of traces (boolean mask or sorted indices), order preserved."""
        traces = np.asarray(traces)
        if traces.dtype == bool:
            traces = np.flatnonzero(traces)
        sizes = self.sizes[traces]
        offsets = np.zeros(len(traces) + 1, dtype=np.int64)
        np.cumsum(sizes, out=offsets[1:])
        if len(traces):
            starts = self.offsets[:-1][traces]
            idx = np.repeat(starts - offsets[:-1], sizes) + np.arange(offsets[-1])
        else:
            idx = np.zeros(0, dtype=np.int64)
        return TraceSet(self.events.take(idx), offsets)

    def chunks(self, n: int) -> list["TraceSet"]:
        bounds = np.linspace(0, len(self), max(1, n) + 1).astype(np.int64)
        return [self.select(np.arange(a, b)) for a, b in zip(bounds[:-1], bounds[1:])]

    def flatten(self) -> EventTable:
        return self.events


def group_user_days(events: EventTable) -> TraceSet:
    """Sort events by (user, timestamp) and cut at user and local-day changes.

    Ties on identical timestamps keep input order.
    """
    n = len(events)
    if n == 0:
        return TraceSet(events, np.zeros(1, dtype=np.int64))
    ts0 = events.ts.min()
    span = int(events.ts.max() - ts0) + 1
    key = events.user * span + (events.ts - ts0)
    order = np.argsort(key, kind="stable")
    ev = events.take(order)
    day = ev.ts // SECONDS_PER_DAY
    cut = np.flatnonzero((ev.user[1:] != ev.user[:-1]) | (day[1:] != day[:-1])) + 1
    offsets = np.concatenate(([0], cut, [n])).astype(np.int64)
    return TraceSet(ev, offsets)
