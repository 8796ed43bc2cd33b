"""Origin-destination matrices, trip-variable distributions and rank comparison."""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from datetime import date
from typing import Iterable, Sequence

import numpy as np
from scipy import stats as sps

from .ingest import SECONDS_PER_DAY


class LabelMismatch(ValueError):
    pass


class DegenerateRanks(ValueError):
    """A compared matrix has constant cells; the rank correlation is undefined."""


@dataclass
class ODMatrix:
    labels: list[str]
    counts: np.ndarray  # rows are origins, columns destinations
    day: date | None = None

    def __post_init__(self):
        self.labels = [str(x) for x in self.labels]
        self.counts = np.asarray(self.counts, dtype=np.float64)
        m = len(self.labels)
        if self.counts.shape != (m, m):
            raise ValueError(f"counts shape {self.counts.shape} does not match {m} labels")
        if len(set(self.labels)) != m:
            raise ValueError("labels must be unique")
        if (self.counts < 0).any():
            raise ValueError("counts must be non-negative")

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            f.write(self.to_csv_text())

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.labels)
        for row in self.counts:
            w.writerow([_fmt(v) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, source) -> "ODMatrix":
        """Read the OD CSV: a header of labels, then one row per origin.

        A leading label column in each row (and a blank first header cell) is
        accepted, as produced by most spreadsheet exports.
        """
        if isinstance(source, (str, os.PathLike)):
            with open(source, newline="") as f:
                rows = [r for r in csv.reader(f) if r]
        else:
            text = source.read()
            rows = [r for r in csv.reader(io.StringIO(text.decode() if isinstance(text, bytes) else text)) if r]
        if not rows:
            raise ValueError("empty matrix file")
        header = [c.strip() for c in rows[0]]
        body = rows[1:]
        if header and header[0] == "" or (body and len(body[0]) == len(header) + 1):
            header = [h for h in header if h != ""]
            body = [r[1:] for r in body]
        return cls(header, np.array([[float(c) for c in r] for r in body], dtype=np.float64).reshape(len(body), -1))


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def build_od(trips: Iterable, labels: Sequence[str], day: date | None = None) -> ODMatrix:
    """Count trips per (origin, destination) municipality.

    ``trips`` yields objects with ``mun_o`` and ``mun_d`` attributes.
    """
    pos = {str(m): i for i, m in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)))
    for t in trips:
        for m in (t.mun_o, t.mun_d):
            if str(m) not in pos:
                raise KeyError(f"municipality {m!r} is not a matrix label")
        counts[pos[str(t.mun_o)], pos[str(t.mun_d)]] += 1
    return ODMatrix(list(labels), counts, day)


def build_od_codes(mun_o, mun_d, labels: Sequence[str], day: date | None = None) -> ODMatrix:
    """:func:`build_od` for integer municipality codes (index into ``labels``)."""
    m = len(labels)
    flat = np.bincount(np.asarray(mun_o, dtype=np.int64) * m + np.asarray(mun_d, dtype=np.int64), minlength=m * m)
    return ODMatrix(list(labels), flat.reshape(m, m).astype(np.float64), day)


def average_matrices(matrices: Sequence[ODMatrix]) -> ODMatrix:
    if not matrices:
        raise ValueError("need at least one matrix")
    labels = matrices[0].labels
    for m in matrices[1:]:
        if m.labels != labels:
            raise LabelMismatch("matrices have different labels")
    return ODMatrix(labels, np.mean([m.counts for m in matrices], axis=0))


def l2_normalize_rows(m: ODMatrix) -> ODMatrix:
    """Scale each row to unit Euclidean norm; all-zero rows stay zero."""
    norms = np.linalg.norm(m.counts, axis=1, keepdims=True)
    out = np.divide(m.counts, norms, out=np.zeros_like(m.counts), where=norms > 0)
    return ODMatrix(m.labels, out, m.day)


@dataclass(frozen=True)
class RankCorrelation:
    rho: float
    p_value: float
    n: int


def _cells(a: ODMatrix, b: ODMatrix, include_diagonal: bool):
    if a.labels != b.labels:
        raise LabelMismatch(f"label mismatch: {a.labels} vs {b.labels}")
    mask = np.ones(a.counts.shape, dtype=bool)
    if not include_diagonal:
        np.fill_diagonal(mask, False)
    return a.counts[mask], b.counts[mask]


def rank_correlation(x, y) -> RankCorrelation:
    """Spearman correlation with average ranks for ties and a t-approximation p-value."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    if n < 3:
        raise ValueError(f"need at least 3 cells, got {n}")
    rx = sps.rankdata(x, method="average")
    ry = sps.rankdata(y, method="average")
    rx -= rx.mean()
    ry -= ry.mean()
    sxx, syy = float((rx * rx).sum()), float((ry * ry).sum())
    if sxx == 0 or syy == 0:
        raise DegenerateRanks("rank correlation undefined for constant input")
    # one square root of the product keeps identical inputs at exactly 1
    rho = float(np.clip((rx * ry).sum() / math.sqrt(sxx * syy), -1.0, 1.0))
    if abs(rho) == 1.0:
        p = 0.0
    else:
        t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
        p = float(2.0 * sps.t.sf(abs(t), n - 2))
    return RankCorrelation(rho, p, n)


def spearman(a: ODMatrix, b: ODMatrix, include_diagonal: bool = True) -> RankCorrelation:
    """Rank-compare two matrices cell by cell (raw values, same labels)."""
    x, y = _cells(a, b, include_diagonal)
    return rank_correlation(x, y)


# --------------------------------------------------------------------------
# trip-variable distributions
# --------------------------------------------------------------------------


@dataclass
class Histogram:
    """Fixed-width bins; ``sums`` holds the total value falling in each bin."""

    edges: np.ndarray
    counts: np.ndarray
    sums: np.ndarray

    @property
    def mass(self) -> int:
        return int(self.counts.sum())

    def weighted_mean(self) -> float:
        return float(self.sums.sum() / self.counts.sum()) if self.mass else math.nan

    def rows(self):
        for lo, hi, c, s in zip(self.edges[:-1], self.edges[1:], self.counts, self.sums):
            yield lo, hi, int(c), s


def histogram(values, width: float, lo: float = 0.0, hi: float | None = None) -> Histogram:
    values = np.asarray(values, dtype=np.float64)
    if hi is None:
        hi = lo + width * (max(1, math.floor((values.max() - lo) / width) + 1) if values.size else 1)
    nb = int(round((hi - lo) / width))
    edges = lo + width * np.arange(nb + 1)
    b = np.clip(np.floor((values - lo) / width).astype(np.int64), 0, nb - 1) if values.size else np.zeros(0, np.int64)
    return Histogram(edges, np.bincount(b, minlength=nb), np.bincount(b, weights=values, minlength=nb))


CDF_LEVELS = np.linspace(0.0, 1.0, 101)


def ecdf(values, x) -> np.ndarray:
    """Fraction of ``values`` that are ``<= x``."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    return np.searchsorted(v, np.asarray(x, dtype=np.float64), side="right") / v.shape[0]


def cdf_grid(values) -> np.ndarray:
    """Values at the 0%, 1%, ..., 100% levels of the empirical distribution."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return np.full(CDF_LEVELS.shape, np.nan)
    return np.quantile(values, CDF_LEVELS, method="linear")


@dataclass
class TripStats:
    n_trips: int
    start_time: Histogram  # minutes of day, 1-minute bins over 24 h
    duration: Histogram  # minutes, 1-minute bins
    distance: Histogram  # meters, 100 m bins
    mean_duration_min: float  # nan when there are no trips
    mean_distance_km: float
    cdf: dict[str, np.ndarray] = field(default_factory=dict)
    event_frequency: np.ndarray | None = None  # fraction of the day's events per minute

    @property
    def empty(self) -> bool:
        return self.n_trips == 0


VARIABLES = ("start_time", "duration", "distance")


def trip_stats(t_start, duration_min, distance_m, event_ts=None) -> TripStats:
    """Distributions of start time, duration and endpoint distance.

    ``t_start`` and ``event_ts`` are local epoch seconds.
    """
    t_start = np.asarray(t_start, dtype=np.int64)
    duration_min = np.asarray(duration_min, dtype=np.float64)
    distance_m = np.asarray(distance_m, dtype=np.float64)
    minute_of_day = (t_start % SECONDS_PER_DAY) / 60.0
    n = int(t_start.shape[0])
    freq = None
    if event_ts is not None:
        ev = np.asarray(event_ts, dtype=np.int64)
        counts = np.bincount((ev % SECONDS_PER_DAY) // 60, minlength=1440).astype(np.float64)
        freq = counts / counts.sum() if counts.sum() else counts
    return TripStats(
        n,
        histogram(minute_of_day, 1.0, 0.0, 1440.0),
        histogram(duration_min, 1.0),
        histogram(distance_m, 100.0),
        float(duration_min.mean()) if n else math.nan,
        float(distance_m.mean() / 1000.0) if n else math.nan,
        {"start_time": cdf_grid(minute_of_day), "duration": cdf_grid(duration_min), "distance": cdf_grid(distance_m)},
        freq,
    )


def write_trip_stats(st: TripStats, out_dir, tag: str) -> list[str]:
    """Write ``{tag}_{variable}_{hist|cdf}.csv`` files (and the event frequency series)."""
    written = []
    for var in VARIABLES:
        h: Histogram = getattr(st, var)
        path = os.path.join(out_dir, f"{tag}_{var}_hist.csv")
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["bin_start", "bin_end", "count", "value_sum"])
            for lo, hi, c, s in h.rows():
                w.writerow([_fmt(lo), _fmt(hi), c, repr(float(s))])
        written.append(path)
        path = os.path.join(out_dir, f"{tag}_{var}_cdf.csv")
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["level", "value"])
            for lvl, v in zip(CDF_LEVELS, st.cdf[var]):
                w.writerow([f"{lvl:.2f}", repr(float(v))])
        written.append(path)
    if st.event_frequency is not None:
        path = os.path.join(out_dir, f"{tag}_event_frequency.csv")
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["minute", "fraction"])
            for i, v in enumerate(st.event_frequency):
                w.writerow([i, repr(float(v))])
        written.append(path)
    return written
