"""Hourly activity entropy per user-day and the diversity filter built on it."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .ingest import SECONDS_PER_DAY, TraceSet

FIXED, QUANTILE = "fixed", "quantile"
DEFAULT_CUTS = {FIXED: (0.4, 0.9), QUANTILE: (0.25, 0.90)}


@dataclass(frozen=True)
class UserEntropy:
    user_id: str
    h: float  # nats
    event_count: int
    day: object = None


def entropy_from_counts(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise ValueError("no events")
    p = counts[counts > 0] / total
    return float(-(p * np.log(p)).sum())


def hour_counts(timestamps: Iterable[int]) -> np.ndarray:
    """Events per local hour of day for timestamps in local epoch seconds."""
    ts = np.asarray(list(timestamps) if not isinstance(timestamps, np.ndarray) else timestamps, dtype=np.int64)
    return np.bincount((ts % SECONDS_PER_DAY) // 3600, minlength=24)


def hourly_entropy(timestamps: Sequence[int], user_id: str = "", day=None) -> UserEntropy:
    """Shannon entropy (nats) of a user's events over the 24 hours of the day."""
    if len(timestamps) == 0:
        raise ValueError("hourly_entropy needs at least one event")
    counts = hour_counts(timestamps)
    return UserEntropy(user_id, entropy_from_counts(counts), int(counts.sum()), day)


def trace_entropies(traces: TraceSet) -> np.ndarray:
    """Hourly entropy of every trace, vectorised."""
    n = len(traces)
    if n == 0:
        return np.zeros(0)
    hour = (traces.events.ts % SECONDS_PER_DAY) // 3600
    trace_of = np.repeat(np.arange(n), traces.sizes)
    counts = np.bincount(trace_of * 24 + hour, minlength=n * 24).reshape(n, 24).astype(np.float64)
    p = counts / counts.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -terms.sum(axis=1)


@dataclass
class FilterResult:
    mode: str
    low: float
    high: float
    low_cut: float  # entropy value actually applied
    high_cut: float
    retained: np.ndarray = field(repr=False)  # boolean mask aligned with the input

    @property
    def n_total(self) -> int:
        return int(self.retained.shape[0])

    @property
    def n_retained(self) -> int:
        return int(self.retained.sum())

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "low": self.low,
            "high": self.high,
            "low_cut": self.low_cut,
            "high_cut": self.high_cut,
            "n_total": self.n_total,
            "n_retained": self.n_retained,
        }


def entropy_cuts(h, mode: str = FIXED, low: float | None = None, high: float | None = None) -> FilterResult:
    """Keep entropies in ``[low_cut, high_cut]``.

    In fixed mode the bounds are entropy values; in quantile mode they are
    quantile levels of ``h`` (linear interpolation between order statistics).
    """
    if mode not in DEFAULT_CUTS:
        raise ValueError(f"unknown entropy mode {mode!r}")
    dlow, dhigh = DEFAULT_CUTS[mode]
    low = dlow if low is None else low
    high = dhigh if high is None else high
    if low >= high:
        raise ValueError(f"low cut {low} must be below high cut {high}")
    h = np.asarray(h, dtype=np.float64)
    if mode == FIXED:
        lo_v, hi_v = low, high
    else:
        if not (0.0 <= low <= 1.0 and 0.0 <= high <= 1.0):
            raise ValueError("quantile levels must lie in [0, 1]")
        if h.size == 0:
            lo_v, hi_v = math.nan, math.nan
        else:
            lo_v, hi_v = (float(v) for v in np.quantile(h, [low, high], method="linear"))
    retained = (h >= lo_v) & (h <= hi_v) if h.size else np.zeros(0, dtype=bool)
    return FilterResult(mode, low, high, float(lo_v), float(hi_v), retained)


def entropy_filter(entropies: Sequence[UserEntropy], mode: str = FIXED, low: float | None = None,
                   high: float | None = None) -> tuple[set[str], FilterResult]:
    """Users whose entropy lies between the cuts, plus the cuts used."""
    res = entropy_cuts([e.h for e in entropies], mode, low, high)
    return {e.user_id for e, keep in zip(entropies, res.retained) if keep}, res


def write_entropy_csv(traces: TraceSet, h: np.ndarray, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["user_id", "day", "h", "event_count"])
        sizes = traces.sizes
        for k in range(len(traces)):
            w.writerow([traces.user_id(k), traces.date(k).isoformat(), repr(float(h[k])), int(sizes[k])])


def write_filter_report(result: FilterResult, path) -> None:
    with open(path, "w") as f:
        json.dump(result.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
