"""Great-circle distances and per-zone antenna spread thresholds."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

EARTH_RADIUS_M = 6_371_000.0
DEFAULT_QUANTILE = 0.8
DEFAULT_FLOOR_M = 500.0


def haversine_np(lat1, lon1, lat2, lon2):
    """Vectorised haversine distance in meters (inputs in degrees)."""
    lat1 = np.radians(lat1)
    lat2 = np.radians(lat2)
    dlat = lat2 - lat1
    dlon = np.radians(lon2) - np.radians(lon1)
    a = np.sin(dlat / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.minimum(a, 1.0)))


def haversine(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Distance in meters between two ``(lat, lon)`` points on a sphere of mean Earth radius."""
    return float(haversine_np(a[0], a[1], b[0], b[1]))


@dataclass(frozen=True)
class ZoneDistanceStats:
    zone_id: str
    antenna_count: int
    q_value: float


def pairwise_distances(lat, lon) -> np.ndarray:
    """Upper-triangle (i < j) haversine distances, row-major order."""
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    i, j = np.triu_indices(lat.shape[0], k=1)
    return haversine_np(lat[i], lon[i], lat[j], lon[j])


def zone_quantiles(registry, q: float = DEFAULT_QUANTILE, floor_m: float = DEFAULT_FLOOR_M) -> dict[str, ZoneDistanceStats]:
    """Quantile ``q`` of each zone's pairwise antenna distances.

    Zones with fewer than two antennas get ``floor_m``.  The quantile
    interpolates linearly between order statistics at rank ``(n - 1) * q``.
    """
    if not 0.0 < q < 1.0:
        raise ValueError(f"quantile must lie in (0, 1), got {q}")
    out = {}
    for z, zone_id in enumerate(registry.zone_labels):
        members = np.flatnonzero(registry.zone == z)
        if members.size < 2:
            out[zone_id] = ZoneDistanceStats(zone_id, int(members.size), float(floor_m))
            continue
        dist = pairwise_distances(registry.lat[members], registry.lon[members])
        out[zone_id] = ZoneDistanceStats(zone_id, int(members.size), float(np.quantile(dist, q, method="linear")))
    return out


def zone_threshold_array(registry, stats: dict[str, ZoneDistanceStats]) -> np.ndarray:
    """q_value per zone code, aligned with ``registry.zone_labels``."""
    return np.array([stats[z].q_value for z in registry.zone_labels], dtype=np.float64)


def min_trip_distance(stats: dict[str, ZoneDistanceStats], z_o: str, z_d: str) -> float:
    """Minimum origin-destination displacement for a trip between two zones."""
    try:
        return max(stats[z_o].q_value, stats[z_d].q_value)
    except KeyError as e:
        raise KeyError(f"unknown zone {e.args[0]!r}") from None


def mean_q_value(stats: dict[str, ZoneDistanceStats]) -> float:
    return float(np.mean([s.q_value for s in stats.values()])) if stats else float("nan")


def write_zone_stats(stats: dict[str, ZoneDistanceStats], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["zone_id", "antenna_count", "q_value_m"])
        for zone_id in sorted(stats):
            s = stats[zone_id]
            w.writerow([s.zone_id, s.antenna_count, repr(s.q_value)])
