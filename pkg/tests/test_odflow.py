import io
import math
import random
from collections import Counter
from types import SimpleNamespace

import numpy as np
import pytest

from cdrjourneys.odflow import (
    DegenerateRanks,
    LabelMismatch,
    ODMatrix,
    average_matrices,
    build_od,
    ecdf,
    l2_normalize_rows,
    rank_correlation,
    spearman,
    trip_stats,
    write_trip_stats,
)
from oracles import spearman_reference

LABELS = ["A", "B", "C", "D"]


def _trip(o, d):
    return SimpleNamespace(mun_o=o, mun_d=d)


def test_empty_and_small():
    assert build_od([], LABELS).counts.sum() == 0
    m = build_od([_trip("A", "B")] * 3 + [_trip("B", "A")], LABELS)
    assert m.counts[0, 1] == 3 and m.counts[1, 0] == 1 and m.total == 4


def test_brute_force_tally():
    rng = random.Random(2)
    trips = [_trip(rng.choice(LABELS), rng.choice(LABELS)) for _ in range(500)]
    tally = Counter((t.mun_o, t.mun_d) for t in trips)
    m = build_od(trips, LABELS)
    for i, o in enumerate(LABELS):
        for j, d in enumerate(LABELS):
            assert m.counts[i, j] == tally[(o, d)]


def test_unlisted_municipality():
    with pytest.raises(KeyError, match="Z"):
        build_od([_trip("A", "Z")], LABELS)


def test_average():
    a = ODMatrix(["x", "y"], [[4, 0], [0, 0]])
    b = ODMatrix(["x", "y"], [[6, 0], [0, 0]])
    assert average_matrices([a]).counts.tolist() == a.counts.tolist()
    assert average_matrices([a, b]).counts[0, 0] == 5
    rng = np.random.default_rng(1)
    ms = [ODMatrix(LABELS, rng.integers(0, 50, (4, 4))) for _ in range(10)]
    avg = average_matrices(ms)
    for i in range(4):
        for j in range(4):
            assert avg.counts[i, j] == pytest.approx(sum(m.counts[i, j] for m in ms) / 10, rel=1e-12)
    assert avg.total == pytest.approx(sum(m.total for m in ms) / 10)
    with pytest.raises(LabelMismatch):
        average_matrices([a, ODMatrix(["x", "z"], [[1, 0], [0, 0]])])


def test_normalize():
    m = l2_normalize_rows(ODMatrix(["x", "y"], [[3, 4], [0, 0]]))
    assert m.counts.tolist() == [[0.6, 0.8], [0, 0]]
    rng = np.random.default_rng(4)
    r = ODMatrix(LABELS, rng.integers(0, 9, (4, 4)) * (rng.random((4, 1)) > 0.3))
    n = l2_normalize_rows(r)
    for row, orig in zip(n.counts, r.counts):
        norm = math.sqrt(sum(v * v for v in row))
        assert norm == pytest.approx(1, abs=1e-9) if any(orig) else norm == 0
    assert np.allclose(l2_normalize_rows(n).counts, n.counts, atol=1e-9)


def test_spearman_identity_and_reversal():
    x = [3.0, 1.0, 4.0, 1.5, 9.0, 2.6]
    assert rank_correlation(x, x).rho == 1
    assert rank_correlation(x, [-v for v in x]).rho == -1


def test_spearman_tie_fixture():
    a = [5, 2, 9, 2, 7, 1, 8, 3, 6, 4]
    b = [4, 3, 8, 1, 9, 2, 7, 5, 6, 10]
    assert abs(rank_correlation(a, b).rho - spearman_reference(a, b)) <= 1e-12


def test_spearman_cube_invariance_and_symmetry():
    rng = np.random.default_rng(9)
    a = ODMatrix(LABELS, rng.integers(0, 30, (4, 4)))
    b = ODMatrix(LABELS, rng.integers(0, 30, (4, 4)))
    cubed = ODMatrix(LABELS, a.counts ** 3)
    assert spearman(cubed, b).rho == pytest.approx(spearman(a, b).rho, abs=1e-12)
    assert spearman(a, b).rho == pytest.approx(spearman(b, a).rho, abs=1e-15)
    off = spearman(a, b, include_diagonal=False)
    assert off.n == 12


def test_spearman_errors():
    with pytest.raises(DegenerateRanks):
        rank_correlation([1, 1, 1, 1], [1, 2, 3, 4])
    with pytest.raises(LabelMismatch):
        spearman(ODMatrix(["x", "y"], np.eye(2)), ODMatrix(["x", "z"], np.eye(2)))


def test_p_value_t_approximation():
    a = [1, 2, 3, 4, 5, 6, 7, 8]
    b = [2, 1, 4, 3, 6, 5, 8, 7]
    rc = rank_correlation(a, b)
    t = rc.rho * math.sqrt(6 / (1 - rc.rho ** 2))
    assert 0 < rc.p_value < 0.01 and t > 0


def test_csv_round_trip():
    m = ODMatrix(LABELS, np.arange(16).reshape(4, 4))
    back = ODMatrix.from_csv(io.StringIO(m.to_csv_text()))
    assert back.labels == LABELS and np.array_equal(back.counts, m.counts)
    labelled = ",A,B\nA,1,2\nB,3,4\n"
    assert ODMatrix.from_csv(io.StringIO(labelled)).counts.tolist() == [[1, 2], [3, 4]]


def test_stats_small():
    st = trip_stats([8 * 3600], [30.0], [5000.0])
    assert st.mean_duration_min == 30 and st.mean_distance_km == 5
    st = trip_stats([0, 0, 0], [10.0, 20.0, 30.0], [1.0, 2.0, 3.0])
    assert st.mean_duration_min == 20
    assert ecdf([10, 20, 30], 20) == pytest.approx(2 / 3)
    assert st.duration.mass == 3 and st.duration.weighted_mean() == pytest.approx(20, rel=1e-9)


def test_stats_empty(tmp_path):
    st = trip_stats([], [], [])
    assert st.empty and math.isnan(st.mean_duration_min) and st.duration.mass == 0
    assert write_trip_stats(st, tmp_path, "2015-06-01")


def test_histogram_mass_and_mean():
    rng = np.random.default_rng(3)
    dur = rng.uniform(15, 120, 400)
    dist = rng.uniform(500, 30000, 400)
    st = trip_stats(rng.integers(0, 86400, 400), dur, dist)
    for h, v in ((st.duration, dur), (st.distance, dist)):
        assert h.mass == 400
        assert h.weighted_mean() == pytest.approx(v.mean(), rel=1e-9)


def test_stats_files(tmp_path):
    st = trip_stats([3600, 7200], [20.0, 40.0], [1000.0, 3000.0], event_ts=[3600, 3660])
    names = sorted(p.split("/")[-1] for p in write_trip_stats(st, tmp_path, "2015-06-01"))
    assert "2015-06-01_duration_hist.csv" in names and "2015-06-01_distance_cdf.csv" in names
    assert "2015-06-01_event_frequency.csv" in names
