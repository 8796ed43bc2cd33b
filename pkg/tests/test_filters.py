import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cdrjourneys.filters import (
    UserEntropy,
    entropy_cuts,
    entropy_filter,
    hourly_entropy,
    trace_entropies,
)
from cdrjourneys.ingest import group_user_days
from oracles import interpolated_quantile, shannon

DAY0 = 16587 * 86400


def _stamps(per_hour):
    return [DAY0 + h * 3600 + 60 * i for h, c in per_hour.items() for i in range(c)]


def test_single_hour():
    assert hourly_entropy(_stamps({9: 5})).h == 0.0


@pytest.mark.parametrize("k", [1, 2, 3, 6, 12, 24])
def test_uniform(k):
    assert abs(hourly_entropy(_stamps({h: 2 for h in range(k)})).h - math.log(k)) <= 1e-12


def test_three_to_one():
    h = hourly_entropy(_stamps({8: 3, 17: 1})).h
    assert h == pytest.approx(-(0.75 * math.log(0.75) + 0.25 * math.log(0.25)), abs=1e-15)
    assert round(h, 4) == 0.5623


def test_empty():
    with pytest.raises(ValueError):
        hourly_entropy([])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 86399), min_size=1, max_size=60), st.integers(2, 5))
def test_permutation_and_scaling(secs, k):
    ts = [DAY0 + s for s in secs]
    h = hourly_entropy(ts).h
    assert h == pytest.approx(shannon([sum(1 for s in secs if s // 3600 == b) for b in range(24)]), abs=1e-12)
    assert abs(hourly_entropy(ts[::-1]).h - h) <= 1e-12
    assert abs(hourly_entropy(ts * k).h - h) <= 1e-12
    assert 0 <= h <= math.log(24) + 1e-12


def test_vectorised_matches_scalar(small_city):
    traces = group_user_days(small_city[2])
    h = trace_entropies(traces)
    for k in range(len(traces)):
        assert h[k] == pytest.approx(hourly_entropy([t for t, _ in traces[k].events]).h, abs=1e-12)


def _users(hs):
    return [UserEntropy(f"u{i}", h, 10) for i, h in enumerate(hs)]


def test_fixed_mode_defaults():
    kept, res = entropy_filter(_users([0.3, 0.5, 0.95, 0.4, 0.9]))
    assert kept == {"u1", "u3", "u4"}
    assert (res.low_cut, res.high_cut) == (0.4, 0.9)


def test_quantile_mode_sort_and_slice():
    hs = [round(0.1 * i, 1) for i in range(1, 11)]
    kept, res = entropy_filter(_users(hs), "quantile")
    lo, hi = interpolated_quantile(hs, 0.25), interpolated_quantile(hs, 0.90)
    assert kept == {f"u{i}" for i, h in enumerate(hs) if lo <= h <= hi}
    assert sorted(hs[int(u[1:])] for u in kept) == [0.4, 0.5, 0.6, 0.7, 0.8, 0.9]


def test_bad_cuts():
    with pytest.raises(ValueError):
        entropy_cuts([0.5], "fixed", 0.9, 0.4)
    with pytest.raises(ValueError):
        entropy_cuts([0.5], "nope")


def test_quantile_retention_fraction():
    rng = np.random.default_rng(5)
    for n in (10, 97, 1000):
        h = rng.random(n)
        res = entropy_cuts(h, "quantile", 0.25, 0.90)
        assert abs(res.n_retained / n - 0.65) <= 1 / n + 1e-12
