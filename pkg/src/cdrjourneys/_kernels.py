"""Compiled per-trace loops over CSR-packed arrays.

Every kernel takes ``offsets`` of length ``n_traces + 1``; trace ``k`` owns
the half-open slice ``offsets[k]:offsets[k + 1]``.  Results for one trace never
depend on other traces, so chunking the input does not change the output.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def segmented_cumsum(values, offsets):
    """Running sum restarted at every trace; the first element of a trace is 0."""
    out = np.empty(values.shape[0], dtype=np.float64)
    for k in range(offsets.shape[0] - 1):
        lo = offsets[k]
        hi = offsets[k + 1]
        if hi <= lo:
            continue
        acc = 0.0
        out[lo] = 0.0
        for i in range(lo + 1, hi):
            acc += values[i]
            out[i] = acc
    return out


@njit(cache=True)
def _segment_distance(px, py, ax, ay, bx, by):
    dx = bx - ax
    dy = by - ay
    den = dx * dx + dy * dy
    if den == 0.0:
        return np.hypot(px - ax, py - ay)
    s = ((px - ax) * dx + (py - ay) * dy) / den
    if s < 0.0:
        s = 0.0
    elif s > 1.0:
        s = 1.0
    return np.hypot(px - (ax + s * dx), py - (ay + s * dy))


@njit(cache=True)
def _rdp(x, y, offsets, epsilon, record):
    n = x.shape[0]
    keep = np.zeros(n, dtype=np.bool_)
    m = n if record else 0
    chord_lo = np.full(m, -1, dtype=np.int64)
    chord_hi = np.full(m, -1, dtype=np.int64)
    deviation = np.full(m, np.nan)
    stack_lo = np.empty(n + 1, dtype=np.int64)
    stack_hi = np.empty(n + 1, dtype=np.int64)
    for k in range(offsets.shape[0] - 1):
        lo = offsets[k]
        hi = offsets[k + 1]
        if hi <= lo:
            continue
        keep[lo] = True
        keep[hi - 1] = True
        stack_lo[0] = lo
        stack_hi[0] = hi - 1
        top = 1
        while top > 0:
            top -= 1
            a = stack_lo[top]
            b = stack_hi[top]
            if b - a < 2:
                continue
            best = -1.0
            idx = -1
            for i in range(a + 1, b):
                dev = _segment_distance(x[i], y[i], x[a], y[a], x[b], y[b])
                if record:
                    chord_lo[i] = a
                    chord_hi[i] = b
                    deviation[i] = dev
                if dev > best:
                    best = dev
                    idx = i
            if best > epsilon:
                keep[idx] = True
                # right half pushed first so the left half is processed first
                stack_lo[top] = idx
                stack_hi[top] = b
                top += 1
                stack_lo[top] = a
                stack_hi[top] = idx
                top += 1
    return keep, chord_lo, chord_hi, deviation


def rdp_mask(x, y, offsets, epsilon):
    """Ramer-Douglas-Peucker keep-mask for every trace.

    A vertex is kept when its distance to the current chord segment is the
    largest within that chord (lowest index wins ties) and exceeds ``epsilon``.
    """
    return _rdp(x, y, offsets, float(epsilon), False)[0]


def rdp_record(x, y, offsets, epsilon):
    """Like :func:`rdp_mask` but also returns, for every interior vertex, the
    chord ``(lo, hi)`` it was last measured against and that distance.

    Kept vertices keep the chord they were split on; discarded ones keep the
    chord of the step that dropped them.
    """
    return _rdp(x, y, offsets, float(epsilon), True)
