"""q-variation of finite sequences and of ``x -> U^k(t, x)`` on ``[-2^m, 2^m]``.

For ``q >= 1`` an optimal partition can be taken among the turning points
of the sequence (plus its two ends): dropping a point that lies between its
neighbours never lowers ``|a-c|^q`` below ``|a-b|^q + |b-c|^q``.  The DP then
runs over the pruned sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

from .field import UpcrossingField


@dataclass(frozen=True)
class VariationResult:
    value: float
    points: np.ndarray  # indices of the attaining subsequence


@nb.njit(cache=True, nogil=True)
def _extrema(y):
    """Indices of the first element, the last, and every interior turning point."""
    n = y.size
    keep = np.empty(n, dtype=np.int64)
    m = 0
    keep[m] = 0
    m += 1
    direction = 0
    last = 0  # index of the last distinct value seen
    for i in range(1, n):
        if y[i] == y[last]:
            continue
        d = 1 if y[i] > y[last] else -1
        if direction != 0 and d != direction:
            keep[m] = last
            m += 1
        direction = d
        last = i
    if last != 0:
        keep[m] = last
        m += 1
    return keep[:m]


@nb.njit(cache=True, nogil=True)
def _dp(y, q):
    """best[i] = max(0, max_j best[j] + |y_i - y_j|^q); ties keep the shorter chain."""
    n = y.size
    best = np.zeros(n)
    length = np.ones(n, dtype=np.int64)
    prev = np.full(n, -1, dtype=np.int64)
    for i in range(1, n):
        for j in range(i):
            v = best[j] + abs(y[i] - y[j]) ** q
            if v > best[i] or (v == best[i] and prev[i] >= 0 and length[j] + 1 < length[i]):
                best[i] = v
                prev[i] = j
                length[i] = length[j] + 1
    arg = 0
    for i in range(1, n):
        if best[i] > best[arg] or (best[i] == best[arg] and length[i] < length[arg]):
            arg = i
    return best[arg], arg, prev


@nb.njit(cache=True, nogil=True)
def pvar_counts(counts, powtab):
    """q-variation of an integer sequence, ``powtab[d] = d**q`` precomputed."""
    keep = _extrema(counts)
    n = keep.size
    best = np.zeros(n)
    out = 0.0
    for a in range(1, n):
        ya = counts[keep[a]]
        b = 0.0
        for c in range(a):
            v = best[c] + powtab[abs(ya - counts[keep[c]])]
            if v > b:
                b = v
        best[a] = b
        if b > out:
            out = b
    return out


def pvar_sequence(values, q: float) -> VariationResult:
    """``max over subsequences i_0 < ... < i_r`` of ``sum |v[i_l] - v[i_{l-1}]|^q``."""
    y = np.asarray(values, dtype=float)
    if y.ndim != 1 or y.size == 0:
        raise ValueError("need a non-empty 1-d sequence")
    if not q >= 1:
        raise ValueError("q must be >= 1")
    keep = _extrema(y)
    value, arg, prev = _dp(y[keep], float(q))
    chain = []
    i = arg
    while i >= 0:
        chain.append(keep[i])
        i = prev[i]
    return VariationResult(float(value), np.array(chain[::-1], dtype=np.int64))


def interval_cells(k: int, m: int) -> tuple[int, int]:
    """First and last level-``k`` cell index meeting ``[-2^m, 2^m]``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return -(1 << (m + k)), 1 << (m + k)


def _window_counts(f: UpcrossingField, t: float, m: int) -> np.ndarray:
    lo, hi = interval_cells(f.level, m)
    out = np.zeros(hi - lo + 1, dtype=np.int64)
    counts = f.counts_at(t)
    a, b = max(lo, f.j_min), min(hi, f.j_max)
    if a <= b:
        out[a - lo:b - lo + 1] = counts[a - f.j_min:b - f.j_min + 1]
    return out


def pvar_field(f: UpcrossingField, t: float, q: float, m: int) -> VariationResult:
    """q-variation of ``x -> U^k(t, x)`` on ``I_m``, one point per cell."""
    return pvar_sequence(f.unit * _window_counts(f, t, m), q)


@nb.njit(cache=True, nogil=True)
def _sup_over_events(times, cells, lo, hi, T, powtab):
    counts = np.zeros(hi - lo + 1, dtype=np.int64)
    out = 0.0
    for e in range(times.size):
        if times[e] > T:
            break
        j = cells[e]
        if j < lo or j > hi:
            continue
        counts[j - lo] += 1
        v = pvar_counts(counts, powtab)
        if v > out:
            out = v
    return out


def power_table(n: int, q: float) -> np.ndarray:
    return np.arange(n + 1, dtype=float) ** q


def sup_pvar_over_time(f: UpcrossingField, q: float, m: int, T: float) -> float:
    """``sup_{t<=T} ||U^k(t)||^q_{I_m;q}``; the profile only changes at upcrossings."""
    if not 0.0 <= T <= f.horizon:
        raise ValueError(f"T={T} outside [0, {f.horizon}]")
    if not q >= 1:
        raise ValueError("q must be >= 1")
    lo, hi = interval_cells(f.level, m)
    powtab = power_table(max(f.n_up, 1), q)
    return f.unit ** q * _sup_over_events(f.event_times, f.event_cells, lo, hi, float(T), powtab)
