"""Deviation of the coarse upcrossing estimator from a fine-level proxy.

The proxy for the local time is the same estimator at a much finer level
``K_ref``.  Both ``U^k`` and the proxy are step functions that jump only at
fine crossing times, so the supremum over ``t`` of their difference is
attained right after one of those jumps; over ``x`` it is attained on a
fine cell.  The evaluation below works in integer units of ``2 * 2^-K_ref``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from .field import UpcrossingField, build_field, level_index
from .skeleton import CrossingSkeleton, coarsen

MIN_PROXY_GAP = 4


def normalizer(k: int, log_base: float | None = None) -> float:
    """``sqrt(2^-k log(2^k))``, natural log unless ``log_base`` is given."""
    log2k = k * math.log(2.0)
    if log_base is not None:
        log2k /= math.log(log_base)
    return math.sqrt(2.0 ** -k * log2k)


@dataclass(frozen=True)
class LocalTimeProxy:
    field: UpcrossingField

    @property
    def level(self) -> int:
        return self.field.level

    def value(self, t: float, x: float) -> float:
        return self.field.U_value(t, x)

    def lstar(self, t: float) -> float:
        counts = self.field.counts_at(t)
        return self.field.unit * (int(counts.max()) if counts.size else 0)


def build_proxy(fine_field: UpcrossingField, coarse_levels=(), strict: bool = True) -> LocalTimeProxy:
    """Wrap a fine field as the local-time proxy.

    With ``strict`` every coarse level must sit at least four levels below the
    proxy; ``strict=False`` admits the degenerate equal-level case.
    """
    for k in coarse_levels:
        if k > fine_field.level:
            raise ValueError(f"proxy level {fine_field.level} is coarser than level {k}")
        if strict and fine_field.level < k + MIN_PROXY_GAP:
            raise ValueError(f"proxy level {fine_field.level} must be >= {k + MIN_PROXY_GAP}")
    return LocalTimeProxy(fine_field)


@dataclass(frozen=True)
class DeviationStatistics:
    level: int
    proxy_level: int
    horizon: float
    sup_deviation: float
    normalizer: float
    lstar: float

    @property
    def rate_statistic(self) -> float:
        return self.sup_deviation / self.normalizer

    @property
    def centered_statistic(self) -> float:
        return self.rate_statistic - 2.0 * math.sqrt(self.lstar)

    @property
    def F_statistic(self) -> float:
        return self.rate_statistic ** 2


@nb.njit(cache=True, nogil=True)
def _merge_deviation(f_times, f_cells, f_jmin, f_size, c_times, c_cells, c_jmin, c_size, r, T,
                     prof_t, prof_d):
    """Max over events <= T of |r*U_J - L_i| and the max fine count, in counts.

    If ``prof_t`` is non-empty the running maximum after each distinct event
    time is recorded there (with the time); the number recorded is returned.
    """
    record = prof_t.size > 0
    g = 0
    L = np.zeros(f_size, dtype=np.int64)
    U = np.zeros(c_size, dtype=np.int64)
    i = 0
    c = 0
    best = 0
    lmax = 0
    nf = f_times.size
    nc = c_times.size
    while True:
        tf = f_times[i] if i < nf else np.inf
        tc = c_times[c] if c < nc else np.inf
        t = min(tf, tc)
        if not t <= T:
            break
        fi0 = i
        while i < nf and f_times[i] == t:
            L[f_cells[i] - f_jmin] += 1
            i += 1
        ci0 = c
        while c < nc and c_times[c] == t:
            U[c_cells[c] - c_jmin] += 1
            c += 1
        for e in range(fi0, i):
            fc = f_cells[e]
            v = L[fc - f_jmin]
            if v > lmax:
                lmax = v
            J = -((-fc) // r)
            u = U[J - c_jmin] if 0 <= J - c_jmin < c_size else 0
            d = abs(r * u - v)
            if d > best:
                best = d
        for e in range(ci0, c):
            J = c_cells[e]
            u = r * U[J - c_jmin]
            for fc in range((J - 1) * r + 1, J * r + 1):
                idx = fc - f_jmin
                v = L[idx] if 0 <= idx < f_size else 0
                d = abs(u - v)
                if d > best:
                    best = d
        if record:
            prof_t[g] = t
            prof_d[g] = best
            g += 1
    return best, lmax, g


def _field_size(f: UpcrossingField) -> int:
    return max(f.j_max - f.j_min + 1, 0)


def _deviation_counts(coarse: UpcrossingField, fine: UpcrossingField, T: float) -> tuple[int, int]:
    r = 1 << (fine.level - coarse.level)
    best, lmax, _ = _merge_deviation(fine.event_times, fine.event_cells, fine.j_min, _field_size(fine),
                                     coarse.event_times, coarse.event_cells, coarse.j_min,
                                     _field_size(coarse), r, float(T), _EMPTY_F, _EMPTY_I)
    return int(best), int(lmax)


_EMPTY_F = np.zeros(0)
_EMPTY_I = np.zeros(0, dtype=np.int64)


def deviation_profile(coarse: UpcrossingField, fine: UpcrossingField, T: float):
    """Event times ``<= T`` and the running sup deviation after each, in real units."""
    r = 1 << (fine.level - coarse.level)
    n = fine.n_up + coarse.n_up
    prof_t, prof_d = np.empty(n), np.empty(n, dtype=np.int64)
    _, _, g = _merge_deviation(fine.event_times, fine.event_cells, fine.j_min, _field_size(fine),
                               coarse.event_times, coarse.event_cells, coarse.j_min,
                               _field_size(coarse), r, float(T), prof_t, prof_d)
    return prof_t[:g], prof_d[:g] * fine.unit


def sup_deviation(coarse: UpcrossingField, proxy: LocalTimeProxy, T: float,
                  log_base: float | None = None) -> DeviationStatistics:
    """``sup_{t<=T} sup_x |U^k(t,x) - proxy(t,x)|`` with the derived statistics."""
    fine = proxy.field
    if coarse.level > fine.level:
        raise ValueError("coarse field is finer than the proxy")
    r = 1 << (fine.level - coarse.level)
    if coarse.horizon != fine.horizon or coarse.start * r != fine.start:
        raise ValueError("coarse field and proxy come from different paths")
    if not 0.0 <= T <= fine.horizon:
        raise ValueError(f"T={T} outside [0, {fine.horizon}]")
    best, lmax = _deviation_counts(coarse, fine, T)
    return DeviationStatistics(
        level=coarse.level,
        proxy_level=fine.level,
        horizon=float(T),
        sup_deviation=best * fine.unit,
        normalizer=normalizer(coarse.level, log_base),
        lstar=lmax * fine.unit,
    )


def sup_deviation_bruteforce(coarse: UpcrossingField, proxy: LocalTimeProxy, T: float) -> float:
    """Reference double loop over event times and fine cells (small inputs only)."""
    fine = proxy.field
    ts = sorted({float(t) for t in fine.event_times if t <= T}
                | {float(t) for t in coarse.event_times if t <= T} | {float(T)})
    cells = range(fine.j_min - 1, fine.j_max + 2)
    h = 2.0 ** -fine.level
    best = 0.0
    for t in ts:
        for j in cells:
            x = j * h
            best = max(best, abs(coarse.U_value(t, x) - proxy.value(t, x)))
    return best


@dataclass
class SubadditivityReport:
    n_checked: int = 0
    violations: int = 0
    identity_violations: int = 0
    squared_violations: int = 0
    max_excess: float = -math.inf

    def merge(self, other: "SubadditivityReport") -> "SubadditivityReport":
        return SubadditivityReport(
            self.n_checked + other.n_checked,
            self.violations + other.violations,
            self.identity_violations + other.identity_violations,
            self.squared_violations + other.squared_violations,
            max(self.max_excess, other.max_excess),
        )


def _counts_between(f: UpcrossingField, s: float, t: float) -> np.ndarray:
    size = _field_size(f)
    return f.counts_at(t) - f.counts_at(s) if size else np.zeros(0, np.int64)


def subadditivity_check(fine: CrossingSkeleton, k: int, T: float, step_indices=None,
                        tol: float = 1e-12) -> SubadditivityReport:
    """Check ``D(T) <= D(s) + D_shift(T - s)`` at level-``k`` crossing times ``s``.

    ``D_shift`` is computed on the skeletons restarted at ``s``; the exact
    integer identity ``u(t) - u(s) == u_shift(t - s)`` is checked on every
    cell of both levels at the same time.
    """
    if not 0.0 <= T <= fine.horizon:
        raise ValueError(f"T={T} outside [0, {fine.horizon}]")
    coarse = coarsen(fine, k)
    f_field, c_field = build_field(fine), build_field(coarse)
    proxy = build_proxy(f_field, strict=False)
    D_T = sup_deviation(c_field, proxy, T).sup_deviation
    prof_t, prof_d = deviation_profile(c_field, f_field, T)
    if step_indices is None:
        step_indices = range(coarse.step_count_at(T) + 1)
    report = SubadditivityReport()
    for n in step_indices:
        s = float(coarse.times[n - 1]) if n > 0 else 0.0
        n_f = int(np.searchsorted(fine.times, s, side="left")) + 1 if n > 0 else 0
        if n > 0 and fine.times[n_f - 1] != s:
            raise AssertionError("coarse crossing time missing from the fine skeleton")
        fine_sh, coarse_sh = fine.shift_tail(n_f), coarse.shift_tail(n)
        f_sh, c_sh = build_field(fine_sh), build_field(coarse_sh)
        r = T - s
        for orig, sh in ((f_field, f_sh), (c_field, c_sh)):
            inc = _counts_between(orig, s, T)
            got = np.zeros_like(inc)
            if _field_size(sh):
                sub = sh.counts_at(r)
                lo = sh.j_min - orig.j_min
                got[lo:lo + sub.size] = sub
            if not np.array_equal(inc, got):
                report.identity_violations += 1
        g = int(np.searchsorted(prof_t, s, side="right"))
        D_s = float(prof_d[g - 1]) if g else 0.0
        D_sh = sup_deviation(c_sh, build_proxy(f_sh, strict=False), r).sup_deviation
        excess = D_T - (D_s + D_sh)
        report.n_checked += 1
        report.max_excess = max(report.max_excess, excess)
        if excess > tol:
            report.violations += 1
        if D_T * D_T > D_s * D_s + D_sh * D_sh + tol:
            report.squared_violations += 1
    return report


__all__ = [
    "DeviationStatistics", "LocalTimeProxy", "SubadditivityReport", "build_proxy",
    "level_index", "normalizer", "sup_deviation", "sup_deviation_bruteforce",
    "subadditivity_check",
]
