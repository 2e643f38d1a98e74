"""Single-pass path engine for the experiments.

One finest-level walk is drawn step by step and coarsened online to every
requested level.  Nesting of the crossing times means that if a level does
not move on a step, no coarser level moves either, so the per-step work is
usually one comparison.  Running maxima are kept in integer count units and
snapshotted at each requested horizon; finest steps are never stored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from .exit_law import ExitTimeLaw, step_from_uniform, fast_law
from .pvariation import interval_cells, pvar_counts

RADIUS_SIGMAS = 10.0


class PathRangeError(RuntimeError):
    pass


@dataclass(frozen=True)
class PathResult:
    """Per-path snapshots; arrays are indexed ``[pair_or_level, horizon]``."""

    dev_counts: np.ndarray    # [pair, T] max |r U - L| in units of 2 * 2^-K_ref
    lstar_counts: np.ndarray  # [pair, T] max proxy count
    origin_counts: np.ndarray  # [level, T] upcrossings into cell 0
    pvar: np.ndarray          # [level, T] sup_t variation, count units (nan if off)
    n_steps: int


@nb.njit(cache=True, nogil=True)
def _run_path(rng, levels, pair_coarse, pair_fine, horizons, h2, deterministic,
              lo_cell, hi_cell, pv_on, pv_lo, pv_hi, q, powtab,
              poly, u_lo, du, tol, crossover, newton_steps):
    nL = levels.size
    K = levels[nL - 1]
    nP = pair_coarse.size
    nT = horizons.size
    step = np.empty(nL, dtype=np.int64)
    shift = np.empty(nL, dtype=np.int64)
    base = np.empty(nL + 1, dtype=np.int64)
    base[0] = 0
    for li in range(nL):
        shift[li] = K - levels[li]
        step[li] = 1 << shift[li]
        base[li + 1] = base[li] + hi_cell[li] - lo_cell[li] + 1
    cnt = np.zeros(base[nL], dtype=np.int64)
    last = np.zeros(nL, dtype=np.int64)
    edge = np.zeros(nL, dtype=np.int64)
    is_up = np.zeros(nL, dtype=np.bool_)

    dev = np.zeros(nP, dtype=np.int64)
    lstar = np.zeros(nP, dtype=np.int64)
    pv = np.zeros(nL)
    out_dev = np.zeros((nP, nT), dtype=np.int64)
    out_lstar = np.zeros((nP, nT), dtype=np.int64)
    out_origin = np.zeros((nL, nT), dtype=np.int64)
    out_pv = np.full((nL, nT), np.nan)

    v = 0
    t = 0.0
    ci = 0
    n = 0
    next_h = horizons[0]
    while True:
        sign, d = step_from_uniform(rng.random(), h2, deterministic, poly, u_lo, du, tol,
                                    crossover, newton_steps)
        t_new = t + d
        while t_new > next_h:
            for p in range(nP):
                out_dev[p, ci] = dev[p]
                out_lstar[p, ci] = lstar[p]
            for li in range(nL):
                out_origin[li, ci] = cnt[base[li] - lo_cell[li]] if lo_cell[li] <= 0 <= hi_cell[li] else 0
                if pv_on[li]:
                    out_pv[li, ci] = pv[li]
            ci += 1
            next_h = horizons[ci] if ci < nT else np.inf
        if ci == nT:
            break
        t = t_new
        n += 1
        v += sign
        # Walk the levels fine to coarse.  ``edge[li]`` is the top of the cell
        # whose boundary was just crossed; counts change only on upcrossings,
        # but re-evaluating a deviation after a downcrossing is harmless (the
        # value is already attained), which keeps the common path branch-free.
        depth = nL
        for li in range(nL - 1, -1, -1):
            s = step[li]
            diff = v - last[li]
            if diff != s and diff != -s:
                break
            top = max(v, last[li]) >> shift[li]
            last[li] = v
            up = diff > 0
            if top < lo_cell[li] or top > hi_cell[li]:
                return out_dev, out_lstar, out_origin, out_pv, -1
            cnt[base[li] + top - lo_cell[li]] += up
            edge[li] = top
            is_up[li] = up
            depth = li
        if depth == nL:
            continue
        for p in range(nP):
            fl = pair_fine[p]
            if fl < depth:
                continue
            cl = pair_coarse[p]
            sh = shift[cl] - shift[fl]
            r = 1 << sh
            i = edge[fl]
            fb = base[fl] - lo_cell[fl]
            L = cnt[fb + i]
            lstar[p] = max(lstar[p], L)
            cb = base[cl] - lo_cell[cl]
            if cl >= depth and is_up[cl]:
                J = edge[cl]
                u = r * cnt[cb + J]
                best = dev[p]
                for fc in range((J - 1) * r + 1, J * r + 1):
                    best = max(best, abs(u - cnt[fb + fc]))
                dev[p] = best
            else:
                J = -((-i) >> sh)
                dev[p] = max(dev[p], abs(r * cnt[cb + J] - L))
        for li in range(depth, nL):
            if pv_on[li] and is_up[li]:
                j = edge[li]
                if pv_lo[li] <= j <= pv_hi[li]:
                    a = base[li] + pv_lo[li] - lo_cell[li]
                    val = pvar_counts(cnt[a:a + pv_hi[li] - pv_lo[li] + 1], powtab)
                    if val > pv[li]:
                        pv[li] = val
    return out_dev, out_lstar, out_origin, out_pv, n


@dataclass(frozen=True)
class EnginePlan:
    """Static description of what one path run computes."""

    levels: tuple[int, ...]              # sorted distinct levels
    pairs: tuple[tuple[int, int], ...]   # (coarse level, proxy level)
    horizons: tuple[float, ...]          # sorted
    pvar_levels: tuple[int, ...] = ()
    m: int = 1
    q: float = 3.0
    mode: str = "exact"

    @classmethod
    def build(cls, ks, proxy_offset, horizons, pvar_levels=(), m=1, q=3.0, mode="exact"):
        ks = sorted(set(int(k) for k in ks))
        pairs = tuple((k, k + int(proxy_offset)) for k in ks) if proxy_offset is not None else ()
        levels = sorted(set(ks) | {f for _, f in pairs})
        return cls(tuple(levels), pairs, tuple(sorted(float(T) for T in horizons)),
                   tuple(sorted(set(int(k) for k in pvar_levels))), int(m), float(q), mode)

    @property
    def finest(self) -> int:
        return self.levels[-1]

    def projected_steps(self) -> float:
        return self.horizons[-1] * 4.0 ** self.finest


def run_path(rng: np.random.Generator, plan: EnginePlan, law: ExitTimeLaw | None = None) -> PathResult:
    law = law or fast_law()
    levels = np.array(plan.levels, dtype=np.int64)
    idx = {L: i for i, L in enumerate(plan.levels)}
    pair_coarse = np.array([idx[c] for c, _ in plan.pairs], dtype=np.int64)
    pair_fine = np.array([idx[f] for _, f in plan.pairs], dtype=np.int64)
    horizons = np.array(plan.horizons)
    radius = RADIUS_SIGMAS * math.sqrt(plan.horizons[-1]) + 1.0
    lo_cell = np.empty(levels.size, dtype=np.int64)
    hi_cell = np.empty(levels.size, dtype=np.int64)
    pv_on = np.zeros(levels.size, dtype=np.bool_)
    pv_lo = np.zeros(levels.size, dtype=np.int64)
    pv_hi = np.zeros(levels.size, dtype=np.int64)
    for i, L in enumerate(plan.levels):
        R = int(math.ceil(radius * 2.0**L)) + 1
        lo_cell[i], hi_cell[i] = -R, R
        if L in plan.pvar_levels:
            pv_on[i] = True
            pv_lo[i], pv_hi[i] = interval_cells(L, plan.m)
            lo_cell[i] = min(lo_cell[i], pv_lo[i])
            hi_cell[i] = max(hi_cell[i], pv_hi[i])
    if plan.pvar_levels:
        top = max(plan.pvar_levels)
        powtab = np.arange(int(4 * radius * 2.0**top) + 64, dtype=float) ** plan.q
    else:
        powtab = np.zeros(1)
    h2 = 4.0 ** -plan.finest
    dev, lstar, origin, pv, n = _run_path(
        rng, levels, pair_coarse, pair_fine, horizons, h2, plan.mode != "exact",
        lo_cell, hi_cell, pv_on, pv_lo, pv_hi, plan.q, powtab, *law.kernel_args)
    if n < 0:
        raise PathRangeError(f"walk left the preallocated range +-{radius:.3g}")
    return PathResult(dev, lstar, origin, pv, int(n))
