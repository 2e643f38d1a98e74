"""Upcrossing counts of a crossing skeleton and the estimator ``U^k``."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from .skeleton import CrossingSkeleton


def level_index(x: float, k: int) -> int:
    """The integer ``j`` with ``(j-1) 2^-k < x <= j 2^-k``."""
    if not math.isfinite(x):
        raise ValueError("x must be finite")
    # scaling by a power of two is exact, so dyadic boundaries land exactly
    return int(math.ceil(x * 2.0**k))


@dataclass(frozen=True)
class UpcrossingField:
    """Completion times of upcrossings ``(j-1) 2^-k -> j 2^-k``, per ``j``.

    ``event_times``/``event_cells`` list all upcrossings in time order;
    ``cell_times[offsets[j - j_min]:offsets[j - j_min + 1]]`` are the times
    for cell ``j`` in increasing order.
    """

    level: int
    start: int
    horizon: float
    j_min: int
    j_max: int
    event_times: np.ndarray
    event_cells: np.ndarray
    cell_times: np.ndarray
    offsets: np.ndarray
    n_down: int

    @property
    def n_up(self) -> int:
        return int(self.event_times.size)

    @property
    def unit(self) -> float:
        """Local-time weight of one upcrossing, ``2 * 2^-k``."""
        return 2.0 * 2.0 ** -self.level

    def times_for(self, j: int) -> np.ndarray:
        if j < self.j_min or j > self.j_max:
            return self.cell_times[:0]
        i = j - self.j_min
        return self.cell_times[self.offsets[i]:self.offsets[i + 1]]

    def _check_time(self, t: float):
        if not (0.0 <= t <= self.horizon):
            raise ValueError(f"t={t} outside [0, {self.horizon}]")

    def upcrossings_before(self, j: int, t: float) -> int:
        """``u(j 2^-k, k, t)``: upcrossings into ``j`` completed at times ``<= t``."""
        self._check_time(t)
        return int(np.searchsorted(self.times_for(j), t, side="right"))

    def U_value(self, t: float, x: float) -> float:
        return self.unit * self.upcrossings_before(level_index(x, self.level), t)

    def counts_at(self, t: float) -> np.ndarray:
        """Counts for every cell ``j_min..j_max`` at time ``t``."""
        self._check_time(t)
        n = int(np.searchsorted(self.event_times, t, side="right"))
        size = self.j_max - self.j_min + 1 if self.j_max >= self.j_min else 0
        return np.bincount(self.event_cells[:n] - self.j_min, minlength=size)[:size]


@nb.njit(cache=True)
def _bucket(cells, times, j_min, size):
    """Counting sort of ``times`` by cell, stable within each cell."""
    offsets = np.zeros(size + 1, dtype=np.int64)
    for c in cells:
        offsets[c - j_min + 1] += 1
    for i in range(size):
        offsets[i + 1] += offsets[i]
    fill = offsets[:-1].copy()
    out = np.empty(times.size)
    for e in range(cells.size):
        i = cells[e] - j_min
        out[fill[i]] = times[e]
        fill[i] += 1
    return out, offsets


def build_field(s: CrossingSkeleton) -> UpcrossingField:
    values = s.values
    up = np.flatnonzero(s.signs > 0)
    cells = values[up + 1]
    times = s.times[up]
    if cells.size:
        j_min, j_max = int(cells.min()), int(cells.max())
    else:
        j_min, j_max = int(values[0]) + 1, int(values[0])
    size = max(j_max - j_min + 1, 0)
    cells = cells.astype(np.int64)
    cell_times, offsets = _bucket(cells, times, j_min, size)
    return UpcrossingField(
        level=s.level,
        start=s.start,
        horizon=s.horizon,
        j_min=j_min,
        j_max=j_max,
        event_times=times,
        event_cells=cells,
        cell_times=cell_times,
        offsets=offsets,
        n_down=int(s.n_steps - up.size),
    )
