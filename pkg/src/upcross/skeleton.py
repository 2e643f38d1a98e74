"""Dyadic crossing skeletons of a Brownian path.

A level-``k`` skeleton records the successive times at which the path has
moved by ``2**-k`` since the previous recorded time, together with the sign
of each move.  Values are kept as integers in units of ``2**-k``; nothing
about grid membership is ever decided in floating point.

Times are stored directly (not re-derived from durations) so a coarsened
skeleton's times are an exact subsequence of the finer skeleton's times.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numba as nb
import numpy as np

from .exit_law import ExitTimeLaw, default_law, step_from_uniform

MODES = ("exact", "deterministic-durations")


@dataclass(frozen=True)
class CrossingSkeleton:
    """Level-``level`` walk: times ``T_1 < T_2 < ...`` and signs ``eta_n``.

    ``start`` is the initial value in units of ``2**-level``.  ``T_0 = 0`` is
    implicit.  The last time is at or beyond ``horizon``; queries are only
    answered on ``[0, horizon]``.
    """

    level: int
    start: int
    times: np.ndarray
    signs: np.ndarray
    horizon: float

    def __post_init__(self):
        if self.times.shape != self.signs.shape:
            raise ValueError("times and signs must have the same length")

    @property
    def h(self) -> float:
        return 2.0 ** -self.level

    @property
    def x0(self) -> float:
        return self.start * self.h

    @property
    def n_steps(self) -> int:
        return int(self.times.size)

    @property
    def values(self) -> np.ndarray:
        """``V_0, ..., V_N`` in units of ``2**-level`` (int64)."""
        out = np.empty(self.n_steps + 1, dtype=np.int64)
        out[0] = self.start
        np.cumsum(self.signs, out=out[1:], dtype=np.int64)
        out[1:] += self.start
        return out

    @property
    def durations(self) -> np.ndarray:
        return np.diff(self.times, prepend=0.0)

    def _check_time(self, t: float):
        if not (0.0 <= t <= self.horizon):
            raise ValueError(f"t={t} outside [0, {self.horizon}]")

    def step_count_at(self, t: float) -> int:
        """``N(t) = max{n : T_n <= t}``."""
        self._check_time(t)
        return int(np.searchsorted(self.times, t, side="right"))

    def walk_value_at(self, t: float) -> float:
        """Right-continuous walk value ``x0 + A(t)``."""
        n = self.step_count_at(t)
        return (self.start + int(self.signs[:n].sum(dtype=np.int64))) * self.h

    def shift_tail(self, n: int) -> "CrossingSkeleton":
        """Restart at step ``n``: new origin ``T_n``, new start ``V_n``."""
        if not 0 <= n <= self.n_steps:
            raise IndexError(f"step index {n} outside [0, {self.n_steps}]")
        t_n = self.times[n - 1] if n > 0 else 0.0
        v_n = self.start + int(self.signs[:n].sum(dtype=np.int64))
        return CrossingSkeleton(
            level=self.level,
            start=v_n,
            times=self.times[n:] - t_n,
            signs=self.signs[n:].copy(),
            horizon=self.horizon - t_n,
        )


@nb.njit(cache=True, nogil=True)
def _fill_steps(rng, h2, horizon, t0, deterministic, times, signs,
                poly, u_lo, du, tol, crossover, newton_steps):
    t = t0
    n = 0
    while n < times.size and t < horizon:
        sign, d = step_from_uniform(rng.random(), h2, deterministic, poly, u_lo, du,
                                      tol, crossover, newton_steps)
        t += d
        times[n] = t
        signs[n] = sign
        n += 1
    return n, t


def iter_steps(rng: np.random.Generator, level: int, horizon: float, *,
               law: ExitTimeLaw | None = None, mode: str = "exact",
               chunk: int = 1 << 16):
    """Yield ``(times, signs)`` chunks until the first time reaching ``horizon``."""
    if level < 1:
        raise ValueError("level must be >= 1")
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    law = law or default_law()
    h2 = 4.0 ** -level
    t = 0.0
    while t < horizon:
        times = np.empty(chunk)
        signs = np.empty(chunk, dtype=np.int8)
        n, t = _fill_steps(rng, h2, horizon, t, mode != "exact", times, signs,
                           *law.kernel_args)
        yield times[:n], signs[:n]


def generate_skeleton(rng: np.random.Generator, level: int, x0: float, horizon: float, *,
                      law: ExitTimeLaw | None = None, mode: str = "exact") -> CrossingSkeleton:
    scaled = x0 * 2.0**level
    if not math.isfinite(scaled) or scaled != math.floor(scaled):
        raise ValueError(f"x0={x0} is not a multiple of 2^-{level}")
    expected = int(horizon * 4.0**level)
    chunk = max(1024, expected + 8 * int(math.sqrt(expected + 1)) + 64)
    parts = list(iter_steps(rng, level, horizon, law=law, mode=mode, chunk=chunk))
    times = np.concatenate([p[0] for p in parts])
    signs = np.concatenate([p[1] for p in parts])
    return CrossingSkeleton(level=level, start=int(scaled), times=times, signs=signs,
                            horizon=float(horizon))


@nb.njit(cache=True)
def _coarsen_indices(start, signs, r):
    out = np.empty(signs.size, dtype=np.int64)
    out_signs = np.empty(signs.size, dtype=np.int8)
    v = start
    last = start
    m = 0
    for n in range(signs.size):
        v += signs[n]
        if v - last == r:
            out[m] = n
            out_signs[m] = 1
            m += 1
            last = v
        elif last - v == r:
            out[m] = n
            out_signs[m] = -1
            m += 1
            last = v
    return out[:m], out_signs[:m]


def coarsen(s: CrossingSkeleton, level: int) -> CrossingSkeleton:
    """Level-``level`` skeleton embedded in ``s`` (``level <= s.level``)."""
    if level > s.level:
        raise ValueError(f"cannot coarsen level {s.level} to finer level {level}")
    if level < 1:
        raise ValueError("level must be >= 1")
    r = 1 << (s.level - level)
    if s.start % r:
        raise ValueError(f"start value not aligned to level {level}")
    if r == 1:
        return s
    idx, signs = _coarsen_indices(s.start, s.signs, r)
    return CrossingSkeleton(level=level, start=s.start // r, times=s.times[idx],
                            signs=signs, horizon=s.horizon)


# --- debug dump ------------------------------------------------------------
#
# Little-endian layout, version 1:
#   magic  4s   b"UPXS"
#   ver    u16  1
#   level  u16
#   start  i64  start value in units of 2**-level
#   count  i64  number of steps
#   horiz  f64
#   durations  count x f64
#   signs      count x i8
# Times are restored by cumulative summation of durations, so they may differ
# from the originals in the last bits.

_DUMP_MAGIC = b"UPXS"
_DUMP_VERSION = 1
_HEADER = struct.Struct("<4sHHqqd")


def dump_skeleton(s: CrossingSkeleton, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_DUMP_MAGIC, _DUMP_VERSION, s.level, s.start, s.n_steps, s.horizon))
        fh.write(s.durations.astype("<f8").tobytes())
        fh.write(s.signs.astype("i1").tobytes())


def load_skeleton(path) -> CrossingSkeleton:
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, ver, level, start, count, horizon = _HEADER.unpack_from(buf)
    if magic != _DUMP_MAGIC or ver != _DUMP_VERSION:
        raise ValueError("not a version-1 skeleton dump")
    off = _HEADER.size
    durations = np.frombuffer(buf, dtype="<f8", count=count, offset=off)
    signs = np.frombuffer(buf, dtype="i1", count=count, offset=off + 8 * count).astype(np.int8)
    return CrossingSkeleton(level=level, start=start, times=np.cumsum(durations),
                            signs=signs, horizon=horizon)
