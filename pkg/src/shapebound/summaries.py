"""Constant-time region summaries of a Bernoulli field.

``SummaryTables`` stacks several summed-area tables over the field's integer
log-odds ticks:

* the running sum of ticks (mean-summaries),
* two edge-indicator tables that count horizontally / vertically adjacent
  pixel pairs with different values (a rectangle is uniform iff both counts
  vanish inside it),
* ``2m + 1`` indicator-count tables, one per threshold
  ``t_j = -delta_max + (j - 1) * delta_max / m`` with an inclusive test
  ``delta <= t_j`` (m-summaries).

All queries are vectorised over arrays of rectangles.  The exact LCDF helpers
at the bottom of the module are oracles used to check the summary-based bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import InvalidConfigurationError, InvalidSummaryError, RegionError
from .field import TICKS_PER_DELTA_MAX, BernoulliField, ClampPolicy

DEFAULT_M = 4

_SUM, _EDGE_H, _EDGE_V, _COUNT0 = 0, 1, 2, 3


@dataclass(frozen=True)
class Region:
    x0: int
    y0: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise RegionError(f"region extent must be positive, got {self.w}x{self.h}")

    @property
    def area(self) -> int:
        return self.w * self.h

    @property
    def x1(self) -> int:
        return self.x0 + self.w

    @property
    def y1(self) -> int:
        return self.y0 + self.h

    def slices(self) -> tuple:
        return slice(self.y0, self.y1), slice(self.x0, self.x1)

    def shifted(self, dx: int, dy: int) -> "Region":
        return Region(self.x0 + dx, self.y0 + dy, self.w, self.h)

    def inside(self, width: int, height: int) -> bool:
        return self.x0 >= 0 and self.y0 >= 0 and self.x1 <= width and self.y1 <= height


@dataclass(frozen=True, eq=False)
class MSummary:
    """Threshold counts ``values[j] = |{x in region : delta(x) <= t_j}|``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.int64)
        if v.ndim != 1 or len(v) < 3 or len(v) % 2 == 0:
            raise InvalidSummaryError(f"an m-summary needs 2m+1 >= 3 entries, got {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def m(self) -> int:
        return (len(self.values) - 1) // 2

    def __len__(self):
        return len(self.values)

    def __eq__(self, other):
        if not isinstance(other, MSummary):
            return NotImplemented
        return bool(np.array_equal(self.values, other.values))

    __hash__ = None


def _sat(a: np.ndarray) -> np.ndarray:
    out = np.zeros((a.shape[0] + 1, a.shape[1] + 1), dtype=np.int64)
    np.cumsum(np.cumsum(a, axis=0, dtype=np.int64), axis=1, out=out[1:, 1:])
    return out


class SummaryTables:
    """Summed-area tables over one field, answering rectangle queries in O(1)."""

    def __init__(self, field: BernoulliField, m: int = DEFAULT_M):
        if int(m) != m or m < 1:
            raise InvalidConfigurationError(f"m must be a positive integer, got {m}")
        if TICKS_PER_DELTA_MAX % m:
            raise InvalidConfigurationError(f"m={m} does not divide the tick grid; use m <= 16 or a divisor of {TICKS_PER_DELTA_MAX}")
        self.m = int(m)
        self.field = field
        self.policy: ClampPolicy = field.policy
        self.height, self.width = field.shape
        self.step_ticks = TICKS_PER_DELTA_MAX // self.m
        self.threshold_ticks = (np.arange(2 * self.m + 1, dtype=np.int64) - self.m) * self.step_ticks

        t = field.ticks
        edge_h = np.zeros(t.shape, dtype=np.int64)
        edge_h[:, 1:] = t[:, 1:] != t[:, :-1]
        edge_v = np.zeros(t.shape, dtype=np.int64)
        edge_v[1:, :] = t[1:, :] != t[:-1, :]

        stack = np.empty((_COUNT0 + 2 * self.m + 1, self.height + 1, self.width + 1), dtype=np.int64)
        stack[_SUM] = _sat(t)
        stack[_EDGE_H] = _sat(edge_h)
        stack[_EDGE_V] = _sat(edge_v)
        for j, thr in enumerate(self.threshold_ticks):
            stack[_COUNT0 + j] = _sat((t <= thr).astype(np.int64))
        stack.setflags(write=False)
        self._stack = stack
        # row offsets so that edge tables skip the first column / row of a rectangle
        self._dx = np.zeros(len(stack), dtype=np.int64)
        self._dy = np.zeros(len(stack), dtype=np.int64)
        self._dx[_EDGE_H] = 1
        self._dy[_EDGE_V] = 1
        self._layers = np.arange(len(stack))[:, None]

        total = int(stack[_SUM, -1, -1])
        if total != int(t.sum(dtype=np.int64)):
            raise AssertionError("summed-area table disagrees with the direct tick sum")
        direct = float(np.sum(field.delta))
        as_float = self.policy.from_ticks(total)
        if abs(as_float - direct) > 1e-6 * max(1.0, abs(direct)):
            raise AssertionError("tick quantisation drifted from the float field sum")

    @property
    def delta_max(self) -> float:
        return self.policy.delta_max

    @property
    def thresholds(self) -> np.ndarray:
        return self.threshold_ticks * (self.delta_max / TICKS_PER_DELTA_MAX)

    def check(self, r: Region) -> None:
        if not r.inside(self.width, self.height):
            raise RegionError(f"{r} lies outside the {self.width}x{self.height} grid")

    def query(self, xs, ys, ws, hs):
        """Summaries for rectangles given as equal-length integer arrays.

        Returns ``(sums, counts, uniform, first)``: tick sums of shape (n,),
        threshold counts of shape (2m+1, n), a uniformity mask, and the tick
        value at each rectangle's top-left pixel.
        """
        xs = np.asarray(xs, dtype=np.int64)
        ys = np.asarray(ys, dtype=np.int64)
        x1 = xs + np.asarray(ws, dtype=np.int64)
        y1 = ys + np.asarray(hs, dtype=np.int64)
        s = self._stack
        X0 = xs + self._dx[:, None]
        Y0 = ys + self._dy[:, None]
        L = self._layers
        out = s[L, y1, x1] - s[L, Y0, x1] - s[L, y1, X0] + s[L, Y0, X0]
        uniform = (out[_EDGE_H] == 0) & (out[_EDGE_V] == 0)
        first = self.field.ticks[ys, xs]
        return out[_SUM], out[_COUNT0:], uniform, first

    def sum_ticks(self, r: Region) -> int:
        self.check(r)
        return int(self.query([r.x0], [r.y0], [r.w], [r.h])[0][0])

    def is_uniform(self, r: Region) -> bool:
        self.check(r)
        return bool(self.query([r.x0], [r.y0], [r.w], [r.h])[2][0])


def build_tables(field: BernoulliField, m: int = DEFAULT_M) -> SummaryTables:
    return SummaryTables(field, m)


def mean_summary(tables: SummaryTables, r: Region) -> float:
    """Sum of log-odds over ``r`` (the integral, not the average)."""
    return tables.policy.from_ticks(tables.sum_ticks(r))


def m_summary(tables: SummaryTables, r: Region) -> MSummary:
    tables.check(r)
    return MSummary(tables.query([r.x0], [r.y0], [r.w], [r.h])[1][:, 0])


# ---------------------------------------------------------------------------
# exact LCDF oracles


@dataclass(frozen=True, eq=False)
class Lcdf:
    """Sorted log-odds ticks of one region plus its negative-value area."""

    ticks: np.ndarray
    tick: float
    crossing_area: int

    @property
    def area(self) -> int:
        return len(self.ticks)

    @property
    def values(self) -> np.ndarray:
        return self.ticks * self.tick


def lcdf_exact(field: BernoulliField, r: Region) -> Lcdf:
    if not r.inside(field.width, field.height):
        raise RegionError(f"{r} lies outside the {field.width}x{field.height} grid")
    t = np.sort(field.ticks[r.slices()].ravel())
    return Lcdf(ticks=t, tick=field.policy.tick, crossing_area=int(np.count_nonzero(t < 0)))


def lcdf_from_ticks(ticks, policy: ClampPolicy) -> Lcdf:
    t = np.sort(np.asarray(ticks, dtype=np.int64).ravel())
    return Lcdf(ticks=t, tick=policy.tick, crossing_area=int(np.count_nonzero(t < 0)))


def top_mass_ticks(lcdf: Lcdf, s) -> Fraction:
    """Largest possible tick integral over a shape of mass ``s`` inside the region."""
    s = Fraction(s)
    if s < 0 or s > lcdf.area:
        raise RegionError(f"mass {s} outside [0, {lcdf.area}]")
    whole = math.floor(s)
    frac = s - whole
    desc = lcdf.ticks[::-1]
    total = Fraction(int(desc[:whole].sum(dtype=np.int64)))
    if frac:
        total += frac * int(desc[whole])
    return total


def top_mass_integral(lcdf: Lcdf, s: float) -> float:
    return float(top_mass_ticks(lcdf, s) * Fraction(lcdf.tick))


def inverse_upper_ticks(counts, alpha, m: int) -> Fraction:
    """Integral over ``[alpha, area]`` of the step majorant of the inverse LCDF.

    On ``(Y[k-1], Y[k]]`` fewer than ``k`` counts lie below ``a``, so the
    inverse LCDF there is at most ``t_k``; ``Y[-1]`` is read as 0.
    """
    y = [int(v) for v in np.asarray(counts).ravel()]
    if len(y) != 2 * m + 1:
        raise InvalidSummaryError(f"expected {2 * m + 1} counts, got {len(y)}")
    area = y[-1]
    alpha = Fraction(alpha)
    if alpha < 0 or alpha > area:
        raise RegionError(f"alpha {alpha} outside [0, {area}]")
    step = TICKS_PER_DELTA_MAX // m
    total = Fraction(0)
    lo = 0
    for k, hi in enumerate(y):
        a = max(Fraction(lo), alpha)
        if hi > a:
            total += (hi - a) * (k - m) * step
        lo = hi
    return total


def integrate_inverse_upper(ms: MSummary, alpha: float, m: int, delta_max: float, area: int) -> float:
    if len(ms) != 2 * m + 1:
        raise InvalidSummaryError(f"summary length {len(ms)} does not match m={m}")
    if int(ms.values[-1]) != area:
        raise InvalidSummaryError("last summary count must equal the region area")
    return float(inverse_upper_ticks(ms.values, alpha, m) * Fraction(delta_max) / TICKS_PER_DELTA_MAX)
