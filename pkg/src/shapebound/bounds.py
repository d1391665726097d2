"""Evidence bounds for one hypothesis and their incremental refinement.

For a partition of the hypothesis support into rectangles, every element gets

* a lower bound ``max(0, Sf + Sh)`` from the region sums of the two fields
  (a shape that is constant on the element), and
* an upper bound from the two m-summaries: merge the threshold counts,
  which amounts to pairing the sorted, upward-rounded log-odds of both fields
  value by value, and integrate ``max(0, f + h)`` over that pairing.

When one of the two fields is uniform on an element its exact value replaces
the rounded one, which makes the bound tight whenever both fields are uniform.

All arithmetic runs on the integer ticks of :mod:`shapebound.field`, so totals
are exact and the bounds are exactly one-sided.  ``HypothesisBounds`` keeps the
current leaves and splits the one with (nearly) the greatest margin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidConfigurationError, InvalidHypothesisError, InvalidSummaryError
from .field import TICKS_PER_DELTA_MAX, BernoulliField
from .pgm import save_mask, write_pgm
from .summaries import MSummary, Region, SummaryTables

DEFAULT_RHO = 1.2
MARGIN_FLOOR = 1e-6  # in units of delta_max


def _merge(counts_f: np.ndarray, counts_h: np.ndarray) -> np.ndarray:
    """Ascending merge of two (2m+1, n) count stacks into (4m+2, n)."""
    return np.sort(np.concatenate([counts_f, counts_h], axis=0), axis=0)


def _upper_steps(merged: np.ndarray, m: int) -> np.ndarray:
    """Weighted sum ``sum_{i=0..2m} (i+1) * (Y[2m+1+i] - Y[2m+i])``."""
    diffs = merged[2 * m + 1 :] - merged[2 * m : -1]
    weights = np.arange(1, 2 * m + 2, dtype=np.int64)
    return weights @ diffs if diffs.ndim == 2 else int(weights @ diffs)


def local_upper(msum_f: MSummary, msum_h: MSummary, m: int, delta_max: float) -> float:
    """Upper bound on ``sum max(0, df + dh)`` over an element, from summaries only."""
    if len(msum_f) != 2 * m + 1 or len(msum_h) != 2 * m + 1:
        raise InvalidSummaryError(f"summaries must have {2 * m + 1} entries, got {len(msum_f)} and {len(msum_h)}")
    if msum_f.values[-1] != msum_h.values[-1]:
        raise InvalidSummaryError("summaries describe regions of different area")
    merged = np.sort(np.concatenate([msum_f.values, msum_h.values]))
    return delta_max / m * _upper_steps(merged, m)


def local_lower(mean_f: float, mean_h: float) -> tuple:
    s = mean_f + mean_h
    return (s, 1) if s > 0 else (0, 0)


def merged_summary(msum_f: MSummary, msum_h: MSummary) -> np.ndarray:
    return np.sort(np.concatenate([msum_f.values, msum_h.values]))


def _check_pair(img: SummaryTables, pri: SummaryTables) -> None:
    if img.m != pri.m:
        raise InvalidConfigurationError(f"image and prior tables use different m ({img.m} vs {pri.m})")
    if img.policy.delta_max != pri.policy.delta_max:
        raise InvalidConfigurationError("image and prior fields use different delta_max")


def element_bounds(img: SummaryTables, pri: SummaryTables, xs, ys, px, py, ws, hs):
    """Vectorised local bounds for rectangles at image ``(xs, ys)`` / prior ``(px, py)``.

    Returns ``(sum_f, sum_h, lower, upper)`` as int64 tick arrays.
    """
    sf, cf, uf, vf = img.query(xs, ys, ws, hs)
    sh, ch, uh, vh = pri.query(px, py, ws, hs)
    m = img.m
    lower = np.maximum(sf + sh, 0)
    upper = _upper_steps(_merge(cf, ch), m) * img.step_ticks
    if uf.any() or uh.any():
        thr = img.threshold_ticks[:, None]
        if uh.any():
            per_level = np.diff(cf, axis=0, prepend=0)
            alt = (per_level * np.maximum(thr + vh, 0)).sum(axis=0)
            upper = np.where(uh, np.minimum(upper, alt), upper)
        if uf.any():
            per_level = np.diff(ch, axis=0, prepend=0)
            alt = (per_level * np.maximum(thr + vf, 0)).sum(axis=0)
            upper = np.where(uf, np.minimum(upper, alt), upper)
        both = uf & uh
        if both.any():
            area = np.asarray(ws, dtype=np.int64) * np.asarray(hs, dtype=np.int64)
            upper = np.where(both, area * np.maximum(vf + vh, 0), upper)
    return sf, sh, lower, upper


class MarginQueue:
    """Untidy bucket queue: O(1) insert, amortised O(1) approximate get-max.

    Bucket ``j >= 1`` holds margins in ``[floor * rho**(j-1), floor * rho**j)``;
    bucket 0 holds everything below ``floor`` and the last bucket everything
    above ``ceiling``.  Pops within a bucket are LIFO.
    """

    def __init__(self, m_floor: float, ceiling: float, rho: float = DEFAULT_RHO):
        if rho <= 1:
            raise InvalidConfigurationError(f"rho must exceed 1, got {rho}")
        if not 0 < m_floor < ceiling:
            raise InvalidConfigurationError("need 0 < m_floor < ceiling")
        self.rho = rho
        self.m_floor = float(m_floor)
        self._log_rho = math.log(rho)
        n = int(math.ceil(math.log(ceiling / m_floor) / self._log_rho)) + 2
        self.buckets = [[] for _ in range(n)]
        self.j_max = 0
        self._size = 0

    def __len__(self):
        return self._size

    def bucket_of(self, margin) -> int:
        if margin < self.m_floor:
            return 0
        j = int(math.log(margin / self.m_floor) / self._log_rho) + 1
        return min(j, len(self.buckets) - 1)

    def insert(self, item, margin) -> None:
        j = self.bucket_of(margin)
        self.buckets[j].append((margin, item))
        self._size += 1
        if j > self.j_max:
            self.j_max = j

    def pop_max(self):
        """Return ``(margin, item)`` from the highest nonempty bucket."""
        if not self._size:
            raise IndexError("pop from an empty margin queue")
        b = self.buckets
        j = self.j_max
        while not b[j]:
            j -= 1
        out = b[j].pop()
        self._size -= 1
        while j > 0 and not b[j]:
            j -= 1
        self.j_max = j
        return out


@dataclass(frozen=True)
class ElementRecord:
    region_img: Region
    region_pri: Region
    mean_f: float
    mean_h: float
    msum_f: MSummary
    msum_h: MSummary
    local_lower: float
    local_upper: float
    resolved: bool


@dataclass(frozen=True)
class RefinementDelta:
    region: Region
    children: int
    lower_before: int
    lower_after: int
    upper_before: int
    upper_after: int


@dataclass(frozen=True)
class DiscreteShape:
    regions: tuple
    labels: tuple

    def rasterize(self, width: int, height: int) -> np.ndarray:
        mask = np.zeros((height, width), dtype=bool)
        for r, q in zip(self.regions, self.labels):
            if q:
                mask[r.slices()] = True
        return mask

    def save(self, path, width: int, height: int):
        return save_mask(path, self.rasterize(width, height))


@dataclass(frozen=True)
class SemidiscreteShape:
    regions: tuple
    intervals: tuple  # (lo, hi) coverage per leaf, in pixels

    @property
    def coverage(self) -> tuple:
        return tuple(lo for lo, _ in self.intervals)

    def rasterize(self, width: int, height: int) -> np.ndarray:
        """Covered fraction of each pixel's leaf, zero outside the support."""
        out = np.zeros((height, width), dtype=np.float64)
        for r, (lo, _) in zip(self.regions, self.intervals):
            out[r.slices()] = lo / r.area
        return out

    def save(self, path, width: int, height: int):
        write_pgm(path, np.rint(self.rasterize(width, height) * 65535).astype(np.int64), 65535)
        return path


# leaf layout: [x, y, w, h, sum_f, sum_h, lower, upper]
_X, _Y, _W, _H, _SF, _SH, _LO, _UP = range(8)


class HypothesisBounds:
    """Partition of one hypothesis' support with exact lower/upper totals.

    ``lower`` and ``upper`` are integer ticks; ``lower_total``/``upper_total``
    report the same values in log-odds units.  Image coordinates of a leaf
    are its prior coordinates plus ``(dx, dy)``.
    """

    def __init__(self, hyp_id, img: SummaryTables, pri: SummaryTables, dx: int, dy: int, z_ticks: int, root, rho: float = DEFAULT_RHO):
        self.hyp_id = hyp_id
        self.img = img
        self.pri = pri
        self.dx = int(dx)
        self.dy = int(dy)
        self.z_ticks = int(z_ticks)
        self.rho = rho
        self.m_floor = max(1, math.ceil(MARGIN_FLOOR * TICKS_PER_DELTA_MAX))
        self.leaves = {0: list(root)}
        self._next_id = 1
        self._queue: Optional[MarginQueue] = None
        self.lower = self.z_ticks + int(root[_LO])
        self.upper = self.z_ticks + int(root[_UP])
        self.bound_pairs = 1
        self.n_refinements = 0
        self.fully_refined = self._resolved(root)

    # -- reporting in log-odds units
    @property
    def tick(self) -> float:
        return self.img.policy.tick

    @property
    def lower_total(self) -> float:
        return self.img.policy.from_ticks(self.lower)

    @property
    def upper_total(self) -> float:
        return self.img.policy.from_ticks(self.upper)

    @property
    def margin(self) -> int:
        return self.upper - self.lower

    @property
    def z_h(self) -> float:
        return self.img.policy.from_ticks(self.z_ticks)

    @property
    def support(self) -> Region:
        return Region(self.dx, self.dy, self.pri.width, self.pri.height)

    def _resolved(self, leaf) -> bool:
        return (leaf[_W] == 1 and leaf[_H] == 1) or leaf[_UP] - leaf[_LO] <= self.m_floor

    def _ensure_queue(self) -> MarginQueue:
        if self._queue is None:
            area = sum(l[_W] * l[_H] for l in self.leaves.values())
            self._queue = MarginQueue(self.m_floor, 2.0 * TICKS_PER_DELTA_MAX * area, self.rho)
            for k, leaf in self.leaves.items():
                if not self._resolved(leaf):
                    self._queue.insert(k, leaf[_UP] - leaf[_LO])
        return self._queue

    def refine_once(self) -> Optional[RefinementDelta]:
        """Split the leaf with (nearly) the greatest margin; None when nothing is left."""
        if self.fully_refined:
            return None
        q = self._ensure_queue()
        if not len(q):
            self.fully_refined = True
            return None
        _, key = q.pop_max()
        parent = self.leaves.pop(key)
        x, y, w, h = parent[:4]
        xs, ys, ws, hs = _split(x, y, w, h)
        xs = np.asarray(xs, dtype=np.int64)
        ys = np.asarray(ys, dtype=np.int64)
        sf, sh, lo, up = element_bounds(self.img, self.pri, xs, ys, xs - self.dx, ys - self.dy, ws, hs)
        lo_sum = int(lo.sum())
        up_sum = int(up.sum())
        if lo_sum < parent[_LO] or up_sum > parent[_UP]:
            raise AssertionError(f"refinement loosened bounds on leaf {parent[:4]}")
        lower_before, upper_before = self.lower, self.upper
        self.lower += lo_sum - int(parent[_LO])
        self.upper += up_sum - int(parent[_UP])
        if self.lower - lower_before != lo_sum - parent[_LO]:
            raise AssertionError("lower total not conserved")
        for i in range(len(ws)):
            leaf = [int(xs[i]), int(ys[i]), ws[i], hs[i], int(sf[i]), int(sh[i]), int(lo[i]), int(up[i])]
            k = self._next_id
            self._next_id += 1
            self.leaves[k] = leaf
            if not self._resolved(leaf):
                q.insert(k, leaf[_UP] - leaf[_LO])
        self.bound_pairs += len(ws)
        self.n_refinements += 1
        if not len(q):
            self.fully_refined = True
        return RefinementDelta(Region(x, y, w, h), len(ws), lower_before, self.lower, upper_before, self.upper)

    def refine_until_done(self, limit: Optional[int] = None) -> int:
        n = 0
        while (limit is None or n < limit) and self.refine_once() is not None:
            n += 1
        return n

    def recompute_totals(self) -> tuple:
        lo = self.z_ticks + sum(l[_LO] for l in self.leaves.values())
        up = self.z_ticks + sum(l[_UP] for l in self.leaves.values())
        return lo, up

    def leaf_regions(self) -> list:
        return [Region(*l[:4]) for _, l in sorted(self.leaves.items())]

    def records(self) -> list:
        """Full per-leaf records, summaries included (slow path)."""
        out = []
        pol = self.img.policy
        for _, l in sorted(self.leaves.items()):
            r = Region(*l[:4])
            _, cf, _, _ = self.img.query([r.x0], [r.y0], [r.w], [r.h])
            _, ch, _, _ = self.pri.query([r.x0 - self.dx], [r.y0 - self.dy], [r.w], [r.h])
            out.append(
                ElementRecord(
                    region_img=r,
                    region_pri=r.shifted(-self.dx, -self.dy),
                    mean_f=pol.from_ticks(l[_SF]),
                    mean_h=pol.from_ticks(l[_SH]),
                    msum_f=MSummary(cf[:, 0]),
                    msum_h=MSummary(ch[:, 0]),
                    local_lower=pol.from_ticks(l[_LO]),
                    local_upper=pol.from_ticks(l[_UP]),
                    resolved=self._resolved(l),
                )
            )
        return out


def _split(x, y, w, h):
    w1, h1 = (w + 1) // 2, (h + 1) // 2
    if w == 1:
        return [x, x], [y, y + h1], [1, 1], [h1, h - h1]
    if h == 1:
        return [x, x + w1], [y, y], [w1, w - w1], [1, 1]
    return (
        [x, x + w1, x, x + w1],
        [y, y, y + h1, y + h1],
        [w1, w - w1, w1, w - w1],
        [h1, h1, h - h1, h - h1],
    )


def _support(hyp) -> Region:
    return hyp if isinstance(hyp, Region) else hyp.support_img


def _check_support(img: SummaryTables, pri: SummaryTables, r: Region) -> None:
    if not r.inside(img.width, img.height):
        raise InvalidHypothesisError(f"support {r} exceeds the {img.width}x{img.height} image")
    if (r.w, r.h) != (pri.width, pri.height):
        raise InvalidHypothesisError(f"support {r.w}x{r.h} does not match the {pri.width}x{pri.height} prior")


def init_many(img: SummaryTables, pri: SummaryTables, hyps, z_ticks: Optional[int] = None, rho: float = DEFAULT_RHO) -> list:
    """Root bounds for many hypotheses sharing one transformed prior, in one query."""
    _check_pair(img, pri)
    hyps = list(hyps)
    if not hyps:
        return []
    if z_ticks is None:
        z_ticks = pri.field.z_ticks
    sup = [_support(h) for h in hyps]
    for r in sup:
        _check_support(img, pri, r)
    w, h = pri.width, pri.height
    xs = np.array([r.x0 for r in sup], dtype=np.int64)
    ys = np.array([r.y0 for r in sup], dtype=np.int64)
    n = len(sup)
    sf, sh, lo, up = element_bounds(
        img, pri, xs, ys, np.zeros(n, np.int64), np.zeros(n, np.int64), np.full(n, w, np.int64), np.full(n, h, np.int64)
    )
    out = []
    for i, hyp in enumerate(hyps):
        hid = hyp.id if hasattr(hyp, "id") else i
        root = [int(xs[i]), int(ys[i]), w, h, int(sf[i]), int(sh[i]), int(lo[i]), int(up[i])]
        out.append(HypothesisBounds(hid, img, pri, int(xs[i]), int(ys[i]), z_ticks, root, rho))
    return out


def init_bounds(img: SummaryTables, pri: SummaryTables, hyp, z_h: Optional[int] = None, rho: float = DEFAULT_RHO) -> HypothesisBounds:
    """Bounds with a single leaf covering the support.  ``z_h`` is in ticks."""
    return init_many(img, pri, [hyp], z_h, rho)[0]


def extract_discrete_shape(b: HypothesisBounds) -> DiscreteShape:
    regions, labels = [], []
    for _, l in sorted(b.leaves.items()):
        regions.append(Region(*l[:4]))
        labels.append(1 if l[_SF] + l[_SH] > 0 else 0)
    return DiscreteShape(tuple(regions), tuple(labels))


def extract_semidiscrete_shape(b: HypothesisBounds) -> SemidiscreteShape:
    m = b.img.m
    regions, intervals = [], []
    for _, l in sorted(b.leaves.items()):
        r = Region(*l[:4])
        _, cf, _, _ = b.img.query([r.x0], [r.y0], [r.w], [r.h])
        _, ch, _, _ = b.pri.query([r.x0 - b.dx], [r.y0 - b.dy], [r.w], [r.h])
        merged = _merge(cf, ch)[:, 0]
        regions.append(r)
        intervals.append((int(r.area - merged[2 * m]), int(r.area - merged[2 * m - 1])))
    return SemidiscreteShape(tuple(regions), tuple(intervals))


def _evidence_inputs(img_field: BernoulliField, prior_field: BernoulliField, hyp) -> tuple:
    r = _support(hyp)
    if not r.inside(img_field.width, img_field.height):
        raise InvalidHypothesisError(f"support {r} exceeds the {img_field.width}x{img_field.height} image")
    if prior_field.shape != (r.h, r.w):
        raise InvalidHypothesisError(f"prior shape {prior_field.shape} does not match support {r.w}x{r.h}")
    return r.slices()


def exact_evidence_ticks(img_field: BernoulliField, prior_field: BernoulliField, hyp) -> int:
    """``Z_H + sum_support max(0, df + dh)`` in ticks, by a full pixel scan."""
    sl = _evidence_inputs(img_field, prior_field, hyp)
    s = img_field.ticks[sl] + prior_field.ticks
    return int(prior_field.z_ticks) + int(np.maximum(s, 0).sum())


def exact_evidence(img_field: BernoulliField, prior_field: BernoulliField, hyp) -> float:
    sl = _evidence_inputs(img_field, prior_field, hyp)
    return float(prior_field.z_term + np.maximum(img_field.delta[sl] + prior_field.delta, 0.0).sum())
