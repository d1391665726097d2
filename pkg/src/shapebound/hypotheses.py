"""Hypothesis space: prior classes, scale+translate poses, and prior learning.

A hypothesis is a prior class plus an axis scaling ``(sx, sy)`` and an integer
translation ``(tx, ty)``.  Scaling resamples the prior once per
``(class, sx, sy)``; translation never touches pixel data and only offsets the
table queries, so every translation of one scaled prior shares one
``TransformedPrior``.
"""

from __future__ import annotations

import itertools
import json
import math
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    EmptyHypothesisSpaceError,
    InvalidConfigurationError,
    InvalidInputError,
    InvalidScaleError,
)
from .field import BernoulliField, ClampPolicy, ProbabilityImage, from_probabilities
from .pgm import load_probability_image, save_probability_image
from .summaries import DEFAULT_M, Region, SummaryTables, build_tables


@dataclass(frozen=True)
class ScaleTranslate:
    sx: float = 1.0
    sy: float = 1.0
    tx: int = 0
    ty: int = 0

    def __post_init__(self):
        if not (self.sx > 0 and self.sy > 0):
            raise InvalidScaleError(f"scales must be positive, got ({self.sx}, {self.sy})")


def scaled_extent(w: int, h: int, sx: float, sy: float) -> tuple:
    if not (sx > 0 and sy > 0):
        raise InvalidScaleError(f"scales must be positive, got ({sx}, {sy})")
    out = (int(math.floor(sx * w + 0.5)), int(math.floor(sy * h + 0.5)))
    if min(out) < 1:
        raise InvalidScaleError(f"scaling {w}x{h} by ({sx}, {sy}) leaves no pixels")
    return out


def _bbox(mask: np.ndarray) -> Optional[Region]:
    ys, xs = np.nonzero(mask)
    if not len(xs):
        return None
    return Region(int(xs.min()), int(ys.min()), int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1))


@dataclass(frozen=True)
class PriorClass:
    """A class prior; ``prior`` is zero outside ``support``."""

    class_id: str
    prior: ProbabilityImage
    support: Optional[Region] = None

    def __post_init__(self):
        p = self.prior.p
        sup = self.support
        if sup is None:
            sup = _bbox(p > 0) or Region(0, 0, self.prior.width, self.prior.height)
            object.__setattr__(self, "support", sup)
        if not sup.inside(self.prior.width, self.prior.height):
            raise InvalidInputError(f"support {sup} lies outside the prior grid")
        outside = np.ones(p.shape, dtype=bool)
        outside[sup.slices()] = False
        if np.any(p[outside] != 0):
            raise InvalidInputError(f"prior {self.class_id!r} is nonzero outside its support")

    def cropped(self) -> np.ndarray:
        return self.prior.p[self.support.slices()]


@dataclass(frozen=True)
class Hypothesis:
    id: int
    class_id: str
    transform: ScaleTranslate
    support_img: Region


@dataclass(frozen=True, eq=False)
class TransformedPrior:
    key: tuple  # (class_id, sx, sy)
    field: BernoulliField
    tables: SummaryTables

    @property
    def z_h(self) -> float:
        return self.field.z_term

    @property
    def z_ticks(self) -> int:
        return self.field.z_ticks

    @property
    def width(self) -> int:
        return self.field.width

    @property
    def height(self) -> int:
        return self.field.height


def _resample_axis(p: np.ndarray, n_out: int, s: float, axis: int) -> np.ndarray:
    """Linear interpolation along ``axis`` at source centres ``(i + 0.5) / s - 0.5``."""
    n_in = p.shape[axis]
    if n_out == n_in and s == 1.0:
        return p
    u = np.clip((np.arange(n_out) + 0.5) / s - 0.5, 0.0, n_in - 1)
    i0 = np.floor(u).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    f = u - i0
    a = np.take(p, i0, axis=axis)
    b = np.take(p, i1, axis=axis)
    shape = [1, 1]
    shape[axis] = n_out
    f = f.reshape(shape)
    return a * (1.0 - f) + b * f


def resample_probabilities(p: np.ndarray, sx: float, sy: float) -> np.ndarray:
    h, w = p.shape
    ow, oh = scaled_extent(w, h, sx, sy)
    return _resample_axis(_resample_axis(p, oh, sy, 0), ow, sx, 1)


def transform_prior(pc: PriorClass, sx: float, sy: float, policy: Optional[ClampPolicy] = None, m: int = DEFAULT_M) -> TransformedPrior:
    policy = policy or ClampPolicy()
    p = resample_probabilities(pc.cropped(), sx, sy)
    fld = from_probabilities(ProbabilityImage(np.clip(p, 0.0, 1.0)), policy)
    return TransformedPrior((pc.class_id, sx, sy), fld, build_tables(fld, m))


class PriorCache:
    """Build-once store of transformed priors keyed by ``(class_id, sx, sy)``.

    Concurrent requests for one key wait on a per-key lock, so each key is
    built exactly once.
    """

    def __init__(self, priors: Sequence[PriorClass], policy: ClampPolicy, m: int = DEFAULT_M):
        self.priors = {pc.class_id: pc for pc in priors}
        if len(self.priors) != len(priors):
            raise InvalidInputError("duplicate prior class ids")
        self.policy = policy
        self.m = m
        self._store = {}
        self._locks = {}
        self._guard = threading.Lock()
        self.builds = 0

    def get(self, class_id, sx: float, sy: float) -> TransformedPrior:
        key = (class_id, float(sx), float(sy))
        hit = self._store.get(key)
        if hit is not None:
            return hit
        with self._guard:
            lock = self._locks.setdefault(key, threading.Lock())
        with lock:
            hit = self._store.get(key)
            if hit is None:
                hit = transform_prior(self.priors[class_id], sx, sy, self.policy, self.m)
                self._store[key] = hit
                self.builds += 1
        return hit


@dataclass(frozen=True)
class HypothesisGrid:
    """Classes x scales x translations.

    ``tx``/``ty`` of None mean every integer shift; ``translations`` (a list
    of ``(tx, ty)`` pairs) replaces the ``tx`` x ``ty`` product when given.
    """

    classes: tuple
    sx: tuple = (1.0,)
    sy: tuple = (1.0,)
    tx: Optional[tuple] = None
    ty: Optional[tuple] = None
    translations: Optional[tuple] = None

    def __post_init__(self):
        for name in ("classes", "sx", "sy"):
            if not len(getattr(self, name)):
                raise InvalidConfigurationError(f"hypothesis grid has an empty {name} list")
        for name in ("tx", "ty"):
            v = getattr(self, name)
            if v is not None and not len(v):
                raise InvalidConfigurationError(f"hypothesis grid has an empty {name} range")
        if self.translations is not None and not len(self.translations):
            raise InvalidConfigurationError("hypothesis grid has an empty translation list")


def enumerate_hypotheses(grid: HypothesisGrid, width: int, height: int, contained_only: bool = True) -> list:
    """All hypotheses in (class, sy, sx, ty, tx) order with consecutive ids."""
    out = []
    for pc in grid.classes:
        w, h = pc.support.w, pc.support.h
        for sy in grid.sy:
            for sx in grid.sx:
                ow, oh = scaled_extent(w, h, sx, sy)
                if grid.translations is not None:
                    shifts = [(int(tx), int(ty)) for tx, ty in grid.translations]
                else:
                    tys = grid.ty if grid.ty is not None else range(0, height - oh + 1)
                    txs = grid.tx if grid.tx is not None else range(0, width - ow + 1)
                    shifts = [(tx, ty) for ty in tys for tx in txs]
                for tx, ty in shifts:
                    if contained_only and not (0 <= ty <= height - oh and 0 <= tx <= width - ow):
                        continue
                    out.append(Hypothesis(len(out), pc.class_id, ScaleTranslate(sx, sy, int(tx), int(ty)), Region(int(tx), int(ty), ow, oh)))
    if not out:
        raise EmptyHypothesisSpaceError(f"no hypothesis fits inside a {width}x{height} image")
    return out


# ---------------------------------------------------------------------------
# shapes, alignment and prior learning


def shape_distance(s1, s2) -> int:
    """Symmetric-difference pixel count; the smaller mask is padded with background."""
    a = np.asarray(s1, dtype=bool)
    b = np.asarray(s2, dtype=bool)
    h = max(a.shape[0], b.shape[0])
    w = max(a.shape[1], b.shape[1])
    pa = np.zeros((h, w), dtype=bool)
    pb = np.zeros((h, w), dtype=bool)
    pa[: a.shape[0], : a.shape[1]] = a
    pb[: b.shape[0], : b.shape[1]] = b
    return int(np.count_nonzero(pa ^ pb))


def scale_mask(mask, sx: float, sy: float) -> np.ndarray:
    """Nearest-neighbour scaling of a binary mask."""
    m = np.asarray(mask, dtype=bool)
    h, w = m.shape
    ow, oh = scaled_extent(w, h, sx, sy)
    cols = np.minimum(((np.arange(ow) + 0.5) / sx).astype(np.int64), w - 1)
    rows = np.minimum(((np.arange(oh) + 0.5) / sy).astype(np.int64), h - 1)
    return m[np.ix_(rows, cols)]


def _overlap(a: np.ndarray, b: np.ndarray, tx: int, ty: int) -> int:
    """Pixels set in both ``b`` and ``a`` shifted by ``(tx, ty)``."""
    y0, x0 = max(ty, 0), max(tx, 0)
    y1 = min(ty + a.shape[0], b.shape[0])
    x1 = min(tx + a.shape[1], b.shape[1])
    if y1 <= y0 or x1 <= x0:
        return 0
    return int(np.count_nonzero(a[y0 - ty : y1 - ty, x0 - tx : x1 - tx] & b[y0:y1, x0:x1]))


def transformed_distance(s1, s2, t: ScaleTranslate) -> int:
    """Symmetric difference between ``s2`` and ``s1`` scaled then shifted, on the whole plane."""
    a = scale_mask(s1, t.sx, t.sy)
    b = np.asarray(s2, dtype=bool)
    return int(a.sum()) + int(b.sum()) - 2 * _overlap(a, b, t.tx, t.ty)


def _scale_pairs(scales) -> list:
    out = []
    for s in scales:
        out.append(tuple(s) if isinstance(s, (tuple, list)) else (float(s), float(s)))
    return out


def align_shapes(s1, s2, translations, scales=(1.0,)) -> ScaleTranslate:
    """Exhaustive best (scale, translation) mapping ``s1`` onto ``s2``.

    ``translations`` is an iterable of ``(tx, ty)``; ``scales`` holds floats
    (isotropic) or ``(sx, sy)`` pairs.  Ties prefer small shifts, then scales
    close to 1, then the lexicographically smallest pose.
    """
    translations = [tuple(map(int, t)) for t in translations]
    pairs = _scale_pairs(scales)
    if not translations or not pairs:
        raise InvalidConfigurationError("alignment search ranges must be nonempty")
    b = np.asarray(s2, dtype=bool)
    nb = int(b.sum())
    best = None
    for sx, sy in pairs:
        a = scale_mask(s1, sx, sy)
        na = int(a.sum())
        for tx, ty in translations:
            d = na + nb - 2 * _overlap(a, b, tx, ty)
            key = (d, tx * tx + ty * ty, abs(sx - 1) + abs(sy - 1), (tx, ty, sx, sy))
            if best is None or key < best[0]:
                best = (key, ScaleTranslate(sx, sy, tx, ty))
    return best[1]


def aligned_distance(s1, s2, translations, scales=(1.0,)) -> int:
    return transformed_distance(s1, s2, align_shapes(s1, s2, translations, scales))


def square_translations(radius: int) -> list:
    r = range(-radius, radius + 1)
    return [(tx, ty) for ty in r for tx in r]


@dataclass
class KMedoidsResult:
    medoids: list
    labels: np.ndarray
    cost: int
    history: list  # objective after each accepted swap of the winning restart


def _assign(D: np.ndarray, medoids) -> tuple:
    sub = D[:, medoids]
    return np.argmin(sub, axis=1), int(sub.min(axis=1).sum())


def kmedoids(D: np.ndarray, k: int, seed: int = 0, restarts: int = 8) -> KMedoidsResult:
    """PAM swap descent from seeded random starts; best objective kept."""
    n = len(D)
    if not 1 <= k <= n:
        raise InvalidConfigurationError(f"cannot form {k} clusters from {n} shapes")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        med = sorted(rng.choice(n, size=k, replace=False).tolist())
        _, cost = _assign(D, med)
        hist = [cost]
        improved = True
        while improved:
            improved = False
            for i in range(k):
                for cand in range(n):
                    if cand in med:
                        continue
                    trial = sorted(med[:i] + [cand] + med[i + 1 :])
                    _, c = _assign(D, trial)
                    if c < cost:
                        med, cost = trial, c
                        hist.append(cost)
                        improved = True
                        break
                if improved:
                    break
        if best is None or cost < best.cost:
            labels, _ = _assign(D, med)
            best = KMedoidsResult(med, labels, cost, hist)
    return best


def _paste(canvas: np.ndarray, a: np.ndarray, x: int, y: int) -> None:
    y0, x0 = max(y, 0), max(x, 0)
    y1 = min(y + a.shape[0], canvas.shape[0])
    x1 = min(x + a.shape[1], canvas.shape[1])
    if y1 > y0 and x1 > x0:
        canvas[y0:y1, x0:x1] += a[y0 - y : y1 - y, x0 - x : x1 - x]


def build_priors(shapes, clusters_per_class: int, seed: int = 0, translations=None, scales=(1.0,), class_id: str = "K", restarts: int = 8) -> list:
    """Cluster shapes by aligned distance and turn each cluster into a prior.

    A cluster's prior is the per-pixel fraction of its members, aligned to the
    medoid, that cover the pixel; its support is the bounding box of that map.
    """
    shapes = [np.asarray(s, dtype=bool) for s in shapes]
    if clusters_per_class > len(shapes):
        raise InvalidConfigurationError(f"{clusters_per_class} clusters requested from {len(shapes)} shapes")
    if translations is None:
        translations = square_translations(2)
    translations = list(translations)
    n = len(shapes)
    D = np.zeros((n, n), dtype=np.int64)
    for i, j in itertools.combinations(range(n), 2):
        D[i, j] = D[j, i] = min(aligned_distance(shapes[i], shapes[j], translations, scales), aligned_distance(shapes[j], shapes[i], translations, scales))
    km = kmedoids(D, clusters_per_class, seed, restarts)
    pad = max([max(abs(tx), abs(ty)) for tx, ty in translations] + [0])
    out = []
    for c, med in enumerate(km.medoids):
        ref = shapes[med]
        members = [i for i in range(n) if km.labels[i] == c]
        span = max(max(s.shape) for s in shapes) * 2
        canvas = np.zeros((ref.shape[0] + 2 * pad + span, ref.shape[1] + 2 * pad + span))
        for i in members:
            t = align_shapes(shapes[i], ref, translations, scales)
            _paste(canvas, scale_mask(shapes[i], t.sx, t.sy).astype(np.float64), t.tx + pad, t.ty + pad)
        p = canvas / len(members)
        box = _bbox(p > 0) or Region(0, 0, 1, 1)
        out.append(PriorClass(f"{class_id}{c}", ProbabilityImage(p[box.slices()])))
    return out


def save_prior_bundle(directory, priors: Sequence[PriorClass], delta_max: Optional[float] = None, provenance: Optional[dict] = None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest = []
    for pc in priors:
        name = f"{pc.class_id}.pgm"
        save_probability_image(d / name, ProbabilityImage(pc.cropped()), delta_max, provenance)
        manifest.append({"class_id": pc.class_id, "file": name, "support": [pc.support.x0, pc.support.y0, pc.support.w, pc.support.h]})
    (d / "manifest.json").write_text(json.dumps({"delta_max": delta_max, "provenance": provenance or {}, "classes": manifest}, indent=2))
    return d


def load_prior_bundle(directory) -> tuple:
    """Return ``(priors, manifest)``; stored priors are already cropped to their support."""
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    priors = []
    for entry in manifest["classes"]:
        img, _ = load_probability_image(d / entry["file"])
        priors.append(PriorClass(entry["class_id"], img, Region(0, 0, img.width, img.height)))
    return priors, manifest
