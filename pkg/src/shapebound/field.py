"""Bernoulli fields: per-pixel foreground success rates and their log-odds.

A field is stored twice: as float log-odds ``delta`` (clamped to
``[-delta_max, delta_max]``) and as integer ``ticks``, the same log-odds on a
fixed grid of ``TICKS_PER_DELTA_MAX`` steps per ``delta_max``.  Every bound and
oracle in the package works on ticks, so sums over regions are exact integers
and one-sided comparisons never suffer from rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import DegeneratePixelError, InvalidConfigurationError, InvalidInputError

# lcm(1..16) * 2**20: any m <= 16 divides this, so summary thresholds are integral.
TICKS_PER_DELTA_MAX = 720720 * 2**20

# Probabilities live on a 2**-53 grid, where p -> 1 - p is exact both ways.
_P_GRID = float(2**53)

DEFAULT_DELTA_MAX = 5.0


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def snap_probabilities(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return np.rint(p * _P_GRID) / _P_GRID


@dataclass(frozen=True)
class ProbabilityImage:
    """Grid of success rates, indexed ``p[y, x]``."""

    p: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] == 0 or p.shape[1] == 0:
            raise InvalidInputError(f"probability image must be a non-empty 2D grid, got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise InvalidInputError("probability image contains non-finite values")
        if p.min() < 0.0 or p.max() > 1.0:
            raise InvalidInputError("probabilities must lie in [0, 1]")
        object.__setattr__(self, "p", _readonly(snap_probabilities(p)))

    @property
    def width(self) -> int:
        return self.p.shape[1]

    @property
    def height(self) -> int:
        return self.p.shape[0]

    @property
    def shape(self) -> tuple:
        return self.p.shape

    def __eq__(self, other):
        if not isinstance(other, ProbabilityImage):
            return NotImplemented
        return self.p.shape == other.p.shape and bool(np.array_equal(self.p, other.p))

    __hash__ = None


@dataclass(frozen=True)
class ClampPolicy:
    delta_max: float = DEFAULT_DELTA_MAX

    def __post_init__(self):
        if not (math.isfinite(self.delta_max) and self.delta_max > 0):
            raise InvalidConfigurationError(f"delta_max must be a positive finite number, got {self.delta_max}")

    @property
    def p_min(self) -> float:
        return 1.0 / (1.0 + math.exp(self.delta_max))

    @property
    def tick(self) -> float:
        """Log-odds value of one integer tick."""
        return self.delta_max / TICKS_PER_DELTA_MAX

    def to_ticks(self, values):
        return np.rint(np.asarray(values, dtype=np.float64) / self.delta_max * TICKS_PER_DELTA_MAX).astype(np.int64)

    def from_ticks(self, ticks) -> float:
        return float(ticks) * self.delta_max / TICKS_PER_DELTA_MAX

    @classmethod
    def for_levels(cls, fg_p: float) -> "ClampPolicy":
        """Policy whose clamp coincides with the log-odds of ``fg_p``.

        With binary scenes built from ``fg_p``/``1 - fg_p`` this puts both
        field levels exactly on the summary thresholds.
        """
        if not 0.5 < fg_p < 1.0:
            raise InvalidConfigurationError("fg_p must lie in (0.5, 1)")
        return cls(math.log(fg_p / (1.0 - fg_p)))


@dataclass(frozen=True, eq=False)
class BernoulliField:
    delta: np.ndarray
    z_term: float
    policy: ClampPolicy
    ticks: np.ndarray = field(repr=False)
    z_ticks: int = 0

    @property
    def width(self) -> int:
        return self.delta.shape[1]

    @property
    def height(self) -> int:
        return self.delta.shape[0]

    @property
    def shape(self) -> tuple:
        return self.delta.shape

    def probabilities(self) -> np.ndarray:
        """Clamped success rates recovered through the logistic."""
        return 1.0 / (1.0 + np.exp(-self.delta))


def from_probabilities(img: ProbabilityImage, policy: Optional[ClampPolicy] = None) -> BernoulliField:
    policy = policy or ClampPolicy()
    p = np.asarray(img.p, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise InvalidInputError("probability image contains non-finite values")
    p_min = policy.p_min
    pc = np.clip(p, p_min, 1.0 - p_min)
    delta = np.clip(np.log(pc) - np.log1p(-pc), -policy.delta_max, policy.delta_max)
    z_term = float(np.sum(np.log1p(-pc)))
    ticks = policy.to_ticks(delta)
    return BernoulliField(
        delta=_readonly(delta),
        z_term=z_term,
        policy=policy,
        ticks=_readonly(ticks),
        z_ticks=int(round(z_term / policy.delta_max * TICKS_PER_DELTA_MAX)),
    )


def from_likelihoods(fg_lik, bg_lik) -> ProbabilityImage:
    fg = np.asarray(fg_lik, dtype=np.float64)
    bg = np.asarray(bg_lik, dtype=np.float64)
    if fg.shape != bg.shape:
        raise InvalidInputError(f"likelihood grids differ in shape: {fg.shape} vs {bg.shape}")
    if not (np.all(np.isfinite(fg)) and np.all(np.isfinite(bg))):
        raise InvalidInputError("likelihoods must be finite")
    if fg.min(initial=0.0) < 0 or bg.min(initial=0.0) < 0:
        raise InvalidInputError("likelihoods must be non-negative")
    total = fg + bg
    bad = np.argwhere(total <= 0)
    if len(bad):
        y, x = bad[0]
        raise DegeneratePixelError(f"both likelihoods are zero at pixel (x={x}, y={y})")
    return ProbabilityImage(fg / total)


@dataclass(frozen=True)
class Gaussian:
    sigma: float

    def __post_init__(self):
        if not self.sigma >= 0:
            raise InvalidConfigurationError("sigma must be >= 0")


@dataclass(frozen=True)
class SaltPepper:
    P: float

    def __post_init__(self):
        if not 0.0 <= self.P <= 1.0:
            raise InvalidConfigurationError("P must lie in [0, 1]")


@dataclass(frozen=True)
class Structured:
    ell: int

    def __post_init__(self):
        if int(self.ell) != self.ell or self.ell < 1:
            raise InvalidConfigurationError("ell must be a positive integer")


NoiseVariant = Union[Gaussian, SaltPepper, Structured]


@dataclass(frozen=True)
class NoiseSpec:
    variant: NoiseVariant
    seed: int = 0

    def to_json(self) -> dict:
        v = self.variant
        if isinstance(v, Gaussian):
            return {"kind": "gaussian", "sigma": v.sigma, "seed": self.seed}
        if isinstance(v, SaltPepper):
            return {"kind": "salt_pepper", "P": v.P, "seed": self.seed}
        return {"kind": "structured", "ell": v.ell, "seed": self.seed}

    @classmethod
    def from_json(cls, d: dict) -> "NoiseSpec":
        kind = d.get("kind")
        seed = int(d.get("seed", 0))
        if kind == "gaussian":
            return cls(Gaussian(float(d["sigma"])), seed)
        if kind == "salt_pepper":
            return cls(SaltPepper(float(d["P"])), seed)
        if kind == "structured":
            return cls(Structured(int(d["ell"])), seed)
        raise InvalidConfigurationError(f"unknown noise kind {kind!r}")


def structured_mask(height: int, width: int, ell: int) -> np.ndarray:
    """Pixels whose row or column index is a nonzero multiple of ``ell``."""
    rows = np.arange(height)
    cols = np.arange(width)
    r = (rows > 0) & (rows % ell == 0)
    c = (cols > 0) & (cols % ell == 0)
    return r[:, None] | c[None, :]


def apply_noise(img: ProbabilityImage, spec: NoiseSpec) -> ProbabilityImage:
    p = img.p
    v = spec.variant
    rng = np.random.default_rng(spec.seed)
    if isinstance(v, Gaussian):
        out = np.clip(p + rng.normal(0.0, v.sigma, size=p.shape), 0.0, 1.0)
    elif isinstance(v, SaltPepper):
        flip = rng.random(p.shape) < v.P
        out = np.where(flip, 1.0 - p, p)
    elif isinstance(v, Structured):
        out = np.where(structured_mask(img.height, img.width, v.ell), 1.0 - p, p)
    else:
        raise InvalidConfigurationError(f"unsupported noise variant {v!r}")
    return ProbabilityImage(out)


def binary_shape_to_probability(mask, fg_p: float, bg_p: float) -> ProbabilityImage:
    if not (0.0 <= bg_p < fg_p <= 1.0):
        raise InvalidConfigurationError(f"need 0 <= bg_p < fg_p <= 1, got fg_p={fg_p}, bg_p={bg_p}")
    m = np.asarray(mask).astype(bool)
    return ProbabilityImage(np.where(m, fg_p, bg_p))
