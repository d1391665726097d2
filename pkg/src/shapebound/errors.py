"""Exception types raised by the matching engine."""

from __future__ import annotations


class ShapeBoundError(Exception):
    """Base class for all engine errors."""


class InvalidInputError(ShapeBoundError, ValueError):
    """Malformed input data (non-finite values, bad shapes, empty lists)."""


class DegeneratePixelError(InvalidInputError):
    """Both likelihoods vanish at a pixel, so no success rate is defined."""


class InvalidConfigurationError(ShapeBoundError, ValueError):
    pass


class RegionError(ShapeBoundError, IndexError):
    """A region or mass argument falls outside its valid range."""


class InvalidSummaryError(ShapeBoundError, ValueError):
    pass


class InvalidHypothesisError(ShapeBoundError, ValueError):
    """Hypothesis support does not fit inside the image."""


class InvalidScaleError(ShapeBoundError, ValueError):
    pass


class EmptyHypothesisSpaceError(ShapeBoundError, ValueError):
    pass


class EmptyMetricsError(ShapeBoundError, ValueError):
    pass
