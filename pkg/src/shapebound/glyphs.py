"""Synthetic glyph and shape masks rendered at arbitrary sizes.

Letters are polylines in unit coordinates (x to the right, y down).  A pixel is
inked when its centre lies within ``radius`` of a stroke; strokes are mapped so
that the ink touches all four edges of the box.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidConfigurationError

_O = [(0.2, 0), (0.8, 0), (1, 0.2), (1, 0.8), (0.8, 1), (0.2, 1), (0, 0.8), (0, 0.2), (0.2, 0)]
_P = [(0, 1), (0, 0), (0.8, 0), (1, 0.15), (1, 0.4), (0.8, 0.55), (0, 0.55)]

STROKES = {
    "A": [[(0, 1), (0.5, 0), (1, 1)], [(0.25, 0.55), (0.75, 0.55)]],
    "B": [
        [(0, 0), (0, 1)],
        [(0, 0), (0.7, 0), (0.9, 0.1), (0.9, 0.4), (0.7, 0.5), (0, 0.5)],
        [(0.7, 0.5), (1, 0.6), (1, 0.9), (0.8, 1), (0, 1)],
    ],
    "C": [[(1, 0.1), (0.8, 0), (0.2, 0), (0, 0.2), (0, 0.8), (0.2, 1), (0.8, 1), (1, 0.9)]],
    "D": [[(0, 0), (0, 1), (0.6, 1), (1, 0.7), (1, 0.3), (0.6, 0), (0, 0)]],
    "E": [[(1, 0), (0, 0), (0, 1), (1, 1)], [(0, 0.5), (0.8, 0.5)]],
    "F": [[(1, 0), (0, 0), (0, 1)], [(0, 0.5), (0.8, 0.5)]],
    "G": [[(1, 0.1), (0.8, 0), (0.2, 0), (0, 0.2), (0, 0.8), (0.2, 1), (0.8, 1), (1, 0.8), (1, 0.55), (0.55, 0.55)]],
    "H": [[(0, 0), (0, 1)], [(1, 0), (1, 1)], [(0, 0.5), (1, 0.5)]],
    "I": [[(0.5, 0), (0.5, 1)], [(0.2, 0), (0.8, 0)], [(0.2, 1), (0.8, 1)]],
    "J": [[(1, 0), (1, 0.8), (0.8, 1), (0.2, 1), (0, 0.8)]],
    "K": [[(0, 0), (0, 1)], [(1, 0), (0, 0.6)], [(0.3, 0.4), (1, 1)]],
    "L": [[(0, 0), (0, 1), (1, 1)]],
    "M": [[(0, 1), (0, 0), (0.5, 0.6), (1, 0), (1, 1)]],
    "N": [[(0, 1), (0, 0), (1, 1), (1, 0)]],
    "O": [_O],
    "P": [_P],
    "Q": [_O, [(0.6, 0.7), (1, 1)]],
    "R": [_P, [(0.4, 0.55), (1, 1)]],
    "S": [[(1, 0.1), (0.8, 0), (0.2, 0), (0, 0.2), (0, 0.35), (0.2, 0.5), (0.8, 0.5), (1, 0.65), (1, 0.8), (0.8, 1), (0.2, 1), (0, 0.9)]],
    "T": [[(0, 0), (1, 0)], [(0.5, 0), (0.5, 1)]],
    "U": [[(0, 0), (0, 0.8), (0.2, 1), (0.8, 1), (1, 0.8), (1, 0)]],
    "V": [[(0, 0), (0.5, 1), (1, 0)]],
    "W": [[(0, 0), (0.25, 1), (0.5, 0.4), (0.75, 1), (1, 0)]],
    "X": [[(0, 0), (1, 1)], [(1, 0), (0, 1)]],
    "Y": [[(0, 0), (0.5, 0.5), (1, 0)], [(0.5, 0.5), (0.5, 1)]],
    "Z": [[(0, 0), (1, 0), (0, 1), (1, 1)]],
}

LETTERS = "".join(sorted(STROKES))


def _segment_distance(px, py, a, b):
    ax, ay = a
    bx, by = b
    dx, dy = bx - ax, by - ay
    L2 = dx * dx + dy * dy
    if L2 == 0:
        return np.hypot(px - ax, py - ay)
    t = np.clip(((px - ax) * dx + (py - ay) * dy) / L2, 0.0, 1.0)
    return np.hypot(px - ax - t * dx, py - ay - t * dy)


def render_glyph(letter: str, size, thickness: float = 0.08, slant: float = 0.0, width: float = 1.0) -> np.ndarray:
    """Binary mask of ``letter`` in a ``(w, h)`` (or square ``size``) box.

    ``thickness`` is the stroke radius as a fraction of the shorter side,
    ``slant`` shears the top to the right, ``width`` squeezes horizontally.
    """
    if letter not in STROKES:
        raise InvalidConfigurationError(f"no strokes defined for {letter!r}")
    w, h = (size, size) if np.isscalar(size) else size
    if w < 1 or h < 1 or not 0 < width <= 1 or thickness <= 0:
        raise InvalidConfigurationError("invalid glyph geometry")
    r = max(thickness * min(w, h), 0.5)
    py, px = np.mgrid[0:h, 0:w] + 0.5
    ink = np.zeros((h, w), dtype=bool)
    span = 1.0 + abs(slant)

    def place(u, v):
        u = 0.5 + (u - 0.5) * width
        u = (u + slant * (1 - v) + (abs(slant) - slant) / 2) / span
        return r + u * (w - 2 * r), r + v * (h - 2 * r)

    for line in STROKES[letter]:
        pts = [place(u, v) for u, v in line]
        for a, b in zip(pts, pts[1:]):
            ink |= _segment_distance(px, py, a, b) <= r
    return ink


def _polygon(vertices, w: int, h: int) -> np.ndarray:
    """Even-odd fill of a polygon given in pixel coordinates."""
    py, px = np.mgrid[0:h, 0:w] + 0.5
    inside = np.zeros((h, w), dtype=bool)
    vs = list(vertices)
    for (x1, y1), (x2, y2) in zip(vs, vs[1:] + vs[:1]):
        if y1 == y2:
            continue
        crosses = (py >= min(y1, y2)) & (py < max(y1, y2))
        xi = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (px < xi)
    return inside


def _disc(w, h, cx, cy, r):
    py, px = np.mgrid[0:h, 0:w] + 0.5
    return (px - cx) ** 2 + (py - cy) ** 2 <= r * r


def render_shape(kind: str, size) -> np.ndarray:
    w, h = (size, size) if np.isscalar(size) else size
    if kind == "square":
        return np.ones((h, w), dtype=bool)
    if kind == "disc":
        py, px = np.mgrid[0:h, 0:w] + 0.5
        return ((px - w / 2) / (w / 2)) ** 2 + ((py - h / 2) / (h / 2)) ** 2 <= 1.0
    if kind == "triangle":
        return _polygon([(w / 2, 0), (w, h), (0, h)], w, h)
    if kind == "star":
        pts = []
        for k in range(10):
            a = -np.pi / 2 + k * np.pi / 5
            rad = 0.5 if k % 2 == 0 else 0.2
            pts.append((w / 2 + rad * w * np.cos(a), h * 0.525 + rad * h * 1.05 * np.sin(a)))
        return _polygon(pts, w, h)
    if kind == "club":
        r = 0.22 * min(w, h)
        m = _disc(w, h, w / 2, h * 0.25, r) | _disc(w, h, w / 2 - 1.1 * r, h * 0.55, r) | _disc(w, h, w / 2 + 1.1 * r, h * 0.55, r)
        m |= _polygon([(w * 0.45, h * 0.4), (w * 0.55, h * 0.4), (w * 0.65, h), (w * 0.35, h)], w, h)
        return m
    raise InvalidConfigurationError(f"unknown shape {kind!r}")


SHAPES = ("square", "disc", "triangle", "club", "star")


def render(name: str, size, **variant) -> np.ndarray:
    if name in SHAPES:
        return render_shape(name, size)
    return render_glyph(name, size, **variant)


def embed(mask: np.ndarray, width: int, height: int, tx: int, ty: int) -> np.ndarray:
    """Place ``mask`` with its top-left corner at ``(tx, ty)`` in an empty canvas."""
    out = np.zeros((height, width), dtype=bool)
    h, w = mask.shape
    if tx < 0 or ty < 0 or tx + w > width or ty + h > height:
        raise InvalidConfigurationError("embedded mask must fit inside the canvas")
    out[ty : ty + h, tx : tx + w] = mask
    return out
