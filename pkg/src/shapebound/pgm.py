"""Binary PGM (P5) reading and writing, plus the JSON sidecar for fields."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import InvalidInputError
from .field import ProbabilityImage


def write_pgm(path, data: np.ndarray, maxval: int) -> None:
    data = np.asarray(data)
    if data.ndim != 2:
        raise InvalidInputError("PGM data must be 2D")
    h, w = data.shape
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    dtype = ">u2" if maxval > 255 else "u1"
    body = np.clip(data, 0, maxval).astype(dtype).tobytes()
    Path(path).write_bytes(header + body)


def _tokens(buf: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    out = []
    i = 0
    while len(out) < count:
        while i < len(buf) and buf[i : i + 1].isspace():
            i += 1
        if buf[i : i + 1] == b"#":
            while i < len(buf) and buf[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(buf) and not buf[j : j + 1].isspace():
            j += 1
        if j == i:
            raise InvalidInputError("truncated PGM header")
        out.append(buf[i:j])
        i = j
    # exactly one whitespace byte separates the header from the raster
    return out, i + 1


def read_pgm(path) -> tuple:
    """Return ``(data, maxval)``; ``data`` is an integer array of shape (h, w)."""
    buf = Path(path).read_bytes()
    toks, offset = _tokens(buf, 4)
    if toks[0] != b"P5":
        raise InvalidInputError(f"{path}: not a binary PGM (magic {toks[0]!r})")
    w, h, maxval = int(toks[1]), int(toks[2]), int(toks[3])
    dtype = ">u2" if maxval > 255 else "u1"
    n = w * h * np.dtype(dtype).itemsize
    raw = buf[offset : offset + n]
    if len(raw) != n:
        raise InvalidInputError(f"{path}: raster is truncated")
    return np.frombuffer(raw, dtype=dtype).reshape(h, w).astype(np.int64), maxval


def quantize(p: np.ndarray) -> np.ndarray:
    return np.rint(np.asarray(p) * 65535.0).astype(np.int64)


def save_probability_image(path, img: ProbabilityImage, delta_max: Optional[float] = None, provenance: Optional[dict] = None) -> Path:
    """Write ``img`` as a 16-bit PGM and a ``.json`` sidecar next to it."""
    path = Path(path)
    write_pgm(path, quantize(img.p), 65535)
    side = {"width": img.width, "height": img.height, "delta_max": delta_max, "provenance": provenance or {}}
    path.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True))
    return path


def load_probability_image(path) -> tuple:
    """Return ``(image, sidecar_dict)``; the sidecar is ``{}`` when absent."""
    path = Path(path)
    data, maxval = read_pgm(path)
    side_path = path.with_suffix(".json")
    side = json.loads(side_path.read_text()) if side_path.exists() else {}
    return ProbabilityImage(data / float(maxval)), side


def save_mask(path, mask: np.ndarray) -> Path:
    write_pgm(path, np.asarray(mask).astype(np.int64) * 255, 255)
    return Path(path)


def load_mask(path) -> np.ndarray:
    data, maxval = read_pgm(path)
    return data * 2 > maxval
