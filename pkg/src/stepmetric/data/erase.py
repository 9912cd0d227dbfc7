"""Random Erasing: overwrite random rectangles with uniform noise."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, GeometryError

MAX_ATTEMPTS = 100


@dataclass(frozen=True)
class EraseParams:
    area_lo: float = 0.3
    area_hi: float = 0.5
    aspect_lo: float = 0.3
    aspect_hi: float = 3.3
    repeats: int = 2

    def __post_init__(self):
        if not (0 < self.area_lo <= self.area_hi < 1):
            raise ConfigError(f"need 0 < area_lo <= area_hi < 1, got {self.area_lo}, {self.area_hi}")
        if not (0 < self.aspect_lo <= self.aspect_hi):
            raise ConfigError(f"need 0 < aspect_lo <= aspect_hi, got {self.aspect_lo}, {self.aspect_hi}")
        if self.repeats < 1:
            raise ConfigError(f"repeats must be >= 1, got {self.repeats}")


def sample_rect(height: int, width: int, params: EraseParams, rng: np.random.Generator):
    """Draw ``(top, left, h, w)`` whose measured area fraction and h/w ratio obey ``params``.

    Target area and aspect are drawn uniformly, side lengths are floored, and
    the draw is repeated when rounding pushes the measured rectangle outside
    the ranges or it does not fit.
    """
    total = height * width
    for _ in range(MAX_ATTEMPTS):
        target = rng.uniform(params.area_lo, params.area_hi) * total
        ratio = rng.uniform(params.aspect_lo, params.aspect_hi)
        h = int(math.floor(math.sqrt(target * ratio)))
        w = int(math.floor(math.sqrt(target / ratio)))
        if not (1 <= h <= height and 1 <= w <= width):
            continue
        frac = h * w / total
        if not (params.area_lo <= frac <= params.area_hi and params.aspect_lo <= h / w <= params.aspect_hi):
            continue
        top = int(rng.integers(0, height - h + 1))
        left = int(rng.integers(0, width - w + 1))
        return top, left, h, w
    raise GeometryError(f"no {params.area_lo}-{params.area_hi} area / {params.aspect_lo}-{params.aspect_hi} "
                        f"aspect rectangle found for a {height}x{width} image in {MAX_ATTEMPTS} attempts")


def random_erase(image: np.ndarray, params: EraseParams = EraseParams(), rng: np.random.Generator = None,
                 return_rects: bool = False):
    """Apply ``params.repeats`` independent noise rectangles to a copy of ``image``."""
    rng = rng if rng is not None else np.random.default_rng()
    out = np.array(image, dtype=np.float32, copy=True)
    height, width = out.shape[:2]
    rects = []
    for _ in range(params.repeats):
        top, left, h, w = sample_rect(height, width, params, rng)
        out[top:top + h, left:left + w] = rng.uniform(0.0, 1.0, size=(h, w) + out.shape[2:])
        rects.append((top, left, h, w))
    return (out, rects) if return_rects else out
