"""Training-time augmentation: rotation, projective warp, colour change, truncation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates


@dataclass(frozen=True)
class AugmentConfig:
    rotation_lo: float = -10.0      # degrees
    rotation_hi: float = 10.0
    projective: float = 0.05        # max corner jitter as a fraction of the side
    gain_lo: float = 0.8
    gain_hi: float = 1.2
    offset_lo: float = -0.05
    offset_hi: float = 0.05
    truncation: float = 0.15        # max fraction of one edge cut away
    p_rotation: float = 0.5
    p_projective: float = 0.5
    p_color: float = 0.5
    p_truncation: float = 0.5

    @classmethod
    def off(cls) -> "AugmentConfig":
        return cls(p_rotation=0.0, p_projective=0.0, p_color=0.0, p_truncation=0.0)


def _homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """3x3 matrix mapping the four ``src`` points onto ``dst`` (x, y order)."""
    rows, rhs = [], []
    for (x, y), (u, v) in zip(src, dst):
        rows.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        rows.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        rhs += [u, v]
    h = np.linalg.solve(np.array(rows, dtype=np.float64), np.array(rhs, dtype=np.float64))
    return np.append(h, 1.0).reshape(3, 3)


def _warp(image: np.ndarray, out_to_in: np.ndarray) -> np.ndarray:
    height, width = image.shape[:2]
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    pts = np.stack([xs.ravel(), ys.ravel(), np.ones(xs.size)])
    src = out_to_in @ pts
    sx = (src[0] / src[2]).reshape(height, width)
    sy = (src[1] / src[2]).reshape(height, width)
    out = np.empty_like(image)
    for c in range(image.shape[2]):
        out[..., c] = map_coordinates(image[..., c], [sy, sx], order=1, mode="nearest")
    return out


def augment(image: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Randomly transformed copy of ``image``; same size, clamped to [0, 1]."""
    out = np.array(image, dtype=np.float32, copy=True)
    height, width = out.shape[:2]
    transform = np.eye(3)
    warped = False
    if cfg.p_rotation > 0 and rng.random() < cfg.p_rotation:
        theta = np.deg2rad(rng.uniform(cfg.rotation_lo, cfg.rotation_hi))
        cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
        c, s = np.cos(theta), np.sin(theta)
        to_origin = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1.0]])
        rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
        back = np.array([[1, 0, cx], [0, 1, cy], [0, 0, 1.0]])
        transform = back @ rot @ to_origin @ transform
        warped = True
    if cfg.p_projective > 0 and rng.random() < cfg.p_projective:
        corners = np.array([[0, 0], [width - 1, 0], [width - 1, height - 1], [0, height - 1]], dtype=np.float64)
        jitter = rng.uniform(-cfg.projective, cfg.projective, size=(4, 2)) * np.array([width, height])
        transform = _homography(corners, corners + jitter) @ transform
        warped = True
    if warped:
        out = _warp(out, transform)
    if cfg.p_color > 0 and rng.random() < cfg.p_color:
        gain = rng.uniform(cfg.gain_lo, cfg.gain_hi, size=3).astype(np.float32)
        offset = np.float32(rng.uniform(cfg.offset_lo, cfg.offset_hi))
        out = out * gain + offset
    if cfg.p_truncation > 0 and rng.random() < cfg.p_truncation:
        edge = int(rng.integers(0, 4))
        frac = rng.uniform(0.0, cfg.truncation)
        cut_h = int(round(frac * height))
        cut_w = int(round(frac * width))
        if edge == 0 and cut_h:
            out[:cut_h] = 0.0
        elif edge == 1 and cut_h:
            out[height - cut_h:] = 0.0
        elif edge == 2 and cut_w:
            out[:, :cut_w] = 0.0
        elif edge == 3 and cut_w:
            out[:, width - cut_w:] = 0.0
    return np.clip(out, 0.0, 1.0, out=out)
