"""Procedural assembly-step images.

Every image shows a grey "chassis" plate on a noisy background. Step ``k``
adds part glyphs ``1..k`` at fixed slots on the chassis, so each step's image
contains all parts of the previous step. All random draws (chassis jitter,
illumination, noise) are made before painting and do not depend on the step,
so two steps rendered from the same seed differ only inside the added slots.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DatasetError
from .images import Dataset, LabeledImage, quantize, save_png, write_manifest

GENERATOR_VERSION = "synth-1"

PART_COLORS = np.array([
    [0.90, 0.15, 0.15], [0.15, 0.75, 0.20], [0.20, 0.35, 0.95], [0.95, 0.85, 0.10],
    [0.85, 0.20, 0.85], [0.10, 0.85, 0.85], [0.98, 0.55, 0.10], [0.55, 0.25, 0.05],
    [0.98, 0.98, 0.98], [0.05, 0.05, 0.05], [0.50, 0.90, 0.50], [0.60, 0.60, 1.00],
], dtype=np.float32)
SHAPES = ("square", "disc", "triangle", "ring", "cross", "diamond", "hbar", "vbar")
CHASSIS_COLOR = np.array([0.55, 0.55, 0.58], dtype=np.float32)


def grid_size(steps: int) -> int:
    return max(2, math.ceil(math.sqrt(steps)))


def slot_centers(steps: int, size: int, offset=(0.0, 0.0), scale: float = 1.0) -> np.ndarray:
    """(row, col) centres of part slots 1..steps in pixel coordinates."""
    g = grid_size(steps)
    lo, hi = 0.22 * size, 0.78 * size
    centre = size / 2.0
    coords = []
    for k in range(steps):
        r, c = divmod(k, g)
        y = lo + (hi - lo) * (r + 0.5) / g
        x = lo + (hi - lo) * (c + 0.5) / g
        coords.append((centre + (y - centre) * scale + offset[0], centre + (x - centre) * scale + offset[1]))
    return np.array(coords)


def glyph_radius(steps: int, size: int, scale: float = 1.0) -> float:
    cell = 0.56 * size / grid_size(steps)
    return 0.42 * cell * scale


def _glyph_mask(shape: str, yy, xx, cy, cx, r):
    dy, dx = yy - cy, xx - cx
    if shape == "square":
        return (np.abs(dy) <= r * 0.85) & (np.abs(dx) <= r * 0.85)
    if shape == "disc":
        return dy * dy + dx * dx <= r * r
    if shape == "triangle":
        return (dy <= r * 0.8) & (dy >= -r) & (np.abs(dx) <= (dy + r) * 0.6)
    if shape == "ring":
        d2 = dy * dy + dx * dx
        return (d2 <= r * r) & (d2 >= (0.45 * r) ** 2)
    if shape == "cross":
        return ((np.abs(dy) <= r * 0.35) & (np.abs(dx) <= r)) | ((np.abs(dx) <= r * 0.35) & (np.abs(dy) <= r))
    if shape == "diamond":
        return np.abs(dy) + np.abs(dx) <= r * 1.1
    if shape == "hbar":
        return (np.abs(dy) <= r * 0.45) & (np.abs(dx) <= r)
    return (np.abs(dx) <= r * 0.45) & (np.abs(dy) <= r)


def render_step_image(step: int, steps: int, rng: np.random.Generator, size: int = 64) -> np.ndarray:
    """Render one quantised ``(size, size, 3)`` image of the given step."""
    if not 1 <= step <= steps:
        raise ConfigError(f"step {step} outside 1..{steps}")
    if size < 16:
        raise ConfigError(f"image size must be >= 16, got {size}")
    # all draws happen before painting and are step-independent
    offset = rng.uniform(-0.05, 0.05, size=2) * size
    scale = rng.uniform(0.92, 1.08)
    gain = rng.uniform(0.8, 1.2)
    bg_level = rng.uniform(0.08, 0.3)
    bg_tint = rng.uniform(-0.04, 0.04, size=3)
    noise = rng.normal(0.0, 0.03, size=(size, size, 3))

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    img = np.empty((size, size, 3), dtype=np.float64)
    img[...] = bg_level + bg_tint
    centre = size / 2.0
    half = 0.34 * size * scale
    cy, cx = centre + offset[0], centre + offset[1]
    chassis = (np.abs(yy - cy) <= half) & (np.abs(xx - cx) <= half)
    img[chassis] = CHASSIS_COLOR
    slots = slot_centers(steps, size, offset, scale)
    radius = glyph_radius(steps, size, scale)
    for k in range(step):
        mask = _glyph_mask(SHAPES[k % len(SHAPES)], yy, xx, slots[k, 0], slots[k, 1], radius)
        img[mask] = PART_COLORS[k % len(PART_COLORS)]
    img = img * gain + noise
    return quantize(img)


def render_dataset(seed: int, steps: int = 8, per_step: int = 40, size: int = 64) -> Dataset:
    if steps < 2 or per_step < 2:
        raise ConfigError(f"need steps >= 2 and per_step >= 2, got {steps}, {per_step}")
    images = []
    for step in range(1, steps + 1):
        for i in range(per_step):
            rng = np.random.default_rng([seed, step, i])
            images.append(LabeledImage(render_step_image(step, steps, rng, size), step,
                                       f"step_{step}/{i:04d}"))
    return Dataset.from_images(images)


def generate_dataset(root, seed: int, steps: int = 8, per_step: int = 40, size: int = 64) -> Dataset:
    """Render a dataset and write ``<root>/step_<n>/<id>.png`` plus ``manifest.txt``."""
    root = Path(root)
    data = render_dataset(seed, steps, per_step, size)
    try:
        for step, group in data.groups.items():
            folder = root / f"step_{step}"
            folder.mkdir(parents=True, exist_ok=True)
            for img in group:
                save_png(folder / (img.source_id.split("/")[-1] + ".png"), img.pixels)
        write_manifest(root / "manifest.txt", {"seed": seed, "steps": steps, "per_step": per_step,
                                               "size": size, "generator": GENERATOR_VERSION})
    except OSError as exc:
        raise DatasetError(f"cannot write dataset to {root}: {exc}") from exc
    return data


def occlude(pixels: np.ndarray, rng: np.random.Generator, area=(0.3, 0.6), aspect=(0.5, 2.0)) -> np.ndarray:
    """Cover one rectangle with a flat opaque colour (worker-occlusion stand-in)."""
    h, w = pixels.shape[:2]
    out = pixels.copy()
    for _ in range(100):
        target = rng.uniform(*area) * h * w
        ratio = rng.uniform(*aspect)
        rh = int(round(math.sqrt(target * ratio)))
        rw = int(round(math.sqrt(target / ratio)))
        if 1 <= rh <= h and 1 <= rw <= w:
            top = rng.integers(0, h - rh + 1)
            left = rng.integers(0, w - rw + 1)
            out[top:top + rh, left:left + rw] = rng.uniform(0.0, 1.0, size=3)
            return quantize(out)
    raise ConfigError("could not place an occluder")


def occluded_split(clean: Dataset, seed: int) -> Dataset:
    rng = np.random.default_rng([seed, 0x0CC1])
    return Dataset.from_images(LabeledImage(occlude(img.pixels, rng), img.step, img.source_id + "#occ")
                               for img in clean.images)


def scripted_stream(script, seed: int, steps: int, size: int = 64, occlusions=()):
    """Frames for a script such as ``[(1, 20), (2, 20)]`` (step, frame count).

    ``occlusions`` lists ``(first_frame, count)`` bursts. Each burst places one
    flat occluder covering 50-80% of the frame that stays put (with 1-pixel
    jitter) for the whole burst, like a worker standing in front of the part.
    Returns ``(frames, truth, occluded)``: truth is the scripted step of every
    frame, occluded flags the burst frames.
    """
    frames, truth = [], []
    for step, count in script:
        for _ in range(count):
            rng = np.random.default_rng([seed, 0x5EED, len(frames)])
            frames.append(render_step_image(step, steps, rng, size))
            truth.append(step)
    occluded = [False] * len(frames)
    for b, (first, count) in enumerate(occlusions):
        rng = np.random.default_rng([seed, 0x0CC2, b])
        frac = rng.uniform(0.5, 0.8)
        ratio = rng.uniform(0.6, 1.6)
        rh = min(size, int(round(math.sqrt(frac * size * size * ratio))))
        rw = min(size, int(round(math.sqrt(frac * size * size / ratio))))
        top = int(rng.integers(0, size - rh + 1))
        left = int(rng.integers(0, size - rw + 1))
        colour = rng.uniform(0.0, 1.0, size=3)
        for i in range(first, min(first + count, len(frames))):
            dy, dx = rng.integers(-1, 2, size=2)
            t = int(np.clip(top + dy, 0, size - rh))
            l = int(np.clip(left + dx, 0, size - rw))
            out = frames[i].copy()
            out[t:t + rh, l:l + rw] = colour
            frames[i] = quantize(out)
            occluded[i] = True
    return frames, truth, occluded
