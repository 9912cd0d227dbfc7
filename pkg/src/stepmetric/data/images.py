"""Image containers and folder-per-step dataset I/O."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import DatasetError

STEP_DIR = re.compile(r"^step_(\d+)$")


@dataclass
class LabeledImage:
    pixels: np.ndarray      # (H, W, 3) float32 in [0, 1]
    step: int
    source_id: str


@dataclass
class Dataset:
    """Images grouped by step index (1..S), each group in a stable order."""

    groups: dict[int, list[LabeledImage]] = field(default_factory=dict)

    @classmethod
    def from_images(cls, images):
        groups: dict[int, list[LabeledImage]] = {}
        for img in images:
            groups.setdefault(int(img.step), []).append(img)
        return cls(dict(sorted(groups.items())))

    @property
    def steps(self) -> list[int]:
        return sorted(self.groups)

    @property
    def images(self) -> list[LabeledImage]:
        return [img for s in self.steps for img in self.groups[s]]

    @property
    def image_shape(self) -> tuple:
        return self.images[0].pixels.shape

    def __len__(self):
        return sum(len(g) for g in self.groups.values())


def quantize(pixels: np.ndarray) -> np.ndarray:
    """Round to the 8-bit grid so that PNG write/read is lossless."""
    return (np.round(np.clip(pixels, 0.0, 1.0) * 255.0) / 255.0).astype(np.float32)


def save_png(path, pixels: np.ndarray):
    arr = np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG", compress_level=6)


def load_png(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise DatasetError(f"cannot read image {path}: {exc}") from exc
    return (arr.astype(np.float32) / 255.0)


def load_dataset(root) -> Dataset:
    """Load ``<root>/step_<n>/*.png``; steps must be exactly 1..S."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} does not exist")
    found: dict[int, Path] = {}
    for child in root.iterdir():
        m = STEP_DIR.match(child.name)
        if m and child.is_dir():
            found[int(m.group(1))] = child
    if not found:
        raise DatasetError(f"no step_<n> folders under {root}")
    steps = sorted(found)
    if steps != list(range(1, len(steps) + 1)):
        missing = sorted(set(range(1, steps[-1] + 1)) - set(steps))
        raise DatasetError(f"non-contiguous steps under {root}: found {steps}, missing {missing}")
    groups: dict[int, list[LabeledImage]] = {}
    for step in steps:
        files = sorted(found[step].glob("*.png"))
        if not files:
            raise DatasetError(f"step {step} folder {found[step]} contains no PNG images")
        groups[step] = [LabeledImage(load_png(f), step, f"step_{step}/{f.stem}") for f in files]
    return Dataset(groups)


def read_manifest(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        key, sep, value = line.partition("=")
        if sep:
            out[key.strip()] = value.strip()
    return out


def write_manifest(path, items: dict):
    Path(path).write_text("".join(f"{k} = {v}\n" for k, v in items.items()))
