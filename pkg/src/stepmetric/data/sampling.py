"""Quadruplet mini-batch sampling (anchor, positive, negative, anomaly)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, SamplingError
from .augment import AugmentConfig, augment
from .erase import EraseParams, random_erase
from .images import Dataset

ANOMALY_SOURCES = ("anchor", "random")


@dataclass
class QuadrupletBatch:
    anchors: np.ndarray         # (B, H, W, 3)
    positives: np.ndarray
    negatives: np.ndarray
    anomalies: np.ndarray | None
    n_a: np.ndarray             # anchor step per row
    n_n: np.ndarray             # negative step per row
    anchor_ids: list
    positive_ids: list
    negative_ids: list
    epoch: int | None = None

    def __len__(self):
        return len(self.n_a)


def check_sampleable(dataset: Dataset):
    if len(dataset.groups) < 2:
        raise SamplingError(f"need at least 2 distinct steps, dataset has {dataset.steps}")
    for step, group in dataset.groups.items():
        if len(group) < 2:
            raise SamplingError(f"step {step} has {len(group)} image(s); positives need at least 2")


def sample_quadruplet_batch(dataset: Dataset, batch_size: int, rng: np.random.Generator,
                            epoch: int | None = None, augment_cfg: AugmentConfig | None = None,
                            erase_params: EraseParams | None = EraseParams(),
                            anomaly_source: str = "anchor") -> QuadrupletBatch:
    """Draw ``batch_size`` rows.

    Anchor is uniform over all images, positive uniform over the anchor's step
    without the anchor, negative uniform over the images of all other steps.
    The anomaly is a Random-Erasing copy of the (augmented) anchor, or of a
    random image when ``anomaly_source == "random"``; pass ``erase_params=None``
    to skip anomalies altogether.
    """
    check_sampleable(dataset)
    if anomaly_source not in ANOMALY_SOURCES:
        raise ConfigError(f"anomaly_source must be one of {ANOMALY_SOURCES}, got {anomaly_source!r}")
    images = dataset.images
    steps = np.array([img.step for img in images])
    index_by_step = {s: np.flatnonzero(steps == s) for s in dataset.steps}
    aug = augment_cfg if augment_cfg is not None else AugmentConfig.off()

    def view(i):
        return augment(images[i].pixels, aug, rng)

    rows = {"a": [], "p": [], "n": [], "q": []}
    ids = {"a": [], "p": [], "n": []}
    n_a, n_n = [], []
    for _ in range(batch_size):
        ia = int(rng.integers(len(images)))
        step = int(steps[ia])
        same = index_by_step[step]
        # uniform over the group minus the anchor: draw from len-1 slots, skip the anchor's slot
        pos = int(rng.integers(len(same) - 1))
        if pos >= int(np.searchsorted(same, ia)):
            pos += 1
        ip = int(same[pos])
        others = np.flatnonzero(steps != step)
        ineg = int(others[rng.integers(len(others))])
        anchor = view(ia)
        rows["a"].append(anchor)
        rows["p"].append(view(ip))
        rows["n"].append(view(ineg))
        if erase_params is not None:
            src = anchor if anomaly_source == "anchor" else images[int(rng.integers(len(images)))].pixels
            rows["q"].append(random_erase(src, erase_params, rng))
        ids["a"].append(images[ia].source_id)
        ids["p"].append(images[ip].source_id)
        ids["n"].append(images[ineg].source_id)
        n_a.append(step)
        n_n.append(int(steps[ineg]))
    stack = (lambda xs: np.stack(xs).astype(np.float32)) if batch_size else (lambda xs: None)
    return QuadrupletBatch(
        anchors=stack(rows["a"]), positives=stack(rows["p"]), negatives=stack(rows["n"]),
        anomalies=stack(rows["q"]) if rows["q"] else None,
        n_a=np.array(n_a, dtype=np.int64), n_n=np.array(n_n, dtype=np.int64),
        anchor_ids=ids["a"], positive_ids=ids["p"], negative_ids=ids["n"], epoch=epoch)
