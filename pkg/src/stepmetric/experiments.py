"""Train/evaluate cells, the mode x seed comparison and the latency benchmark."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import Config
from .data.images import Dataset, load_dataset
from .data.synth import occluded_split, render_dataset
from .embed import build_embedder, embed, save_model, telemetry_csv, train
from .gallery import EvalResult, Gallery, build_gallery, classify, evaluate
from .losses import LOSS_MODES

log = logging.getLogger(__name__)

# published accuracies on real assembly footage; printed for context only
REFERENCE_ACCURACY = {
    "triplet_fixed": 0.793,
    "triplet_adaptive": 0.796,
    "anomaly_fixed": 0.826,
    "anomaly_adaptive": 0.829,
}
REFERENCE_NOTE = "not comparable: different dataset"
REFERENCE_STEP_MS = 11.6
REFERENCE_FPS = 5.0


def held_out_splits(cfg: Config) -> tuple[Dataset, Dataset]:
    """Held-out clean split (from disk or rendered) and its occluded copy."""
    if cfg.test_root:
        clean = load_dataset(cfg.test_root)
    else:
        clean = render_dataset(cfg.test_seed, cfg.steps, cfg.test_per_step, cfg.size)
    return clean, occluded_split(clean, cfg.test_seed)


@dataclass
class CellResult:
    mode: str
    seed: int
    telemetry: list
    clean: EvalResult
    occluded: EvalResult
    gallery: Gallery
    model: object = None
    seconds: float = 0.0

    @property
    def occluded_accuracy(self) -> float:
        """Occluded-split score: accuracy among frames not rejected as anomalies."""
        return self.occluded.accuracy_accepted


def run_cell(cfg: Config, mode: str, seed: int, train_set: Dataset, clean: Dataset, occluded: Dataset,
             out_dir=None, on_epoch=None) -> CellResult:
    """Train one loss mode with one seed and score it on both test splits."""
    cell_cfg = cfg.with_overrides(loss_mode=mode, seed=seed)
    start = time.perf_counter()
    model = build_embedder(cell_cfg.embedder(), seed=seed)
    result = train(model, train_set, cell_cfg.train(), on_epoch=on_epoch)
    gallery = build_gallery(model, train_set, k=cell_cfg.k, tau_rule=cell_cfg.tau_rule)
    cell = CellResult(mode, seed, result.telemetry, evaluate(model, gallery, clean),
                      evaluate(model, gallery, occluded), gallery, model, time.perf_counter() - start)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "telemetry.csv").write_text(telemetry_csv(result.telemetry))
        (out / "confusion_clean.csv").write_text(cell.clean.confusion_csv())
        (out / "confusion_occluded.csv").write_text(cell.occluded.confusion_csv())
        save_model(model, out / "model.atn", cell_cfg.to_text())
        gallery.save(out / "gallery.npz")
    return cell


def compare(cfg: Config, train_set: Dataset, clean: Dataset, occluded: Dataset, seeds, modes=LOSS_MODES,
            out_dir=None, on_cell=None) -> list[CellResult]:
    cells = []
    for mode in modes:
        for seed in seeds:
            sub = None if out_dir is None else Path(out_dir) / "cells" / f"{mode}-{seed}"
            cell = run_cell(cfg, mode, seed, train_set, clean, occluded, sub)
            cell.model = None       # keep memory flat over long sweeps
            cells.append(cell)
            if on_cell is not None:
                on_cell(cell)
    return cells


def compare_table(cells) -> dict:
    """``{mode: {"seeds": [...], "clean": [...], "occluded": [...]}}`` in input order."""
    table = {}
    for c in cells:
        row = table.setdefault(c.mode, {"seeds": [], "clean": [], "occluded": []})
        row["seeds"].append(c.seed)
        row["clean"].append(c.clean.accuracy)
        row["occluded"].append(c.occluded_accuracy)
    return table


def compare_csv(cells) -> str:
    lines = ["mode,seed,clean_accuracy,clean_rejection_rate,occluded_accuracy,"
             "occluded_accuracy_strict,occluded_rejection_rate,train_seconds"]
    for c in cells:
        lines.append(f"{c.mode},{c.seed},{c.clean.accuracy!r},{c.clean.rejection_rate!r},"
                     f"{c.occluded_accuracy!r},{c.occluded.accuracy!r},{c.occluded.rejection_rate!r},"
                     f"{c.seconds:.1f}")
    return "\n".join(lines) + "\n"


def summary_csv(cells) -> str:
    """Per-mode medians next to the published reference values."""
    lines = ["mode,n_seeds,median_clean_accuracy,median_occluded_accuracy,reference_accuracy,reference_note"]
    for mode, row in compare_table(cells).items():
        lines.append(f"{mode},{len(row['seeds'])},{float(np.median(row['clean']))!r},"
                     f"{float(np.median(row['occluded']))!r},{REFERENCE_ACCURACY[mode]},{REFERENCE_NOTE}")
    return "\n".join(lines) + "\n"


# ---- latency benchmark ----

@dataclass
class BenchReport:
    frames: int
    embed_ms: np.ndarray
    classify_ms: np.ndarray
    scaling: dict           # gallery size -> median classify ms

    @property
    def fps(self) -> float:
        return 1000.0 / float(np.mean(self.embed_ms + self.classify_ms))

    @property
    def scaling_ratio(self) -> float:
        sizes = sorted(self.scaling)
        return self.scaling[sizes[-1]] / self.scaling[sizes[0]]

    def rows(self) -> list[tuple[str, float, str]]:
        out = []
        for name, ms in (("embed_ms", self.embed_ms), ("classify_ms", self.classify_ms),
                         ("total_ms", self.embed_ms + self.classify_ms)):
            out += [(f"{name}_mean", float(np.mean(ms)), "ms"), (f"{name}_median", float(np.median(ms)), "ms"),
                    (f"{name}_p95", float(np.percentile(ms, 95)), "ms")]
        out.append(("fps", self.fps, "frames/s"))
        out.append(("frames", float(self.frames), "count"))
        for n, ms in sorted(self.scaling.items()):
            out.append((f"classify_ms_median_n{n}", ms, "ms"))
        out.append(("classify_scaling_ratio", self.scaling_ratio, "x"))
        out.append(("reference_step_estimation_ms", REFERENCE_STEP_MS, "ms (1080p, other hardware; context only)"))
        out.append(("reference_fps", REFERENCE_FPS, "frames/s (whole system, other hardware; context only)"))
        return out

    def csv(self) -> str:
        return "metric,value,unit\n" + "".join(f"{m},{v!r},{u}\n" for m, v, u in self.rows())


def _timed(fn, *args):
    t = time.perf_counter()
    out = fn(*args)
    return out, (time.perf_counter() - t) * 1000.0


def bench(model, gallery: Gallery, frames, scaling_sizes=(320, 3200), scaling_queries: int = 200,
          seed: int = 0) -> BenchReport:
    """Per-frame embed and classify latency, plus classify cost against gallery size."""
    embed_ms, classify_ms = [], []
    for frame in frames:
        vec, te = _timed(embed, model, frame)
        _, tc = _timed(classify, gallery, vec)
        embed_ms.append(te)
        classify_ms.append(tc)
    rng = np.random.default_rng([seed, 0xBE4C])
    dim = gallery.vectors.shape[1]
    queries = rng.standard_normal((scaling_queries, dim))
    scaling = {}
    for n in scaling_sizes:
        g = Gallery(rng.standard_normal((n, dim)), rng.integers(1, 9, size=n), k=gallery.k, tau=gallery.tau)
        classify(g, queries[0])     # warm-up
        scaling[n] = float(np.median([_timed(classify, g, q)[1] for q in queries]))
    return BenchReport(len(embed_ms), np.array(embed_ms), np.array(classify_ms), scaling)

