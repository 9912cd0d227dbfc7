"""Figures written next to the CSV artifacts (PNG, headless Agg backend)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 110,
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_telemetry(rows, path, title=""):
    """Mean feature-space distances and loss per epoch."""
    with plt.rc_context(STYLE):
        fig, (ax, ax2) = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
        epochs = [r.epoch for r in rows]
        ax.plot(epochs, [r.mean_dp for r in rows], label="d_p (anchor-positive)")
        ax.plot(epochs, [r.mean_dn for r in rows], label="d_n (anchor-negative)")
        if rows and rows[0].mean_dano is not None:
            ax.plot(epochs, [r.mean_dano for r in rows], label="d_ano (centroid-anomaly)")
        ax.set_ylabel("mean distance")
        ax.legend()
        if title:
            ax.set_title(title)
        ax2.plot(epochs, [r.mean_loss for r in rows], color="k", label="loss")
        ax2.set_ylabel("mean loss")
        ax2.set_xlabel("epoch")
        lam = ax2.twinx()
        lam.plot(epochs, [r.lam for r in rows], color="tab:red", ls="--", label="lambda")
        lam.set_ylabel("lambda", color="tab:red")
        lam.grid(False)
        return _save(fig, path)


def plot_confusion(result, path, title="confusion"):
    with plt.rc_context({**STYLE, "axes.grid": False}):
        fig, ax = plt.subplots(figsize=(5.2, 4.2))
        m = result.confusion.astype(float)
        ax.imshow(m, cmap="Blues", aspect="auto")
        labels = [str(s) for s in result.steps] + ["rej"]
        ax.set_xticks(range(len(labels)), labels)
        ax.set_yticks(range(len(result.steps)), [str(s) for s in result.steps])
        ax.set_xlabel("predicted step")
        ax.set_ylabel("true step")
        ax.set_title(f"{title} (acc {result.accuracy:.3f})")
        thresh = m.max() / 2 if m.size else 0
        for (i, j), v in np.ndenumerate(m):
            if v:
                ax.text(j, i, int(v), ha="center", va="center", fontsize=7,
                        color="white" if v > thresh else "black")
        return _save(fig, path)


def plot_timeline(run_log, path, truth=None):
    """Raw per-frame verdicts, rejected frames and the confirmed step over time."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(7, 3.2))
        t = np.array([e.timestamp for e in run_log.entries])
        raw = [e.raw_verdict for e in run_log.entries]
        ok = np.array([isinstance(v, (int, np.integer)) for v in raw], dtype=bool)
        if truth is not None and len(truth) == len(raw):
            ax.plot(t, truth, color="0.75", lw=3, label="script", zorder=0)
        if ok.any():
            ax.scatter(t[ok], [v for v, k in zip(raw, ok) if k], s=6, color="k", label="estimate")
        if (~ok).any():
            ax.scatter(t[~ok], np.zeros((~ok).sum()), s=6, color="tab:red", label="anomaly")
        conf = [np.nan if e.confirmed_step is None else e.confirmed_step for e in run_log.entries]
        ax.step(t, conf, where="post", color="tab:blue", label="confirmed")
        ax.set_xlabel("time [s]")
        ax.set_ylabel("step (0 = anomaly)")
        ax.legend(loc="upper left", ncol=4)
        return _save(fig, path)


def plot_compare(table, path):
    """Median accuracy per loss mode on the clean and occluded splits."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 3.2))
        modes = list(table)
        x = np.arange(len(modes))
        clean = [np.median(table[m]["clean"]) for m in modes]
        occ = [np.median(table[m]["occluded"]) for m in modes]
        ax.bar(x - 0.2, clean, 0.4, label="clean")
        ax.bar(x + 0.2, occ, 0.4, label="occluded (rejections excluded)")
        ax.set_xticks(x, modes, rotation=10)
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("median accuracy")
        ax.legend()
        return _save(fig, path)
