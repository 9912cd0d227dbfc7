"""k-NN gallery with distance-threshold anomaly rejection, and evaluation metrics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data.images import Dataset
from .embed import embed_batch
from .errors import ConfigError, DatasetError

ANOMALY = "anomaly"


@dataclass
class Gallery:
    vectors: np.ndarray         # (N, D)
    labels: np.ndarray          # (N,) step indices
    k: int = 10
    tau: float = 1.0
    nn_mean: float = float("nan")
    nn_std: float = float("nan")
    source_ids: list = field(default_factory=list)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.vectors) != len(self.labels):
            raise ConfigError("gallery vectors and labels differ in length")
        if self.k < 1 or len(self.vectors) < self.k:
            raise ConfigError(f"gallery of {len(self.vectors)} points cannot serve k={self.k}")
        if not self.tau > 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")

    @property
    def steps(self) -> list[int]:
        return sorted(set(int(s) for s in self.labels))

    def save(self, path):
        np.savez(path, vectors=self.vectors, labels=self.labels, k=self.k, tau=self.tau,
                 nn_mean=self.nn_mean, nn_std=self.nn_std, source_ids=np.array(self.source_ids, dtype=str))

    @classmethod
    def load(cls, path) -> "Gallery":
        try:
            with np.load(path) as z:
                return cls(z["vectors"], z["labels"], int(z["k"]), float(z["tau"]), float(z["nn_mean"]),
                           float(z["nn_std"]), [str(s) for s in z["source_ids"]])
        except (OSError, KeyError, ValueError) as exc:
            raise DatasetError(f"cannot read gallery {path}: {exc}") from exc


@dataclass
class Prediction:
    step: int | None            # None means rejected as anomaly
    nearest: float
    votes: dict

    @property
    def is_anomaly(self) -> bool:
        return self.step is None

    @property
    def verdict(self):
        return ANOMALY if self.step is None else self.step


def pairwise_distances(a: np.ndarray, b: np.ndarray, block: int = 32768) -> np.ndarray:
    """Exact Euclidean distances via explicit differences (float64).

    Work is tiled so each difference block holds about ``block`` numbers and
    stays in cache; cost is linear in ``len(a) * len(b)``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    dim = max(a.shape[1], 1)
    rows_a = max(1, min(len(a), block // (dim * 64)))
    rows_b = max(1, block // (dim * rows_a))
    out = np.empty((len(a), len(b)))
    for i in range(0, len(a), rows_a):
        for j in range(0, len(b), rows_b):
            diff = a[i:i + rows_a, None, :] - b[None, j:j + rows_b, :]
            out[i:i + rows_a, j:j + rows_b] = np.einsum("ijk,ijk->ij", diff, diff)
    return np.sqrt(out, out=out)


def leave_one_out_nn(vectors: np.ndarray) -> np.ndarray:
    d = pairwise_distances(vectors, vectors)
    np.fill_diagonal(d, np.inf)
    return d.min(axis=1)


def build_gallery(model, train_set: Dataset, k: int = 10, tau_rule="auto") -> Gallery:
    """Embed every training image (un-augmented) and set the rejection threshold.

    ``tau_rule`` is ``"auto"`` (mean + 3 std of leave-one-out nearest-neighbour
    distances) or a positive number used as-is.
    """
    images = train_set.images
    if len(images) < k + 1:
        raise ConfigError(f"gallery needs at least k+1={k + 1} images, got {len(images)}")
    vectors = embed_batch(model, np.stack([img.pixels for img in images]))
    labels = np.array([img.step for img in images])
    nn = leave_one_out_nn(vectors)
    mean, std = float(nn.mean()), float(nn.std())
    tau = resolve_tau(tau_rule, mean, std)
    return Gallery(vectors, labels, k, tau, mean, std, [img.source_id for img in images])


def resolve_tau(rule, mean: float, std: float) -> float:
    if isinstance(rule, str) and rule.strip().lower() in ("auto", "mean+3std"):
        return mean + 3.0 * std
    try:
        value = float(rule)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"tau_rule must be 'auto' or a positive number, got {rule!r}") from exc
    if not value > 0:
        raise ConfigError(f"tau must be > 0, got {value}")
    return value


def _vote(dists: np.ndarray, labels: np.ndarray, k: int, tau: float) -> Prediction:
    # order by (distance, label): a gallery permutation cannot change the selected
    # multiset. Only points up to the k-th distance (ties included) are sorted.
    if len(dists) > k:
        kth = np.partition(dists, k - 1)[k - 1]
        cand = np.flatnonzero(dists <= kth)
    else:
        cand = np.arange(len(dists))
    order = cand[np.lexsort((labels[cand], dists[cand]))]
    nearest = float(dists[order[0]])
    top = order[:k]
    votes: dict[int, int] = {}
    summed: dict[int, float] = {}
    for i in top:
        lab = int(labels[i])
        votes[lab] = votes.get(lab, 0) + 1
        summed[lab] = summed.get(lab, 0.0) + float(dists[i])
    if nearest > tau:
        return Prediction(None, nearest, votes)
    best = min(votes, key=lambda lab: (-votes[lab], summed[lab], lab))
    return Prediction(best, nearest, votes)


def classify(gallery: Gallery, query: np.ndarray) -> Prediction:
    dists = pairwise_distances(np.asarray(query)[None], gallery.vectors)[0]
    return _vote(dists, gallery.labels, gallery.k, gallery.tau)


def classify_many(gallery: Gallery, queries: np.ndarray) -> list[Prediction]:
    dists = pairwise_distances(queries, gallery.vectors)
    return [_vote(row, gallery.labels, gallery.k, gallery.tau) for row in dists]


@dataclass
class EvalResult:
    steps: list
    confusion: np.ndarray       # (S, S+1): true step rows, predicted step columns + rejected
    accuracy: float             # correct / total, rejections count as errors
    accuracy_accepted: float    # correct / non-rejected
    rejection_rate: float
    predictions: list

    def confusion_csv(self) -> str:
        header = ",".join(["true_step"] + [f"pred_{s}" for s in self.steps] + ["rejected"])
        lines = [header]
        for s, row in zip(self.steps, self.confusion):
            lines.append(",".join([str(s)] + [str(int(v)) for v in row]))
        return "\n".join(lines) + "\n"


def evaluate(model, gallery: Gallery, test_set: Dataset, steps=None) -> EvalResult:
    images = test_set.images
    if not images:
        raise DatasetError("empty test set")
    vectors = embed_batch(model, np.stack([img.pixels for img in images]))
    preds = classify_many(gallery, vectors)
    return score(preds, [img.step for img in images], steps or sorted(set(gallery.steps) | set(test_set.steps)))


def score(preds, truth, steps) -> EvalResult:
    if not preds:
        raise DatasetError("empty test set")
    col = {s: i for i, s in enumerate(steps)}
    confusion = np.zeros((len(steps), len(steps) + 1), dtype=np.int64)
    correct = rejected = 0
    for p, t in zip(preds, truth):
        if p.is_anomaly:
            confusion[col[t], len(steps)] += 1
            rejected += 1
        else:
            confusion[col[t], col[p.step]] += 1
            correct += int(p.step == t)
    total = len(preds)
    accepted = total - rejected
    return EvalResult(list(steps), confusion, correct / total, correct / accepted if accepted else 0.0,
                      rejected / total, preds)


def embeddings_csv(vectors, labels, source_ids) -> str:
    dim = vectors.shape[1]
    lines = [",".join(["source_id", "step"] + [f"e{i}" for i in range(dim)])]
    for sid, lab, vec in zip(source_ids, labels, vectors):
        lines.append(",".join([sid, str(int(lab))] + [repr(float(v)) for v in vec]))
    return "\n".join(lines) + "\n"
