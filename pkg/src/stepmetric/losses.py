"""Feature-space distances, hinge losses, adaptive margin and the anomaly-weight schedule.

Scalar functions (:func:`triplet_loss`, :func:`anomaly_triplet_loss`, ...) follow
the formulas directly and are used as references. :func:`batch_loss` evaluates
the same formulas for a whole mini-batch of embeddings and returns the
gradients with respect to every embedding, which is what training backprops
through the shared-weight embedder.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError

LOSS_MODES = ("triplet_fixed", "triplet_adaptive", "anomaly_fixed", "anomaly_adaptive")


@dataclass(frozen=True)
class TripletDistances:
    d_p: float
    d_n: float
    d_ano: float | None = None

    def __post_init__(self):
        for name in ("d_p", "d_n", "d_ano"):
            v = getattr(self, name)
            if v is not None and not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class MarginConfig:
    """Margins for both losses.

    ``sigma`` is the width of the adaptive profile (a standard deviation). When
    left as ``None`` it is filled in by :meth:`for_steps` from the variance of
    the step indices 1..S. ``form`` selects the normalisation of the adaptive
    margin: ``"literal"`` uses ``a / sqrt(2*pi*sigma)``, ``"standard"`` the
    Gaussian density ``a / (sigma * sqrt(2*pi))``.
    """

    mode: str = "fixed"
    m: float = 1.0
    a: float = 1.0
    sigma: float | None = None
    m_alpha: float = 1.0
    m_beta: float = 1.0
    form: str = "literal"

    def __post_init__(self):
        if self.mode not in ("fixed", "adaptive"):
            raise ConfigError(f"margin mode must be 'fixed' or 'adaptive', got {self.mode!r}")
        if self.form not in ("literal", "standard"):
            raise ConfigError(f"margin form must be 'literal' or 'standard', got {self.form!r}")
        for name in ("m", "a", "m_alpha", "m_beta"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"margin parameter {name} must be > 0, got {getattr(self, name)}")
        if self.sigma is not None and not self.sigma > 0:
            raise ConfigError(f"sigma must be > 0, got {self.sigma}")

    def for_steps(self, steps: int) -> "MarginConfig":
        if self.sigma is not None:
            return self
        return replace(self, sigma=step_index_sigma(steps))


def step_index_sigma(steps: int) -> float:
    """Standard deviation of the discrete uniform distribution on 1..steps."""
    return math.sqrt((steps * steps - 1) / 12.0)


@dataclass(frozen=True)
class LambdaSchedule:
    warmup_epochs: int = 50
    ramp_epochs: int = 50
    lambda_max: float = 1.0

    def __post_init__(self):
        if self.warmup_epochs < 0 or self.ramp_epochs < 0 or self.lambda_max < 0:
            raise ConfigError("lambda schedule values must be non-negative")


@dataclass(frozen=True)
class LossValue:
    total: float
    term1: float
    term2: float = 0.0


def euclidean_distance(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ConfigError(f"dimension mismatch: {u.shape} vs {v.shape}")
    diff = u - v
    return float(np.sqrt(np.dot(diff.ravel(), diff.ravel())))


def centroid3(a, p, n) -> np.ndarray:
    a, p, n = (np.asarray(x, dtype=np.float64) for x in (a, p, n))
    if not (a.shape == p.shape == n.shape):
        raise ConfigError(f"dimension mismatch: {a.shape}, {p.shape}, {n.shape}")
    return (a + p + n) / 3.0


def triplet_loss(d: TripletDistances, margin: float) -> LossValue:
    if margin < 0:
        raise ConfigError(f"margin must be >= 0, got {margin}")
    term1 = max(d.d_p - d.d_n + margin, 0.0)
    return LossValue(total=term1, term1=term1, term2=0.0)


def adaptive_margin(n_a: int, n_n: int, cfg: MarginConfig) -> float:
    """Gaussian margin in the step gap, largest for neighbouring steps."""
    sigma = cfg.sigma
    if sigma is None:
        raise ConfigError("adaptive margin needs sigma; call MarginConfig.for_steps(S) first")
    if sigma <= 0:
        raise ConfigError(f"sigma must be > 0, got {sigma}")
    gap = float(n_n) - float(n_a)
    if cfg.form == "literal":
        scale = 1.0 / math.sqrt(2.0 * math.pi * sigma)
    else:
        scale = 1.0 / (sigma * math.sqrt(2.0 * math.pi))
    return scale * math.exp(-(gap * gap) / (2.0 * sigma * sigma)) * cfg.a


def lambda_at(schedule: LambdaSchedule, epoch: int) -> float:
    """Zero through the warm-up, then a linear ramp clamped at ``lambda_max``."""
    if epoch <= schedule.warmup_epochs:
        return 0.0
    if schedule.ramp_epochs == 0:
        return float(schedule.lambda_max)
    frac = (epoch - schedule.warmup_epochs) / schedule.ramp_epochs
    return float(schedule.lambda_max * min(frac, 1.0))


def anomaly_triplet_loss(d: TripletDistances, cfg: MarginConfig, lam: float,
                         n_a: int | None = None, n_n: int | None = None) -> LossValue:
    """Triplet hinge plus ``lam`` times the anomaly hinge.

    With ``cfg.mode == "adaptive"`` the first-term margin comes from
    :func:`adaptive_margin` and the step indices are required.
    """
    if lam < 0:
        raise ConfigError(f"lambda must be >= 0, got {lam}")
    if cfg.mode == "adaptive":
        if n_a is None or n_n is None:
            raise ConfigError("adaptive margin requires anchor and negative step indices")
        m_alpha = adaptive_margin(n_a, n_n, cfg)
    else:
        m_alpha = cfg.m_alpha
    term1 = max(d.d_p - d.d_n + m_alpha, 0.0)
    if lam > 0 and d.d_ano is None:
        raise ConfigError("lambda > 0 requires the anomaly distance d_ano")
    if lam == 0 or d.d_ano is None:
        return LossValue(total=term1 + lam * 0.0, term1=term1, term2=0.0)
    term2 = max(d.d_n - d.d_ano + cfg.m_beta, 0.0)
    return LossValue(total=term1 + lam * term2, term1=term1, term2=term2)


def margins_for(mode: str, cfg: MarginConfig, n_a, n_n) -> np.ndarray:
    """Per-row first-term margins for a loss mode."""
    if mode not in LOSS_MODES:
        raise ConfigError(f"unknown loss mode {mode!r}; expected one of {', '.join(LOSS_MODES)}")
    n_a = np.asarray(n_a)
    if mode.endswith("adaptive"):
        adaptive = replace(cfg, mode="adaptive")
        return np.array([adaptive_margin(a, n, adaptive) for a, n in zip(n_a, n_n)], dtype=np.float64)
    fixed = cfg.m if mode.startswith("triplet") else cfg.m_alpha
    return np.full(n_a.shape, fixed, dtype=np.float64)


@dataclass
class BatchLoss:
    loss: float                 # mean total over rows
    totals: np.ndarray
    term1: np.ndarray
    term2: np.ndarray           # un-weighted, zero where unused
    d_p: np.ndarray
    d_n: np.ndarray
    d_ano: np.ndarray | None
    grads: tuple                # gradients w.r.t. (anchor, positive, negative, anomaly)
    active: tuple               # hinge activity flags (term1, term2) for kink detection


def _dist_and_unit(u, v):
    diff = u - v
    d = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    safe = np.where(d > 0, d, 1.0)
    unit = np.where((d > 0)[:, None], diff / safe[:, None], 0.0)
    return d, unit


def batch_loss(emb_a, emb_p, emb_n, emb_q, n_a, n_n, mode: str, cfg: MarginConfig,
               lam: float = 0.0, with_anomaly_distance: bool = True) -> BatchLoss:
    """Mean loss over a batch and its gradients w.r.t. each embedding row.

    ``emb_q`` (anomaly embeddings) may be ``None`` for the triplet modes.
    Computation is in float64; returned gradients match the input dtype.
    """
    out_dtype = np.result_type(emb_a.dtype, np.float32)
    a, p, n = (np.asarray(e, dtype=np.float64) for e in (emb_a, emb_p, emb_n))
    rows = a.shape[0]
    margin = margins_for(mode, cfg, n_a, n_n)
    d_p, u_ap = _dist_and_unit(a, p)
    d_n, u_an = _dist_and_unit(a, n)
    arg1 = d_p - d_n + margin
    act1 = arg1 > 0
    term1 = np.where(act1, arg1, 0.0)

    uses_anomaly = mode.startswith("anomaly")
    d_ano = None
    term2 = np.zeros(rows)
    act2 = np.zeros(rows, dtype=bool)
    g_q = None
    if emb_q is not None and (uses_anomaly or with_anomaly_distance):
        q = np.asarray(emb_q, dtype=np.float64)
        center = (a + p + n) / 3.0
        d_ano, u_cq = _dist_and_unit(center, q)
    if uses_anomaly and lam > 0:
        if d_ano is None:
            raise ConfigError("lambda > 0 requires anomaly embeddings")
        arg2 = d_n - d_ano + cfg.m_beta
        act2 = arg2 > 0
        term2 = np.where(act2, arg2, 0.0)
        totals = term1 + lam * term2
    else:
        totals = term1 + lam * 0.0 if uses_anomaly else term1.copy()

    # d(mean)/d(row) = 1/rows; hinge subgradient 0 at the kink
    w1 = act1 / rows
    g_a = w1[:, None] * (u_ap - u_an)
    g_p = -w1[:, None] * u_ap
    g_n = w1[:, None] * u_an
    if uses_anomaly and lam > 0:
        w2 = lam * act2 / rows
        g_a += w2[:, None] * u_an
        g_n -= w2[:, None] * u_an
        # d_ano = |center - q|, center = (a + p + n) / 3
        g_c = -w2[:, None] * u_cq
        g_a += g_c / 3.0
        g_p += g_c / 3.0
        g_n += g_c / 3.0
        g_q = -g_c
    elif emb_q is not None:
        g_q = np.zeros_like(a)
    grads = tuple(None if g is None else g.astype(out_dtype) for g in (g_a, g_p, g_n, g_q))
    return BatchLoss(loss=float(totals.mean()) if rows else 0.0, totals=totals, term1=term1,
                     term2=term2, d_p=d_p, d_n=d_n, d_ano=d_ano, grads=grads, active=(act1, act2))
