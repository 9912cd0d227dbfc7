"""Central finite-difference gradient checking."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import GradientError


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_index: int
    checked: int
    skipped_kinks: int


def relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))


def _same_region(a, b) -> bool:
    if a is None or b is None:
        return True
    if len(a) != len(b):
        return False
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(fn: Callable, point: np.ndarray, epsilon: float = 1e-3,
               indices: Sequence[int] | None = None, region: Callable | None = None,
               detailed: bool = False, value_fn: Callable | None = None):
    """Compare ``fn``'s analytic gradient with central differences.

    ``fn(x)`` returns ``(value, grad)``. Only ``indices`` of the flattened point
    are probed when given. If ``region(x)`` is supplied it must return the
    discrete activation pattern at ``x``; coordinates whose +/- epsilon probes
    land in a different pattern straddle a kink and are skipped. ``region`` is
    always called right after ``fn`` on the same point, so it may read state
    cached by that call. ``value_fn(x)``, when given, returns only the value
    and is used for the probes (it must leave the same state for ``region``).

    Returns the max relative error, or a :class:`GradCheckResult` when
    ``detailed`` is set.
    """
    x = np.array(point, dtype=np.float64).ravel()
    shape = np.shape(point)
    value, analytic = fn(x.reshape(shape))
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    if not np.isfinite(value) or not np.all(np.isfinite(analytic)):
        bad = int(np.argmax(~np.isfinite(analytic))) if np.all(np.isfinite(value)) else -1
        raise GradientError(f"non-finite value/gradient at the base point (coordinate {bad})")
    base_region = region(x.reshape(shape)) if region is not None else None
    probe = value_fn if value_fn is not None else (lambda z: fn(z)[0])
    coords = range(x.size) if indices is None else indices
    worst, worst_idx, checked, skipped = 0.0, -1, 0, 0
    for i in coords:
        orig = x[i]
        x[i] = orig + epsilon
        fp = probe(x.reshape(shape))
        same = region is None or _same_region(base_region, region(x.reshape(shape)))
        x[i] = orig - epsilon
        fm = probe(x.reshape(shape))
        same = same and (region is None or _same_region(base_region, region(x.reshape(shape))))
        x[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise GradientError(f"non-finite function value while probing coordinate {i}")
        if not same:
            skipped += 1
            continue
        numeric = (fp - fm) / (2.0 * epsilon)
        err = float(relative_errors(analytic[i], numeric))
        checked += 1
        if err > worst:
            worst, worst_idx = err, int(i)
    if detailed:
        return GradCheckResult(worst, worst_idx, checked, skipped)
    return worst
