"""Gradient-check suites: each layer kind alone, and the embedder composed with each loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embed import EmbedderConfig, build_embedder
from .gradcheck import grad_check
from .losses import LOSS_MODES, MarginConfig, adaptive_margin, batch_loss, centroid3
from .nn import MAXPOOL, RELU, Model, conv_spec, linear_spec

TOLERANCE = 1e-4
EPSILON = 1e-3

# small enough for finite differences, same 4-conv + linear topology
SMALL_EMBEDDER = EmbedderConfig(input_size=32, channels=(8, 8, 16, 16), embed_dim=128)


@dataclass
class CheckOutcome:
    check: str
    seed: int
    param: str
    max_rel_error: float
    checked: int
    skipped_kinks: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= TOLERANCE


def _param_fn(model: Model, name: str, objective):
    """``(fn, value_fn, region, param)`` for gradient checks w.r.t. one named parameter tensor."""
    param = dict(model.parameters())[name]
    state = {}

    def value_fn(flat):
        param.value[...] = flat.reshape(param.value.shape)
        value, upstream, extra = objective()
        state["sig"] = model.activation_signature() + list(extra)
        state["upstream"] = upstream
        return value

    def fn(flat):
        value = value_fn(flat)
        model.zero_grad()
        model.backward(state["upstream"])
        return value, param.grad.copy()

    def region(_):
        return state["sig"]

    return fn, value_fn, region, param


def _sample_indices(size: int, rng, limit: int):
    if size <= limit:
        return None
    return np.sort(rng.choice(size, size=limit, replace=False))


def _check_params(model, objective, check, seed, rng, per_param, corrupt=None):
    outcomes = []
    for name, p in model.parameters():
        fn, value_fn, region, param = _param_fn(model, name, objective)
        if corrupt is not None and corrupt[0] == name:
            base_fn = fn

            def fn(flat, base_fn=base_fn):
                value, grad = base_fn(flat)
                return value, grad * corrupt[1]
        point = param.value.copy()
        res = grad_check(fn, point, EPSILON, indices=_sample_indices(point.size, rng, per_param),
                         region=region, detailed=True, value_fn=value_fn)
        param.value[...] = point
        outcomes.append(CheckOutcome(check, seed, name, res.max_rel_error, res.checked, res.skipped_kinks))
    return outcomes


def layer_checks(seed: int, per_param: int = 40, corrupt=None) -> list[CheckOutcome]:
    """Each layer kind on its own, objective ``sum(weights * layer(x))``."""
    rng = np.random.default_rng([seed, 11])
    cases = {
        "conv2d": ([conv_spec(3, 4, 3, 1, 1)], (6, 6, 3)),
        "conv2d-stride2": ([conv_spec(2, 3, 3, 2, 0)], (7, 7, 2)),
        "relu": ([conv_spec(2, 3, 3, 1, 1), RELU], (5, 5, 2)),
        "maxpool2x2": ([conv_spec(2, 3, 3, 1, 1), MAXPOOL], (6, 6, 2)),
        "linear": ([linear_spec(12, 5)], (2, 2, 3)),
    }
    out = []
    for check, (specs, shape) in cases.items():
        model = Model(specs, shape, seed=int(rng.integers(1 << 31)), dtype=np.float64)
        x = rng.standard_normal((3,) + shape)
        w = rng.standard_normal((3,) + model.output_shape)

        def objective(model=model, x=x, w=w):
            y = model.forward(x)
            return float(np.sum(w * y)), w, []

        out += _check_params(model, objective, check, seed, rng, per_param, corrupt)
        # input gradient as well
        state = {}

        def fn_x(flat, model=model, w=w, shape=x.shape):
            model.zero_grad()
            y = model.forward(flat.reshape(shape))
            g = model.backward(w)
            state["sig"] = model.activation_signature()
            return float(np.sum(w * y)), g

        res = grad_check(fn_x, x, EPSILON, region=lambda _: state["sig"], detailed=True)
        out.append(CheckOutcome(check, seed, "input", res.max_rel_error, res.checked, res.skipped_kinks))
    return out


def _active_margins(model, imgs, n_a, n_n, slack: float = 0.1) -> MarginConfig:
    """Margins just above the initial distance gaps.

    Every hinge is then active (a zero gradient would make the check vacuous)
    while the loss stays O(1), which keeps finite-difference round-off on
    zero-gradient coordinates below the tolerance.
    """
    y = model.forward(imgs.reshape((-1,) + model.input_shape))
    a, p, n, q = np.split(y, 4)
    d_p = np.linalg.norm(a - p, axis=1)
    d_n = np.linalg.norm(a - n, axis=1)
    d_ano = np.linalg.norm(centroid3(a, p, n) - q, axis=1)
    slack = slack * float(np.mean(d_p + d_n))
    need = d_n - d_p + slack
    unit = MarginConfig(a=1.0).for_steps(8)
    shape = np.array([adaptive_margin(i, j, unit) for i, j in zip(n_a, n_n)])
    return MarginConfig(m=max(need.max(), slack), a=max((need / shape).max(), slack),
                        m_alpha=max(need.max(), slack), m_beta=max((d_ano - d_n).max() + slack, slack),
                        sigma=unit.sigma)


def loss_checks(seed: int, modes=LOSS_MODES, rows: int = 1, per_param: int = 24, lam: float = 1.0,
                corrupt=None) -> list[CheckOutcome]:
    """Small embedder composed with every loss, checked w.r.t. all parameter tensors."""
    rng = np.random.default_rng([seed, 23])
    out = []
    for mode in modes:
        model = build_embedder(SMALL_EMBEDDER, seed=int(rng.integers(1 << 31)), dtype=np.float64)
        # shrinking the head shrinks all distances: round-off in the loss
        # falls with them while relative sensitivities of the conv weights stay put
        dict(model.parameters())["linear1.weight"].value *= 0.1
        shape = model.input_shape
        imgs = rng.random((4, rows) + shape)
        n_a = rng.integers(1, 9, size=rows)
        n_n = (n_a + rng.integers(0, 7, size=rows)) % 8 + 1   # any other step
        margins = _active_margins(model, imgs, n_a, n_n)

        def objective(model=model, imgs=imgs, n_a=n_a, n_n=n_n, mode=mode, margins=margins):
            y = model.forward(imgs.reshape((-1,) + shape))
            a, p, n, q = (y[i * rows:(i + 1) * rows] for i in range(4))
            res = batch_loss(a, p, n, q, n_a, n_n, mode, margins, lam if mode.startswith("anomaly") else 0.0)
            g = list(res.grads)
            return res.loss, np.concatenate(g), list(res.active)

        out += _check_params(model, objective, f"embedder+{mode}", seed, rng, per_param, corrupt)
    return out


def run_suite(seeds: int = 20, corrupt=None) -> list[CheckOutcome]:
    """All checks for seeds ``0..seeds-1``; ``corrupt=(param_name, factor)`` scales one analytic gradient."""
    results = []
    for seed in range(seeds):
        results += layer_checks(seed, corrupt=corrupt)
        results += loss_checks(seed, corrupt=corrupt)
    return results
