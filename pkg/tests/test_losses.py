import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stepmetric.errors import ConfigError
from stepmetric.losses import (LOSS_MODES, LambdaSchedule, MarginConfig, TripletDistances, adaptive_margin,
                               anomaly_triplet_loss, batch_loss, centroid3, euclidean_distance, lambda_at,
                               step_index_sigma, triplet_loss)

# independent high-precision evaluations (mpmath, 50 digits)
SIGMA_8 = 2.29128784747792
PEAK_8 = 0.26355438111381427
M_5_6 = 0.23961216363800895

dist = st.floats(0, 50, allow_nan=False)
ADAPTIVE = MarginConfig(mode="adaptive", a=1.0).for_steps(8)


def test_distance_examples(rng):
    assert euclidean_distance([0, 0], [3, 4]) == 5.0
    u = rng.standard_normal(128)
    assert euclidean_distance(u, u) == 0.0
    v = rng.standard_normal(128)
    naive = 0.0
    for i in range(128):
        naive += (float(u[i]) - float(v[i])) ** 2
    assert euclidean_distance(u, v) == pytest.approx(math.sqrt(naive), rel=1e-6)
    assert euclidean_distance(u, v) == euclidean_distance(v, u)


def test_distance_dimension_mismatch():
    with pytest.raises(ConfigError):
        euclidean_distance([1, 2], [1, 2, 3])


def test_centroid():
    np.testing.assert_array_equal(centroid3([0, 0], [3, 0], [0, 3]), [1, 1])
    x = np.array([0.3, -2.0])
    np.testing.assert_array_equal(centroid3(x, x, x), x)
    with pytest.raises(ConfigError):
        centroid3([0], [0, 1], [0])


@given(st.lists(st.floats(-1e3, 1e3), min_size=9, max_size=9))
def test_centroid_permutation_symmetry(vals):
    a, p, n = np.array(vals[:3]), np.array(vals[3:6]), np.array(vals[6:])
    ref = centroid3(a, p, n)
    for perm in ((p, a, n), (n, p, a), (a, n, p), (p, n, a), (n, a, p)):
        np.testing.assert_allclose(centroid3(*perm), ref, rtol=1e-12, atol=1e-9)


def test_triplet_examples():
    assert triplet_loss(TripletDistances(0.2, 1.0), 0.5).total == 0.0
    assert triplet_loss(TripletDistances(1.0, 0.2), 0.5).total == pytest.approx(1.3, abs=1e-15)
    assert triplet_loss(TripletDistances(0.7, 0.7), 0.0).total == 0.0
    with pytest.raises(ConfigError):
        triplet_loss(TripletDistances(1, 1), -0.1)


def test_distances_validated():
    with pytest.raises(ConfigError):
        TripletDistances(-1.0, 1.0)
    with pytest.raises(ConfigError):
        TripletDistances(1.0, float("nan"))


def test_sigma_from_step_variance():
    assert step_index_sigma(8) == pytest.approx(SIGMA_8, abs=1e-13)
    assert ADAPTIVE.sigma ** 2 == pytest.approx(5.25, abs=1e-13)


def test_adaptive_margin_peak():
    for n in range(1, 9):
        assert abs(adaptive_margin(n, n, ADAPTIVE) - PEAK_8) <= 1e-12
    assert abs(adaptive_margin(5, 6, ADAPTIVE) - M_5_6) <= 1e-12
    scaled = MarginConfig(mode="adaptive", a=3.0).for_steps(8)
    assert abs(adaptive_margin(2, 2, scaled) - 3 * PEAK_8) <= 1e-12


def test_adaptive_margin_standard_form():
    cfg = MarginConfig(mode="adaptive", a=1.0, form="standard").for_steps(8)
    assert adaptive_margin(1, 1, cfg) == pytest.approx(1 / (SIGMA_8 * math.sqrt(2 * math.pi)), rel=1e-12)


def test_adaptive_margin_shape_over_all_pairs():
    for i in range(1, 9):
        for j in range(1, 9):
            assert adaptive_margin(i, j, ADAPTIVE) == adaptive_margin(j, i, ADAPTIVE)
            assert adaptive_margin(i, j, ADAPTIVE) > 0
            if abs(i - j) < 7:
                k = j + 1 if j >= i else j - 1
                if 1 <= k <= 8:
                    assert adaptive_margin(i, k, ADAPTIVE) < adaptive_margin(i, j, ADAPTIVE)
    assert adaptive_margin(5, 6, ADAPTIVE) > adaptive_margin(5, 8, ADAPTIVE)


def test_adaptive_margin_needs_sigma():
    with pytest.raises(ConfigError):
        adaptive_margin(1, 2, MarginConfig(mode="adaptive"))
    with pytest.raises(ConfigError):
        MarginConfig(mode="adaptive", sigma=0.0)
    with pytest.raises(ConfigError):
        MarginConfig(mode="adaptive", sigma=-1.0)


def test_lambda_schedule():
    s = LambdaSchedule()
    assert lambda_at(s, 10) == 0.0
    assert lambda_at(s, 50) == 0.0
    assert lambda_at(s, 75) == 0.5
    assert lambda_at(s, 10000) == 1.0
    values = [lambda_at(s, e) for e in range(1, 201)]
    assert all(b >= a for a, b in zip(values, values[1:]))
    assert all(v == 0 for v in values[:50])
    assert lambda_at(LambdaSchedule(ramp_epochs=0), 51) == 1.0


def test_anomaly_loss_examples():
    cfg = MarginConfig(m_alpha=0.5, m_beta=0.5)
    assert anomaly_triplet_loss(TripletDistances(0.2, 1.0, 2.0), cfg, 1.0).total == 0.0
    cfg = MarginConfig(m_alpha=0.2, m_beta=0.3)
    out = anomaly_triplet_loss(TripletDistances(1.0, 0.5, 0.2), cfg, 0.5)
    assert out.term1 == pytest.approx(0.7, abs=1e-15)
    assert out.term2 == pytest.approx(0.6, abs=1e-15)
    assert out.total == pytest.approx(1.0, abs=1e-15)


def test_anomaly_loss_requires_distance():
    with pytest.raises(ConfigError):
        anomaly_triplet_loss(TripletDistances(1.0, 0.5), MarginConfig(), 0.5)
    with pytest.raises(ConfigError):
        anomaly_triplet_loss(TripletDistances(1.0, 0.5, 1.0), MarginConfig(mode="adaptive").for_steps(8), 0.0)


@given(dist, dist, st.one_of(st.none(), dist), st.floats(0.01, 5))
def test_zero_lambda_degenerates_bitwise(dp, dn, dano, m):
    d = TripletDistances(dp, dn, dano)
    a = anomaly_triplet_loss(d, MarginConfig(m_alpha=m), 0.0)
    assert a.total == triplet_loss(d, m).total
    assert a.term2 == 0.0


@given(dist, dist, dist, st.floats(0.01, 5), st.floats(0.01, 5), st.floats(0, 2))
def test_losses_nonnegative_and_total_consistent(dp, dn, dano, ma, mb, lam):
    out = anomaly_triplet_loss(TripletDistances(dp, dn, dano), MarginConfig(m_alpha=ma, m_beta=mb), lam)
    assert out.total >= 0 and out.term1 >= 0 and out.term2 >= 0
    assert out.total == out.term1 + lam * out.term2


@given(dist, dist, st.floats(0, 5), st.floats(0, 1))
def test_triplet_monotonicity(dp, dn, m, bump):
    base = triplet_loss(TripletDistances(dp, dn), m).total
    assert triplet_loss(TripletDistances(dp, dn), m + bump).total >= base
    assert triplet_loss(TripletDistances(dp + bump, dn), m).total >= base
    assert triplet_loss(TripletDistances(dp, dn + bump), m).total <= base


@given(dist, dist, dist, st.floats(0, 3), st.floats(0.01, 2))
def test_larger_anomaly_distance_never_raises_loss(dp, dn, dano, bump, lam):
    cfg = MarginConfig(m_alpha=0.5, m_beta=0.5)
    lo = anomaly_triplet_loss(TripletDistances(dp, dn, dano), cfg, lam).total
    hi = anomaly_triplet_loss(TripletDistances(dp, dn, dano + bump), cfg, lam).total
    assert hi <= lo


@given(st.integers(0, 2**31 - 1), st.sampled_from(LOSS_MODES), st.floats(0, 1))
def test_batch_loss_matches_scalar_reference(seed, mode, lam):
    r = np.random.default_rng(seed)
    a, p, n, q = (r.standard_normal((5, 6)) for _ in range(4))
    n_a = r.integers(1, 9, size=5)
    n_n = r.integers(1, 9, size=5)
    cfg = MarginConfig(m=0.8, m_alpha=0.6, m_beta=0.4, a=2.0).for_steps(8)
    res = batch_loss(a, p, n, q, n_a, n_n, mode, cfg, lam)
    totals = []
    for i in range(5):
        d = TripletDistances(euclidean_distance(a[i], p[i]), euclidean_distance(a[i], n[i]),
                             euclidean_distance(centroid3(a[i], p[i], n[i]), q[i]))
        if mode == "triplet_fixed":
            totals.append(triplet_loss(d, cfg.m).total)
        elif mode == "triplet_adaptive":
            totals.append(triplet_loss(d, adaptive_margin(n_a[i], n_n[i], cfg)).total)
        else:
            mcfg = MarginConfig(mode="adaptive" if mode.endswith("adaptive") else "fixed", m_alpha=0.6,
                                m_beta=0.4, a=2.0).for_steps(8)
            totals.append(anomaly_triplet_loss(d, mcfg, lam, int(n_a[i]), int(n_n[i])).total)
    np.testing.assert_allclose(res.totals, totals, rtol=1e-12, atol=1e-12)
    assert res.loss == pytest.approx(np.mean(totals), rel=1e-12, abs=1e-12)


def test_unknown_mode():
    z = np.zeros((1, 2))
    with pytest.raises(ConfigError, match="triplet_fixed"):
        batch_loss(z, z, z, z, [1], [2], "bogus", MarginConfig())
