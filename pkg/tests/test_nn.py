import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stepmetric.errors import ConfigError, StateError, TrainingError
from stepmetric.gradcheck import grad_check
from stepmetric.nn import MAXPOOL, RELU, Model, Parameter, conv_spec, linear_spec, sgd_step


def direct_conv(x, w, b, stride, padding):
    """Loop oracle: NHWC input, (k, k, cin, cout) weight, row-major with input channel innermost."""
    n, h, wd, cin = x.shape
    k, _, _, cout = w.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    out = np.zeros((n, ho, wo, cout))
    for i in range(n):
        for r in range(ho):
            for c in range(wo):
                for o in range(cout):
                    acc = b[o]
                    for di in range(k):
                        for dj in range(k):
                            for ch in range(cin):
                                acc += xp[i, r * stride + di, c * stride + dj, ch] * w[di, dj, ch, o]
                    out[i, r, c, o] = acc
    return out


def test_conv_hand_example():
    m = Model([conv_spec(1, 1, kernel=2, stride=1, padding=0)], (2, 2, 1))
    m.layers[0].params["weight"].value[...] = 1.0
    x = np.array([[1, 2], [3, 4]], dtype=np.float32).reshape(2, 2, 1)
    assert m.forward(x).ravel().tolist() == [10.0]


def test_identity_1x1_conv(rng):
    m = Model([conv_spec(3, 3, kernel=1, stride=1, padding=0)], (5, 7, 3))
    m.layers[0].params["weight"].value[...] = np.eye(3, dtype=np.float32).reshape(1, 1, 3, 3)
    x = rng.random((2, 5, 7, 3)).astype(np.float32)
    np.testing.assert_array_equal(m.forward(x), x)


@pytest.mark.parametrize("k,stride,pad", [(3, 1, 1), (3, 1, 0), (2, 2, 0), (3, 2, 1), (1, 1, 0), (5, 1, 2)])
def test_conv_matches_direct_oracle(rng, k, stride, pad):
    m = Model([conv_spec(3, 4, kernel=k, stride=stride, padding=pad)], (9, 8, 3), seed=4)
    conv = m.layers[0]
    conv.params["bias"].value[...] = rng.standard_normal(4).astype(np.float32)
    x = rng.random((2, 9, 8, 3)).astype(np.float32)
    want = direct_conv(x.astype(np.float64), conv.params["weight"].value.astype(np.float64),
                       conv.params["bias"].value.astype(np.float64), stride, pad)
    got = m.forward(x)
    np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-5)


@pytest.mark.parametrize("k,stride,pad", [(3, 1, 1), (3, 2, 1), (2, 2, 0), (5, 1, 2)])
def test_conv_input_gradient_matches_loop_adjoint(rng, k, stride, pad):
    # <conv(x), g> is linear in x, so its input gradient is the adjoint applied to g
    m = Model([conv_spec(2, 3, kernel=k, stride=stride, padding=pad)], (7, 6, 2), seed=1, dtype=np.float64)
    x = rng.standard_normal((2, 7, 6, 2))
    y = m.forward(x)
    g = rng.standard_normal(y.shape)
    gx = m.backward(g)
    w = m.layers[0].params["weight"].value
    zero_b = np.zeros(3)
    want = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = 1.0
        want[idx] = np.sum(direct_conv(e, w, zero_b, stride, pad) * g)
    np.testing.assert_allclose(gx, want, rtol=1e-10, atol=1e-12)


def test_forward_shape_mismatch_names_layer():
    m = Model([conv_spec(3, 4), RELU], (8, 8, 3))
    with pytest.raises(ConfigError, match="conv2d1"):
        m.forward(np.zeros((8, 8, 2), np.float32))


def test_inconsistent_chain_rejected():
    with pytest.raises(ConfigError, match="linear"):
        Model([conv_spec(3, 4), MAXPOOL, linear_spec(10, 2)], (8, 8, 3))


def test_forward_is_deterministic(rng):
    m = Model([conv_spec(3, 4), RELU, MAXPOOL, linear_spec(4 * 4 * 4, 6)], (8, 8, 3), seed=2)
    x = rng.random((3, 8, 8, 3)).astype(np.float32)
    np.testing.assert_array_equal(m.forward(x), m.forward(x))


def test_backward_before_forward():
    m = Model([linear_spec(4, 2)], (4,))
    with pytest.raises(StateError):
        m.backward(np.ones((1, 2), np.float32))


def test_zero_upstream_gives_zero_grads(rng):
    m = Model([conv_spec(3, 4), RELU, MAXPOOL, linear_spec(64, 5)], (8, 8, 3), seed=3)
    y = m.forward(rng.random((2, 8, 8, 3)).astype(np.float32))
    gx = m.backward(np.zeros_like(y))
    assert not gx.any()
    assert all(not p.grad.any() for _, p in m.parameters())


def test_relu_blocks_negative_preactivation():
    m = Model([RELU], (4,))
    x = np.array([[-1.0, 2.0, -3.0, 4.0]], np.float32)
    m.forward(x)
    np.testing.assert_array_equal(m.backward(np.ones_like(x)), [[0, 1, 0, 1]])


@given(st.integers(1, 3), st.integers(2, 9), st.integers(2, 9), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_maxpool_brute_force(n, h, w, c, seed):
    x = np.random.default_rng(seed).integers(-3, 4, size=(n, h, w, c)).astype(np.float32)  # many ties
    m = Model([MAXPOOL], (h, w, c))
    y = m.forward(x)
    assert y.shape == (n, h // 2, w // 2, c)
    for i, r, q, ch in np.ndindex(y.shape):
        assert y[i, r, q, ch] == x[i, 2 * r:2 * r + 2, 2 * q:2 * q + 2, ch].max()
    # gradient routes to the first maximal element of each window, row-major
    gx = m.backward(np.ones_like(y))
    for i, r, q, ch in np.ndindex(y.shape):
        win = x[i, 2 * r:2 * r + 2, 2 * q:2 * q + 2, ch].ravel()
        expect = np.zeros(4, np.float32)
        expect[int(np.argmax(win))] = 1
        np.testing.assert_array_equal(gx[i, 2 * r:2 * r + 2, 2 * q:2 * q + 2, ch].ravel(), expect)


def test_maxpool_drops_odd_edge():
    m = Model([MAXPOOL], (3, 3, 1))
    x = np.arange(9, dtype=np.float32).reshape(1, 3, 3, 1)
    assert m.forward(x).ravel().tolist() == [4.0]


@pytest.mark.parametrize("seed", range(20))
def test_each_layer_kind_passes_grad_check(seed):
    from stepmetric.verify import layer_checks

    for outcome in layer_checks(seed):
        assert outcome.max_rel_error <= 1e-4, outcome


def test_sgd_plain_step():
    p = Parameter(np.array([1.0]))
    p.grad[...] = 0.5
    sgd_step([("w", p)], lr=0.1, momentum=0.0)
    assert p.value[0] == pytest.approx(0.95, abs=1e-15)
    assert p.grad[0] == 0.0


def test_sgd_zero_grad_decays_buffer():
    p = Parameter(np.array([2.0]))
    p.momentum_buf[...] = 0.4
    sgd_step([("w", p)], lr=0.1, momentum=0.9)
    assert p.momentum_buf[0] == pytest.approx(0.36, abs=1e-15)
    assert p.value[0] == pytest.approx(2.0 - 0.1 * 0.36, abs=1e-15)


def test_sgd_two_momentum_steps_match_unrolled():
    lr, mu, v0, g1, g2 = 0.01, 0.9, 0.7, 0.3, -1.1
    p = Parameter(np.array([v0]))
    p.grad[...] = g1
    sgd_step([("w", p)], lr, mu)
    p.grad[...] = g2
    sgd_step([("w", p)], lr, mu)
    b1 = g1
    b2 = mu * g1 + g2
    assert abs(p.value[0] - (v0 - lr * b1 - lr * b2)) <= 1e-12


def test_sgd_rejects_non_finite_gradient():
    p = Parameter(np.array([1.0, 2.0]))
    p.grad[1] = np.nan
    with pytest.raises(TrainingError, match="epoch 3"):
        sgd_step([("w", p)], 0.1, 0.9, where="epoch 3 batch 1")
    assert p.value.tolist() == [1.0, 2.0]


def test_float64_mode_for_checks(rng):
    m = Model([conv_spec(2, 2), RELU, MAXPOOL, linear_spec(2 * 2 * 2, 3)], (4, 4, 2), seed=0, dtype=np.float64)
    x = rng.random((1, 4, 4, 2))
    w = rng.standard_normal((1, 3))

    def fn(flat):
        m.zero_grad()
        y = m.forward(flat.reshape(x.shape))
        return float(np.sum(y * w)), m.backward(w)

    assert m.forward(x).dtype == np.float64
    assert grad_check(fn, x) <= 1e-6
