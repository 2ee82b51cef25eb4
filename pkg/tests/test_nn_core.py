import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from uwaloc import nn_core as nn
from uwaloc.localizer import mean_jsd_loss

from gradcheck import max_relative_error, small_model


def pmf_strategy(n):
    return arrays(np.float64, n, elements=st.floats(0, 1)).filter(lambda a: a.sum() > 1e-3).map(lambda a: a / a.sum())


def test_conv_ones():
    out = nn.conv2d_forward(np.ones((1, 3, 3)), np.ones((1, 1, 3, 3)), np.zeros(1))
    assert out.shape == (1, 1, 1)
    assert out[0, 0, 0] == 9


def test_conv_identity_kernel(rng):
    x = rng.standard_normal((1, 6, 7))
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1, 1] = 1
    assert np.allclose(nn.conv2d_forward(x, k, np.zeros(1))[0], x[0, 1:-1, 1:-1])


def test_conv_shape_and_errors(rng):
    out = nn.conv2d_forward(rng.standard_normal((2, 21, 21)), rng.standard_normal((6, 2, 3, 3)), np.zeros(6))
    assert out.shape == (6, 19, 19)
    with pytest.raises(ValueError):
        nn.conv2d_forward(rng.standard_normal((3, 21, 21)), rng.standard_normal((6, 2, 3, 3)), np.zeros(6))
    with pytest.raises(ValueError):
        nn.conv2d_forward(rng.standard_normal((2, 2, 2)), rng.standard_normal((6, 2, 3, 3)), np.zeros(6))


def test_conv_layer_matches_functional(rng):
    layer = nn.Conv2d(2, 5, 3, rng)
    x = rng.standard_normal((4, 2, 8, 8))
    ref = np.stack([nn.conv2d_forward(xi, layer.params["weight"], layer.params["bias"]) for xi in x])
    assert np.allclose(layer.forward(x), ref)
    dout = rng.standard_normal(ref.shape)
    dx = layer.backward(dout)
    dx_ref, dw_ref, db_ref = nn.conv2d_backward(x, layer.params["weight"], dout)
    assert np.allclose(dx, dx_ref)
    assert np.allclose(layer.grads["weight"], dw_ref)
    assert np.allclose(layer.grads["bias"], db_ref)


def test_conv_brute_force(rng):
    x = rng.standard_normal((2, 6, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    out = nn.conv2d_forward(x, w, b)
    for o in range(3):
        for i in range(4):
            for j in range(3):
                assert out[o, i, j] == pytest.approx(np.sum(x[:, i:i + 3, j:j + 3] * w[o]) + b[o])


def test_linear_examples(rng):
    x = rng.standard_normal(5)
    assert np.allclose(nn.linear_forward(x, np.eye(5)), x)
    b = rng.standard_normal(3)
    assert np.allclose(nn.linear_forward(x, np.zeros((3, 5)), b), b)
    out = nn.linear_forward(rng.standard_normal(256), rng.standard_normal((82, 256)))
    assert out.shape == (82,) and np.all(np.isfinite(out))
    with pytest.raises(ValueError):
        nn.linear_forward(x, np.eye(4))


def test_linear_squared_error_gradient(rng):
    layer = nn.Linear(4, 3, rng, bias=False)
    x = rng.standard_normal((1, 4))
    y = rng.standard_normal((1, 3))
    out = layer.forward(x)
    layer.backward(2 * (out - y))
    W = layer.params["weight"]
    assert np.allclose(layer.grads["weight"], 2 * np.outer(W @ x[0] - y[0], x[0]))


def test_softmax_examples():
    assert np.allclose(nn.softmax(np.zeros(4)), 0.25)
    assert np.allclose(nn.softmax(np.array([0.0, np.log(3.0)])), [0.25, 0.75])
    z = np.array([1000.0, 999.0, -5.0])
    assert np.all(np.isfinite(nn.softmax(z)))
    assert np.allclose(nn.softmax(z + 17.0), nn.softmax(z))


def test_jsd_examples():
    p = np.array([0.2, 0.3, 0.5])
    assert nn.jsd(p, p) == pytest.approx(0.0, abs=1e-15)
    assert nn.jsd(np.array([1.0, 0]), np.array([0, 1.0])) == pytest.approx(np.log(2))
    assert nn.jsd(np.array([0.5, 0.5]), np.array([1.0, 0.0])) == pytest.approx(0.2158, abs=1e-4)
    # hand evaluation of the two KL terms
    kl_p = 0.5 * np.log(0.5 / 0.75) + 0.5 * np.log(0.5 / 0.25)
    kl_q = np.log(1 / 0.75)
    assert nn.jsd(np.array([0.5, 0.5]), np.array([1.0, 0.0])) == pytest.approx(0.5 * (kl_p + kl_q))


def test_entropy_examples():
    assert nn.entropy(np.eye(5)[2]) == 0
    assert nn.entropy(np.full(82, 1 / 82)) == pytest.approx(np.log(82))
    assert nn.entropy(np.array([0.5, 0.5])) == pytest.approx(np.log(2))


@settings(max_examples=100, deadline=None)
@given(pmf_strategy(6), pmf_strategy(6))
def test_jsd_symmetric_and_bounded(p, q):
    d = nn.jsd(p, q)
    assert d == pytest.approx(nn.jsd(q, p), abs=1e-12)
    assert -1e-12 <= d <= np.log(2) + 1e-12


def test_softmax_jsd_logit_gradient_sums_to_zero(rng):
    z = rng.standard_normal((3, 8))
    q = nn.softmax(z)
    p = nn.softmax(rng.standard_normal((3, 8)))
    dz = nn.softmax_backward(q, nn.jsd_grad_q(p, q))
    assert np.allclose(dz.sum(axis=1), 0, atol=1e-15)


def test_jsd_gradient_vs_finite_difference(rng):
    p = nn.softmax(rng.standard_normal(6))
    z = rng.standard_normal(6)
    h = 1e-6
    ana = nn.softmax_backward(nn.softmax(z), nn.jsd_grad_q(p, nn.softmax(z)))
    num = [(nn.jsd(p, nn.softmax(z + h * e)) - nn.jsd(p, nn.softmax(z - h * e))) / (2 * h) for e in np.eye(6)]
    assert np.allclose(ana, num, rtol=1e-6, atol=1e-10)


def test_entropy_gradient_vs_finite_difference(rng):
    z = rng.standard_normal(6)
    h = 1e-6
    ana = nn.softmax_backward(nn.softmax(z), nn.entropy_grad(nn.softmax(z)))
    num = [(nn.entropy(nn.softmax(z + h * e)) - nn.entropy(nn.softmax(z - h * e))) / (2 * h) for e in np.eye(6)]
    assert np.allclose(ana, num, rtol=1e-6, atol=1e-10)


def test_network_jsd_gradient_check(rng):
    model = small_model(seed=3)
    x = rng.standard_normal((5, 2, 9, 9))
    y = nn.softmax(rng.standard_normal((5, 8)))

    def objective(m, backward=True):
        loss = mean_jsd_loss(m, x, y, backward=backward)
        return loss, (m.gradients() if backward else {})

    assert max_relative_error(model, objective, rng) < 1e-4


def test_adam_first_step_magnitude():
    p = {"w": np.array([1.0, -2.0, 3.0])}
    state = nn.AdamState(learning_rate=1e-3)
    nn.adam_step(p, {"w": np.array([0.5, -4.0, 1e-3])}, state)
    assert np.allclose(np.abs(p["w"] - [1.0, -2.0, 3.0]), 1e-3, rtol=1e-4)


def test_adam_zero_gradient():
    p = {"w": np.array([1.0, 2.0])}
    state = nn.AdamState(learning_rate=0.1)
    nn.adam_step(p, {"w": np.zeros(2)}, state)
    assert np.array_equal(p["w"], [1.0, 2.0])
    assert state.step == 1


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        nn.adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, nn.AdamState(0.1))


def test_adam_matches_reference_formula(rng):
    w = rng.standard_normal(4)
    p = {"w": w.copy()}
    state = nn.AdamState(learning_rate=0.01)
    m = v = np.zeros(4)
    for t in range(1, 6):
        g = rng.standard_normal(4)
        nn.adam_step(p, {"w": g}, state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    assert np.allclose(p["w"], w)


def test_adam_deterministic(rng):
    x = rng.standard_normal((4, 2, 9, 9))
    y = nn.softmax(rng.standard_normal((4, 8)))
    runs = []
    for _ in range(2):
        model = small_model(seed=11)
        state = nn.AdamState(learning_rate=1e-2)
        for _ in range(5):
            mean_jsd_loss(model, x, y, backward=True)
            nn.adam_step(model.parameters(), model.gradients(), state)
        runs.append(model.parameters())
    for k in runs[0]:
        assert np.array_equal(runs[0][k], runs[1][k])


def test_check_finite():
    with pytest.raises(nn.NonFiniteError):
        nn.check_finite(np.array([1.0, np.nan]), "x")
