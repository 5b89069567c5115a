import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from otdrfault import nn


def test_dense_identity():
    d = nn.Dense(2, 2)
    d.params["weight"] = np.eye(2)
    y, _ = nn.forward([d], np.array([3.0, -1.0]))
    np.testing.assert_array_equal(y, [3.0, -1.0])


def test_conv_hand_example():
    c = nn.Conv1d(1, 1, 2)
    c.params["weight"] = np.array([[[1.0, -1.0]]])
    y, _ = nn.forward([c], np.array([[5.0, 3.0, 8.0]]))
    np.testing.assert_array_equal(y, [[2.0, -5.0]])


def test_conv_stride():
    c = nn.Conv1d(1, 1, 2, stride=2)
    c.params["weight"] = np.array([[[1.0, 1.0]]])
    y, _ = nn.forward([c], np.arange(7.0)[None])
    np.testing.assert_array_equal(y, [[1.0, 5.0, 9.0]])


def test_softmax_symmetric():
    y, _ = nn.forward([nn.Softmax()], np.array([0.0, 0.0]))
    np.testing.assert_array_equal(y, [0.5, 0.5])


def test_relu_and_pool():
    y, _ = nn.forward([nn.ReLU(), nn.MaxPool1d(2)], np.array([[-1.0, 2.0, 3.0, 3.0, 5.0]]))
    np.testing.assert_array_equal(y, [[2.0, 3.0]])


def test_maxpool_routes_to_first_max():
    pool = nn.MaxPool1d(3)
    _, cache = nn.forward([pool], np.array([[1.0, 4.0, 4.0, 0.0, 0.0, 0.0]]))
    _, gx = nn.backward([pool], cache, np.array([[1.0, 1.0]]))
    np.testing.assert_array_equal(gx, [[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]])


def test_relu_subgradient_zero():
    _, cache = nn.forward([nn.ReLU()], np.array([[0.0, 1.0]]))
    _, gx = nn.backward([nn.ReLU()], cache, np.array([[1.0, 1.0]]))
    np.testing.assert_array_equal(gx, [[0.0, 1.0]])


def test_dense_sum_gradient():
    rng = np.random.default_rng(0)
    d = nn.Dense(3, 2)
    d.params["weight"] = rng.standard_normal((2, 3))
    x = np.array([0.5, -2.0, 1.5])
    _, cache = nn.forward([d], x)
    grads, _ = nn.backward([d], cache, np.ones(2))
    np.testing.assert_allclose(grads[0]["weight"], np.outer(np.ones(2), x))
    np.testing.assert_allclose(grads[0]["bias"], np.ones(2))


def test_zero_grad_out():
    layers = random_model(np.random.default_rng(3), 0)
    x = np.random.default_rng(4).standard_normal((1, 12))
    y, cache = nn.forward(layers, x)
    grads, gx = nn.backward(layers, cache, np.zeros_like(y))
    assert all(np.all(g == 0) for layer in grads for g in layer.values())
    assert np.all(gx == 0)


def test_shape_mismatch():
    with pytest.raises(nn.ShapeError):
        nn.forward([nn.Dense(3, 2)], np.ones(4))
    with pytest.raises(nn.ShapeError):
        nn.check_shapes([nn.Conv1d(1, 2, 9)], (1, 5))
    with pytest.raises(nn.ShapeError):
        nn.backward([nn.ReLU(), nn.ReLU()], [False, [None]], np.ones(2))


def random_model(rng, k):
    """Tiny stacks cycling through every layer kind."""
    length = 12
    kind = k % 4
    if kind == 0:
        conv = nn.Conv1d(1, 2, 3)
        out = 2 * (length - 2)
        layers = [conv, nn.ReLU(), nn.Dense(out, 3)]
    elif kind == 1:
        layers = [nn.Conv1d(1, 3, 3, stride=2), nn.ReLU(), nn.MaxPool1d(2), nn.Dense(3 * 2, 2)]
    elif kind == 2:
        layers = [nn.Conv1d(1, 2, 4), nn.ReLU(), nn.Conv1d(2, 2, 3), nn.MaxPool1d(3), nn.Dense(2 * 2, 3), nn.Softmax()]
    else:
        layers = [nn.Conv1d(1, 2, 5), nn.MaxPool1d(2), nn.Dense(2 * 4, 4), nn.ReLU(), nn.Dense(4, 2)]
    for layer in layers:
        for name in layer.param_names:
            layer.params[name] = rng.standard_normal(layer.params[name].shape)
    return layers


def finite_difference_check(layers, x, proj, h=1e-5):
    def loss():
        y, _ = nn.forward(layers, x)
        return float(np.sum(y * proj))

    y, cache = nn.forward(layers, x)
    grads, _ = nn.backward(layers, cache, proj)
    worst = 0.0
    for layer, g in zip(layers, grads):
        for name in layer.param_names:
            p = layer.params[name]
            for idx in np.ndindex(p.shape):
                orig = p[idx]
                p[idx] = orig + h
                up = loss()
                p[idx] = orig - h
                down = loss()
                p[idx] = orig
                numeric = (up - down) / (2 * h)
                analytic = g[name][idx]
                err = abs(numeric - analytic)
                if err > 1e-7:
                    worst = max(worst, err / max(abs(numeric), abs(analytic)))
    return worst


@pytest.mark.parametrize("k", range(24))
def test_gradient_check(k):
    rng = np.random.default_rng(100 + k)
    layers = random_model(rng, k)
    x = rng.standard_normal((1, 12))
    y, _ = nn.forward(layers, x)
    proj = rng.standard_normal(y.shape)
    assert finite_difference_check(layers, x, proj) < 1e-4


def test_input_gradient_matches_fd():
    rng = np.random.default_rng(9)
    layers = random_model(rng, 2)
    x = rng.standard_normal((1, 12))
    y, cache = nn.forward(layers, x)
    proj = rng.standard_normal(y.shape)
    _, gx = nn.backward(layers, cache, proj)
    h = 1e-6
    for j in range(12):
        xp, xm = x.copy(), x.copy()
        xp[0, j] += h
        xm[0, j] -= h
        num = (np.sum(nn.forward(layers, xp)[0] * proj) - np.sum(nn.forward(layers, xm)[0] * proj)) / (2 * h)
        assert gx[0, j] == pytest.approx(num, rel=1e-4, abs=1e-7)


def test_batched_equals_single():
    rng = np.random.default_rng(5)
    layers = random_model(rng, 1)
    xb = rng.standard_normal((4, 1, 12))
    yb, _ = nn.forward(layers, xb)
    for i in range(4):
        np.testing.assert_allclose(nn.forward(layers, xb[i])[0], yb[i], rtol=0, atol=1e-14)


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=8), st.floats(-100, 100))
def test_softmax_invariants(logits, c):
    z = np.array(logits)
    s = nn.softmax(z)
    assert abs(s.sum() - 1.0) <= 1e-12
    np.testing.assert_allclose(nn.softmax(z + c), s, atol=1e-9)


def test_ce_uniform_logits():
    loss, g, gp = nn.loss_ce_smoothl1(np.zeros(4), 0, 0.3, None)
    assert loss == pytest.approx(math.log(4), abs=1e-12)
    np.testing.assert_allclose(g, [-0.75, 0.25, 0.25, 0.25])
    assert gp == 0.0


def test_smooth_l1_terms():
    loss, _, gp = nn.loss_ce_smoothl1(np.zeros(4), 2, 0.4, 0.4)
    assert loss == pytest.approx(math.log(4), abs=1e-12)
    assert gp == 0.0
    assert nn.smooth_l1(2.0) == (1.5, 1.0)
    loss, _, gp = nn.loss_ce_smoothl1(np.zeros(4), 1, 2.5, 0.5, lam=1.0)
    assert loss - math.log(4) == pytest.approx(1.5)
    assert gp == 1.0


def test_loss_bad_label():
    with pytest.raises(ValueError):
        nn.loss_ce_smoothl1(np.zeros(4), 4, 0.0, 0.0)


def test_loss_gradient_fd():
    rng = np.random.default_rng(2)
    logits = rng.standard_normal(4)
    pos = 0.31

    def f(lg, p):
        return nn.loss_ce_smoothl1(lg, 3, p, 0.8, lam=0.7)[0]

    _, g, gp = nn.loss_ce_smoothl1(logits, 3, pos, 0.8, lam=0.7)
    h = 1e-6
    for j in range(4):
        e = np.zeros(4)
        e[j] = h
        assert g[j] == pytest.approx((f(logits + e, pos) - f(logits - e, pos)) / (2 * h), abs=1e-8)
    assert gp == pytest.approx((f(logits, pos + h) - f(logits, pos - h)) / (2 * h), abs=1e-8)


def test_batch_loss_matches_per_sample():
    rng = np.random.default_rng(8)
    logits = rng.standard_normal((5, 4))
    targets = np.array([0, 1, 2, 3, 1])
    pred = rng.random(5)
    tgt = np.array([np.nan, 0.2, 0.9, 0.5, 0.1])
    loss, gl, gp = nn.batch_loss(logits, targets, pred, tgt, lam=0.5)
    singles = [
        nn.loss_ce_smoothl1(logits[i], targets[i], pred[i], None if np.isnan(tgt[i]) else tgt[i], lam=0.5)
        for i in range(5)
    ]
    assert loss == pytest.approx(np.mean([s[0] for s in singles]), abs=1e-12)
    np.testing.assert_allclose(gl, np.array([s[1] for s in singles]) / 5, atol=1e-14)
    np.testing.assert_allclose(gp, np.array([s[2] for s in singles]) / 5, atol=1e-14)


def test_adam_zero_grad():
    p = [np.array([1.0, -2.0])]
    new, state = nn.adam_step(p, [np.zeros(2)], nn.OptimizerState(lr=0.1))
    np.testing.assert_array_equal(new[0], p[0])
    assert state.step == 1


def test_adam_first_step():
    new, _ = nn.adam_step([np.array(1.0)], [np.array(1.0)], nn.OptimizerState(lr=0.1))
    # m_hat = 1, v_hat = 1 at t=1, so the step is lr / (1 + eps)
    assert float(new[0]) == pytest.approx(1.0 - 0.1 / (1.0 + 1e-8), abs=1e-15)


def test_adam_is_stateful():
    p, g = [np.array(1.0)], [np.array(1.0)]
    once, s1 = nn.adam_step(p, g, nn.OptimizerState(lr=0.1))
    twice, _ = nn.adam_step(once, g, s1)
    doubled, _ = nn.adam_step(p, g, nn.OptimizerState(lr=0.2))
    assert float(twice[0]) != float(doubled[0])


def test_adam_shape_mismatch():
    with pytest.raises(nn.ShapeError):
        nn.adam_step([np.zeros(2)], [np.zeros(3)], nn.OptimizerState())


def test_layer_serialization_bitwise():
    rng = np.random.default_rng(1)
    layers = random_model(rng, 3)
    x = rng.standard_normal((1, 12))
    import json

    back = [nn.layer_from_dict(json.loads(json.dumps(nn.layer_to_dict(layer)))) for layer in layers]
    a, _ = nn.forward(layers, x)
    b, _ = nn.forward(back, x)
    assert a.tobytes() == b.tobytes()
