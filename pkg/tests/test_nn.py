import numpy as np
import pytest

from socketfit.errors import ShapeMismatch
from socketfit.models.nn import (AdamState, BatchNorm, Dropout, Linear, ReLU, Sequential, adam_step,
                                 smooth_l1)

import oracles


def test_smooth_l1_branches():
    assert smooth_l1(np.array([0.5]), np.array([0.0])) == pytest.approx(0.125)
    assert smooth_l1(np.array([2.0]), np.array([0.0])) == pytest.approx(1.5)


def test_smooth_l1_gradient(rng):
    pred, target = rng.normal(size=20) * 2, rng.normal(size=20)
    _, g = smooth_l1(pred, target, return_grad=True)
    fd = oracles.central_difference(lambda x: smooth_l1(x, target), pred, h=1e-5)
    assert oracles.relative_error(g, fd) < 1e-5


def test_smooth_l1_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        smooth_l1(np.zeros(3), np.zeros(4))


def test_adam_zero_grad():
    p = np.array([1.0, -2.0])
    st = AdamState()
    adam_step(st, p, np.zeros(2))
    assert np.array_equal(p, [1.0, -2.0])
    assert np.all(st.m[0] == 0) and np.all(st.v[0] == 0)


def test_adam_first_step():
    p = np.array([0.0])
    adam_step(AdamState(), p, np.array([1.0]))
    assert p[0] == pytest.approx(-9.9e-4 / (1 + 1e-8), abs=1e-9)


def test_adam_quadratic_descent():
    x = np.array([1.0])
    st = AdamState()
    trace = []
    for _ in range(100):
        adam_step(st, x, 2 * x)
        trace.append(abs(x[0]))
    assert np.all(np.diff(trace[50:]) < 0)


def test_adam_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        adam_step(AdamState(), np.zeros(3), np.zeros(2))


def test_adam_chunked_equals_plain(rng):
    p = rng.normal(size=100_000).astype(np.float32)
    g = rng.normal(size=100_000).astype(np.float32)
    ref = p.copy()
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for step in (1, 2):
        m = 0.9 * m + (1 - 0.9) * g
        v = 0.999 * v + (1 - 0.999) * g * g
        ref -= (9.9e-4 / (1 - 0.9 ** step)) * (m / (np.sqrt(v) / np.sqrt(1 - 0.999 ** step) + 1e-8))
    st = AdamState()
    adam_step(st, p, g)
    adam_step(st, p, g)
    assert np.allclose(p, ref, rtol=1e-6, atol=1e-7)


def _layer_grad_error(layer, x, rng):
    # gradient of a random linear functional of the output
    w = rng.normal(size=layer.forward(x, True).shape)

    def loss(pred, _t, return_grad=False):
        val = float((pred * w).sum())
        return (val, w.copy()) if return_grad else val

    seq = Sequential([layer])
    errs = oracles.network_gradient_errors(seq, x, None, loss)
    out = seq.forward(x, True)
    gx = seq.backward(w)
    fx = oracles.central_difference(lambda xx: float((seq.forward(xx, True) * w).sum()), x)
    del out
    return max(errs + [oracles.relative_error(gx, fx)])


def test_linear_gradient(rng):
    assert _layer_grad_error(Linear(5, 4, rng), rng.normal(size=(6, 5)), rng) < 1e-6


def test_batchnorm_gradient(rng):
    bn = BatchNorm(4)
    bn.gamma[:] = rng.normal(size=4)
    bn.beta[:] = rng.normal(size=4)
    assert _layer_grad_error(bn, rng.normal(size=(7, 4)), rng) < 1e-6


def test_relu_and_dropout_off_gradient(rng):
    x = rng.normal(size=(5, 4))
    assert _layer_grad_error(ReLU(), x, rng) < 1e-6
    assert _layer_grad_error(Dropout(0.0, rng), x, rng) < 1e-9


def test_batchnorm_train_vs_eval(rng):
    bn = BatchNorm(3, momentum=0.25)
    x = rng.normal(2.0, 3.0, size=(8, 3))
    y = bn.forward(x, train=True)
    assert np.allclose(y.mean(0), 0, atol=1e-12)
    assert np.allclose(bn.running_mean, 0.25 * x.mean(0))
    assert np.allclose(bn.running_var, 0.75 + 0.25 * x.var(0, ddof=1))
    a, b = bn.forward(x), bn.forward(x)
    assert np.array_equal(a, b) and not np.allclose(a, y)


def test_batchnorm_single_row_training():
    with pytest.raises(ShapeMismatch):
        BatchNorm(3).forward(np.zeros((1, 3)), train=True)


def test_dropout_modes(rng):
    d = Dropout(0.25, rng)
    x = np.ones((200, 50))
    assert np.array_equal(d.forward(x), x)
    y = d.forward(x, train=True)
    assert set(np.unique(y)) <= {0.0, 1 / 0.75}
    assert abs((y == 0).mean() - 0.25) < 0.02
