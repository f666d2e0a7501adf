import math

import numpy as np
import pytest
import scipy.sparse as sp

from kernode.layers import (
    Affine,
    Dropout,
    Param,
    ReLU,
    log_softmax,
    row_l2_normalize,
    row_l2_normalize_backward,
    softmax,
    softmax_cross_entropy,
)
from kernode.optim import Adam, finite_diff_check


def numeric_grad(f, x, step=1e-5):
    """Central differences of scalar ``f`` with respect to array ``x`` (in place)."""
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f()
        flat[i] = orig - step
        down = f()
        flat[i] = orig
        gf[i] = (up - down) / (2 * step)
    return g


def assert_rel_close(analytic, numeric, tol):
    err = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-3)
    assert err.max() < tol, err.max()


def test_affine_identity_input():
    rng = np.random.default_rng(0)
    layer = Affine(Param("W", rng.random((3, 2))), Param("b", np.zeros(2)))
    assert np.array_equal(layer.forward(np.eye(3)), layer.w.value)


def test_affine_zero_upstream():
    rng = np.random.default_rng(0)
    layer = Affine.init("a", 3, 2, rng)
    layer.forward(rng.random((4, 3)))
    dx = layer.backward(np.zeros((4, 2)))
    assert not dx.any() and not layer.w.grad.any() and not layer.b.grad.any()


def test_affine_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((4, 3))
    layer = Affine(Param("W", rng.standard_normal((3, 2))), Param("b", rng.standard_normal(2)))
    c = rng.standard_normal((4, 2))  # loss = <c, y>

    def loss():
        return float(np.sum(c * layer.forward(x)))

    layer.forward(x)
    dx = layer.backward(c)
    assert_rel_close(layer.w.grad, numeric_grad(loss, layer.w.value), 1e-6)
    assert_rel_close(layer.b.grad, numeric_grad(loss, layer.b.value), 1e-6)
    assert_rel_close(dx, numeric_grad(loss, x), 1e-6)


def test_affine_sparse_input_matches_dense():
    rng = np.random.default_rng(2)
    x = rng.random((6, 5)) * (rng.random((6, 5)) < 0.3)
    dense = Affine(Param("W", rng.random((5, 3))), Param("b", np.zeros(3)))
    sparse = Affine(Param("W", dense.w.value.copy()), Param("b", np.zeros(3)), input_grad=False)
    up = rng.random((6, 3))
    np.testing.assert_allclose(sparse.forward(sp.csr_array(x)), dense.forward(x), atol=1e-15)
    dense.backward(up)
    assert sparse.backward(up) is None
    np.testing.assert_allclose(sparse.w.grad, dense.w.grad, atol=1e-14)


def test_backward_accumulates_exactly():
    rng = np.random.default_rng(3)
    layer = Affine.init("a", 3, 2, rng)
    layer.forward(rng.random((5, 3)))
    up = rng.random((5, 2))
    layer.backward(up)
    once_w, once_b = layer.w.grad.copy(), layer.b.grad.copy()
    layer.backward(up)
    assert np.array_equal(layer.w.grad, 2 * once_w)
    assert np.array_equal(layer.b.grad, 2 * once_b)


def test_affine_errors():
    layer = Affine.init("a", 3, 2, np.random.default_rng(0))
    with pytest.raises(RuntimeError):
        layer.backward(np.ones((1, 2)))
    with pytest.raises(ValueError):
        layer.forward(np.ones((1, 4)))


def test_relu_cases():
    r = ReLU()
    assert not r.forward(-np.ones((2, 3))).any()
    assert not r.backward(np.ones((2, 3))).any()
    x = np.random.default_rng(0).random((2, 3)) + 0.1
    assert np.array_equal(r.forward(x), x)
    up = np.random.default_rng(1).random((2, 3))
    assert np.array_equal(r.backward(up), up)
    r.forward(np.zeros((1, 1)))
    assert r.backward(np.ones((1, 1)))[0, 0] == 0.0


def test_relu_finite_differences_away_from_kink():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((5, 4))
    x[np.abs(x) < 0.05] = 0.5
    c = rng.standard_normal((5, 4))
    r = ReLU()

    def loss():
        return float(np.sum(c * r.forward(x)))

    r.forward(x)
    assert_rel_close(r.backward(c), numeric_grad(loss, x), 1e-6)


def test_dropout_identity_in_eval_and_inverted_in_training():
    rng = np.random.default_rng(0)
    d = Dropout(0.5, rng)
    x = np.ones((200, 50))
    assert np.array_equal(d.forward(x, training=False), x)
    y = d.forward(x, training=True)
    assert set(np.unique(y)) <= {0.0, 2.0}
    assert abs(y.mean() - 1.0) < 0.05
    assert np.array_equal(d.backward(np.ones_like(x)), y)


def test_row_normalize_examples():
    y, _ = row_l2_normalize(np.array([[3.0, 4.0]]))
    np.testing.assert_allclose(y, [[0.6, 0.8]], atol=1e-15)
    unit = np.eye(3)
    assert np.array_equal(row_l2_normalize(unit)[0], unit)
    with pytest.raises(FloatingPointError):
        row_l2_normalize(np.array([[1.0, 0.0], [0.0, 0.0]]))


def test_row_normalize_backward():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((5, 4))
    c = rng.standard_normal((5, 4))

    def loss():
        return float(np.sum(c * row_l2_normalize(x)[0]))

    y, norms = row_l2_normalize(x)
    assert_rel_close(row_l2_normalize_backward(c, y, norms), numeric_grad(loss, x), 1e-6)


def test_softmax_uniform_is_ln_classes():
    loss, _ = softmax_cross_entropy(np.zeros((4, 7)), np.zeros(4, dtype=int), np.arange(4))
    assert loss == pytest.approx(math.log(7), abs=1e-12)
    assert math.log(7) == pytest.approx(1.9459, abs=1e-4)


def test_softmax_confident_limit():
    logits = np.zeros((2, 3))
    logits[[0, 1], [1, 2]] = 50.0
    loss, _ = softmax_cross_entropy(logits, np.array([1, 2]), np.array([0, 1]))
    assert 0 <= loss < 1e-20


def test_softmax_cross_entropy_gradient():
    rng = np.random.default_rng(6)
    logits = rng.standard_normal((6, 3))
    labels = rng.integers(0, 3, 6)
    idx = np.array([0, 2, 3, 5])

    def loss():
        return softmax_cross_entropy(logits, labels, idx)[0]

    _, g = softmax_cross_entropy(logits, labels, idx)
    assert_rel_close(g, numeric_grad(loss, logits), 1e-6)
    assert not g[[1, 4]].any()
    # closed form on included rows
    q = np.eye(3)[labels]
    np.testing.assert_allclose(g[idx], (softmax(logits) - q)[idx] / 4, atol=1e-15)


def test_softmax_cross_entropy_empty():
    with pytest.raises(ValueError):
        softmax_cross_entropy(np.zeros((2, 2)), np.zeros(2, dtype=int), np.array([], dtype=int))


def test_log_softmax_stable():
    out = log_softmax(np.array([[1000.0, 0.0]]))
    assert np.isfinite(out).all()
    np.testing.assert_allclose(np.exp(out).sum(), 1.0)


def test_adam_zero_gradient_leaves_params():
    p = Param("w", np.array([1.0, -2.0]))
    opt = Adam([p], lr=0.01)
    opt.step()
    assert p.value.tolist() == [1.0, -2.0]
    assert opt.t == 1


def test_adam_first_step_bounded_by_lr():
    p = Param("w", np.array([1.0, -2.0, 0.5]))
    opt = Adam([p], lr=0.01)
    g = np.array([3.0, -0.2, 1e-3])
    p.grad[:] = g
    opt.step()
    delta = p.value - np.array([1.0, -2.0, 0.5])
    # bias-corrected first step is -lr * g / (|g| + eps)
    np.testing.assert_allclose(delta, -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12)
    assert np.all(np.abs(delta) <= 0.01)
    assert not p.grad.any()


def test_adam_quadratic_bowl():
    p = Param("w", np.array([1.5, -0.7, 0.3]))
    opt = Adam([p], lr=0.01)
    for _ in range(500):
        p.grad[:] = 2 * p.value
        opt.step()
    assert np.linalg.norm(p.value) < 1e-3


def test_adam_rejects_non_finite():
    p = Param("w", np.ones(2))
    p.grad[0] = np.nan
    with pytest.raises(FloatingPointError):
        Adam([p]).step()


def test_adam_skips_frozen_params():
    p = Param("w", np.ones(2), trainable=False)
    p.grad[:] = 1.0
    Adam([p]).step()
    assert p.value.tolist() == [1.0, 1.0]


def test_gradcheck_linear_loss():
    p = Param("w", np.random.default_rng(0).standard_normal(80))
    report = finite_diff_check(lambda: (float(p.value.sum()), {"w": np.ones(80)}), [p])
    assert report.max_rel_error <= 1e-9
    assert report.n_coords == 50
    assert report.passed


def test_gradcheck_catches_doubled_gradient():
    p = Param("w", np.random.default_rng(0).standard_normal(10))
    report = finite_diff_check(lambda: (float(np.sum(p.value ** 2)), {"w": 4 * p.value}), [p])
    assert report.max_rel_error == pytest.approx(1.0, abs=1e-3)
    assert not report.passed
