import numpy as np
import pytest

from cprec.deepmodels import Autoencoder
from cprec.errors import DataError, DivergenceError
from cprec.numerics import (
    MLP,
    Dense,
    Optimizer,
    ParamBlock,
    activation,
    activation_backward,
    affine_backward,
    affine_forward,
    cosine_similarity,
    finite_diff_check,
    init_params,
    named_rng,
)


def numeric_grad(f, x, h=1e-6):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for k in np.ndindex(x.shape):
        up, down = x.copy(), x.copy()
        up[k] += h
        down[k] -= h
        g[k] = (f(up) - f(down)) / (2 * h)
    return g


def rel(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-3))


# -- affine -----------------------------------------------------------------


def test_affine_examples():
    y, _ = affine_forward(np.eye(2), np.zeros(2), np.array([3.0, -1.0]))
    np.testing.assert_array_equal(y, [3, -1])
    y, _ = affine_forward(np.array([[1.0, 2], [3, 4]]), np.ones(2), np.ones(2))
    np.testing.assert_array_equal(y, [4, 8])
    y, _ = affine_forward(np.zeros((3, 2)), np.array([1.0, 2, 3]), np.array([[5.0, 6], [-1, 2]]))
    np.testing.assert_array_equal(y, [[1, 2, 3], [1, 2, 3]])


def test_affine_shape_errors():
    with pytest.raises(DataError):
        affine_forward(np.zeros((2, 3)), np.zeros(2), np.zeros(2))
    with pytest.raises(DataError):
        affine_forward(np.zeros((2, 3)), np.zeros(3), np.zeros(3))
    _, cache = affine_forward(np.zeros((2, 3)), np.zeros(2), np.zeros(3))
    with pytest.raises(DataError):
        affine_backward(cache, np.zeros(3))


def test_affine_backward_zero_upstream():
    rng = np.random.default_rng(0)
    _, cache = affine_forward(rng.normal(size=(3, 2)), rng.normal(size=3), rng.normal(size=2))
    for g in affine_backward(cache, np.zeros(3)):
        assert not np.any(g)


def test_affine_backward_matches_finite_differences():
    rng = np.random.default_rng(1)
    W, b, x = rng.normal(size=(3, 2)), rng.normal(size=3), rng.normal(size=(4, 2))
    up = rng.normal(size=(4, 3))
    _, cache = affine_forward(W, b, x)
    dW, db, dx = affine_backward(cache, up)
    assert rel(dW, numeric_grad(lambda w: np.sum(affine_forward(w, b, x)[0] * up), W)) <= 1e-5
    assert rel(db, numeric_grad(lambda v: np.sum(affine_forward(W, v, x)[0] * up), b)) <= 1e-5
    assert rel(dx, numeric_grad(lambda v: np.sum(affine_forward(W, b, v)[0] * up), x)) <= 1e-5


# -- activations ------------------------------------------------------------


def test_activation_examples():
    assert activation("sigmoid", 0.0) == 0.5
    assert activation("relu", -2.5) == 0.0
    assert activation_backward("relu", -2.5, 0.0, 1.0) == 0.0
    assert activation("tanh", 0.0) == 0.0
    assert np.all(np.isfinite(activation("sigmoid", np.array([-1000.0, 1000.0]))))


@pytest.mark.parametrize("kind", ["identity", "sigmoid", "tanh", "relu"])
def test_activation_backward_matches_finite_differences(kind):
    rng = np.random.default_rng(2)
    x = rng.normal(size=8)
    x[np.abs(x) < 1e-3] = 0.5  # keep relu away from its kink
    up = rng.normal(size=8)
    y = activation(kind, x)
    g = activation_backward(kind, x, y, up)
    assert rel(g, numeric_grad(lambda v: np.sum(activation(kind, v) * up), x)) <= 1e-6


def test_unknown_activation():
    with pytest.raises(DataError):
        activation("softsign", 1.0)


# -- cosine -----------------------------------------------------------------


def test_cosine_examples():
    assert cosine_similarity([1, 2], [1, 2]) == pytest.approx(1.0)
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    # 32 / sqrt(14 * 77)
    assert cosine_similarity([1, 2, 3], [4, 5, 6]) == pytest.approx(0.9746318461970762, abs=1e-12)
    with pytest.raises(DataError):
        cosine_similarity([0, 0], [1, 2])


def test_cosine_bounded():
    rng = np.random.default_rng(3)
    P = rng.normal(size=(100_000, 3))
    Q = rng.normal(size=(100_000, 3))
    Q[:10] = P[:10] * 1e8
    vals = np.array([cosine_similarity(p, q) for p, q in zip(P[:2000], Q[:2000])])
    assert np.all((vals >= -1) & (vals <= 1))
    # vectorised form of the same formula for the full sample
    full = np.sum(P * Q, 1) / (np.linalg.norm(P, axis=1) * np.linalg.norm(Q, axis=1))
    assert np.all(np.abs(np.clip(full, -1, 1)) <= 1)


# -- init -------------------------------------------------------------------


def test_init_params_schemes():
    assert not init_params((3, 4), "zeros").any()
    np.testing.assert_array_equal(init_params((5, 7), seed=11), init_params((5, 7), seed=11))
    w = init_params((40, 25), seed=4)
    limit = np.sqrt(6 / 65)
    assert np.all(np.abs(w) <= limit)
    se = limit / np.sqrt(3) / np.sqrt(w.size)
    assert abs(w.mean()) <= 3 * se
    with pytest.raises(DataError):
        init_params((2, 2), "orthogonal")


def test_named_rng_streams_differ():
    a = named_rng(1, "split").random(4)
    b = named_rng(1, "init").random(4)
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, named_rng(1, "split").random(4))


# -- optimizer --------------------------------------------------------------


def test_optimizer_examples():
    p = ParamBlock("w", np.array([1.0]))
    Optimizer("sgd", 0.1, 0.0).step([p])
    assert p.value[0] == 1.0
    p.grad[:] = 0.5
    Optimizer("sgd", 0.1, 0.0).step([p])
    assert p.value[0] == pytest.approx(0.95)
    assert p.grad[0] == 0.0


def test_sgd_weight_decay_and_exempt_blocks():
    w = ParamBlock("w", np.array([2.0]))
    b = ParamBlock("b", np.array([2.0]), decay=False)
    Optimizer("sgd", 0.1, 0.5).step([w, b])
    assert w.value[0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)
    assert b.value[0] == 2.0


def test_adam_converges_on_quadratic():
    w = ParamBlock("w", np.array([5.0]))
    opt = Optimizer("adam", 0.05, 0.0)
    for step in range(2000):
        w.grad[:] = 2 * w.value
        opt.step([w])
        if abs(w.value[0]) < 1e-2:
            break
    assert abs(w.value[0]) < 1e-2


def test_optimizer_non_finite_gradient_names_block():
    p = ParamBlock("layer3.W", np.ones(2))
    p.grad[1] = np.nan
    with pytest.raises(DivergenceError, match="layer3.W"):
        Optimizer().step([p])


# -- layers and gradient checker -------------------------------------------


def test_finite_diff_check_linear_loss():
    p = ParamBlock("w", np.array([1.0, -2.0, 3.0]))
    c = np.array([0.5, 1.5, -2.0])

    def loss():
        p.grad += c
        return float(c @ p.value)

    assert finite_diff_check(loss, [p]) <= 1e-9


def test_finite_diff_check_detects_wrong_gradient():
    p = ParamBlock("w", np.array([1.0, 2.0]))

    def loss():
        p.grad += p.value  # true gradient is 2 * value
        return float(p.value @ p.value)

    assert finite_diff_check(loss, [p]) > 0.4


def test_finite_diff_autorec_toy():
    rng = np.random.default_rng(5)
    R = np.round(rng.uniform(1, 5, size=(5, 4)))
    mask = rng.random((5, 4)) < 0.6
    mask[:, 0] = True
    R = np.where(mask, R, 0.0)
    ae = Autoencoder(4, [3], "sigmoid", "identity", lam=0.1, rng=rng)

    def loss():
        return ae.loss_and_backward(R, ae.forward(R), mask)

    assert finite_diff_check(loss, ae.params()) <= 1e-4


def test_finite_diff_mlp_tower_three_samples():
    rng = np.random.default_rng(6)
    mlp = MLP("t", [6, 5, 4, 1], "tanh", "identity", rng=rng)
    X, y = rng.normal(size=(3, 6)), rng.normal(size=3)

    def loss():
        out = mlp.forward(X)[:, 0]
        mlp.backward((2 * (out - y) / 3)[:, None])
        return float(np.mean((out - y) ** 2))

    assert finite_diff_check(loss, mlp.params()) <= 1e-4


def test_dense_backward_without_forward():
    layer = Dense("d", 3, 2, rng=np.random.default_rng(0))
    with pytest.raises(DataError):
        layer.backward(np.zeros(2))


def test_dense_call_does_not_cache():
    layer = Dense("d", 3, 2, "sigmoid", rng=np.random.default_rng(0))
    x = np.ones(3)
    y1 = layer(x)
    np.testing.assert_array_equal(layer.forward(x), y1)
    layer.backward(np.ones(2))
    with pytest.raises(DataError):
        layer.backward(np.ones(2))
