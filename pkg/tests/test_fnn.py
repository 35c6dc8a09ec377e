import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roann.filters import FilterKind
from roann.fnn import (
    ActivationKind,
    RoaFnnModel,
    alpha_from_rho,
    fnn_backward,
    fnn_forward,
    fnn_ioj,
    fnn_loss_mse,
)
from roann.isometry import finite_diff_oracle, relative_error
from roann.linalg import ShapeError, singular_values


def vanilla_mlp(weights, biases, x, act=np.tanh, dact=lambda y: 1 - np.tanh(y) ** 2):
    """Textbook MLP forward and backward for a single sample and squared error."""
    xs, ys = [x], []
    for w, b in zip(weights, biases):
        ys.append(w @ xs[-1] + b)
        xs.append(act(ys[-1]))

    def backward(error):
        dW, db = [None] * len(weights), [None] * len(weights)
        g = error
        for s in range(len(weights) - 1, -1, -1):
            delta = dact(ys[s]) * g
            dW[s] = np.outer(delta, xs[s])
            db[s] = delta
            g = weights[s].T @ delta
        return dW, db

    return xs[-1], backward


def random_model(dims, act="tanh", seed=0, **kw):
    depth = len(dims) - 1
    if "alpha" not in kw and "rho" not in kw:
        kw["alpha"] = 0.3 if depth > 1 else 0.5
    return RoaFnnModel.init(dims, activation=act, seed=seed, **kw)


def test_single_layer_hand_value():
    m = RoaFnnModel([np.array([[1.0]])], [np.array([0.0])], [np.array([[1.0]])], 0.5, "tanh")
    out, _ = fnn_forward(m, np.array([1.0]))
    assert out[0] == pytest.approx(0.5 * np.tanh(1.0) + 0.5)
    assert out[0] == pytest.approx(0.880797, abs=1e-6)


def test_alpha_one_equals_vanilla_mlp():
    m = random_model([3, 5, 4, 2], alpha=1.0, seed=1)
    x = np.random.default_rng(0).normal(size=3)
    out, trace = fnn_forward(m, x)
    ref, backward = vanilla_mlp(m.weights, m.biases, x)
    assert np.array_equal(out, ref)
    err = np.array([0.3, -1.2])
    grads = fnn_backward(m, trace, err)
    dW, db = backward(err)
    for a, b in zip(grads.dW + grads.db, dW + db):
        assert np.max(np.abs(a - b)) <= 1e-12


def test_alpha_zero_is_isometric():
    m = random_model([6] * 8, alpha=0.0, seed=2)
    x = np.random.default_rng(1).normal(size=6)
    out, trace = fnn_forward(m, x)
    assert np.linalg.norm(out) == pytest.approx(np.linalg.norm(x), rel=1e-12)
    s = singular_values(fnn_ioj(m, trace)).singular_values
    assert np.max(np.abs(s - 1)) <= 1e-10


def test_alpha_from_rho():
    assert alpha_from_rho(5, 50) == pytest.approx(5 / 49)
    with pytest.raises(ValueError):
        alpha_from_rho(1.0, 1)
    m = RoaFnnModel.init([2] * 11, rho=2.0)
    assert m.alpha == pytest.approx(2 / 9) and m.rho == 2.0


def test_init_requires_one_of_rho_alpha():
    with pytest.raises(ValueError):
        RoaFnnModel.init([2, 2], rho=1.0, alpha=0.5)


def test_shape_validation():
    with pytest.raises(ShapeError):
        RoaFnnModel([np.ones((2, 3))], [np.ones(2)], [np.ones((3, 2))], 0.5)
    m = random_model([3, 2])
    with pytest.raises(ShapeError):
        fnn_forward(m, np.ones(4))


@pytest.mark.parametrize("act", ["tanh", "relu"])
def test_gradients_match_finite_differences(act):
    rng = np.random.default_rng(5)
    m = random_model([4, 6, 5, 3, 2], act=act, seed=3)
    x = rng.normal(size=(3, 4))
    t = rng.normal(size=(3, 2))

    def loss():
        return fnn_loss_mse(fnn_forward(m, x)[0], t)[0]

    out, trace = fnn_forward(m, x)
    grads = fnn_backward(m, trace, fnn_loss_mse(out, t)[1]).as_dict()
    numeric = finite_diff_oracle(loss, m.parameters())
    for k in grads:
        assert relative_error(grads[k], numeric[k]) <= 1e-6, k


def test_zero_error_gives_zero_gradients():
    m = random_model([3, 4, 2], seed=4)
    _, trace = fnn_forward(m, np.ones(3))
    g = fnn_backward(m, trace, np.zeros(2))
    assert all(not a.any() for a in g.dW + g.db)


def test_error_signal_is_ioj_transpose():
    m = random_model([5, 5, 5, 5, 5], seed=6)
    _, trace = fnn_forward(m, np.random.default_rng(2).normal(size=5))
    e = np.random.default_rng(3).normal(size=5)
    g = fnn_backward(m, trace, e)
    # error reaching layer 1 is the transposed input-output Jacobian applied to e
    assert np.max(np.abs(g.error_signals[0][0] - fnn_ioj(m, trace).T @ e)) <= 1e-12


def test_ioj_degenerate_depths():
    m = random_model([3, 4], seed=7)
    _, trace = fnn_forward(m, np.ones(3))
    assert np.array_equal(fnn_ioj(m, trace), np.eye(4))
    m2 = random_model([3, 4, 2], seed=7)
    _, trace2 = fnn_forward(m2, np.ones(3))
    assert np.allclose(fnn_ioj(m2, trace2), m2.layer_jacobian(1, trace2.derivatives[1][0]))


def test_ioj_directional_slope():
    m = random_model([3, 4, 4, 3, 2], seed=8)
    x0 = np.random.default_rng(4).normal(size=3)
    _, trace = fnn_forward(m, x0)
    ioj = fnn_ioj(m, trace)
    v = np.random.default_rng(5).normal(size=4)

    def from_layer1(x1):
        x = x1
        for l in range(1, m.depth):
            y = m.weights[l] @ x + m.biases[l]
            x = m.alpha * np.tanh(y) + (1 - m.alpha) * m.filters[l] @ x
        return x

    x1 = trace.activations[1][0]
    errs = []
    for h in (1e-3, 5e-4):
        diff = from_layer1(x1 + h * v) - from_layer1(x1)
        errs.append(np.linalg.norm(diff - h * ioj @ v))
    # remainder is second order: halving h quarters it
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)


def test_mse_hand_values():
    assert fnn_loss_mse([1.0], [1.0])[0] == 0.0
    loss, err = fnn_loss_mse(np.array([0.0]), np.array([1.0]))
    assert loss == 1.0 and np.array_equal(err, [-2.0])
    with pytest.raises(ShapeError):
        fnn_loss_mse([1.0, 2.0], [1.0])


def test_mse_error_vs_finite_difference():
    o = np.array([0.3, -1.1, 2.0])
    t = np.array([1.0, 0.5, -0.2])
    _, err = fnn_loss_mse(o, t)
    h = 1e-6
    num = [(fnn_loss_mse(o + h * e, t)[0] - fnn_loss_mse(o - h * e, t)[0]) / (2 * h) for e in np.eye(3)]
    assert np.allclose(err, num, atol=1e-8)


def test_relu_derivative_at_zero():
    assert ActivationKind.RELU.derivative(np.array([0.0]))[0] == 0.0
    assert all(a.r == 1.0 for a in ActivationKind)


def test_semi_permutation_filters_supported():
    m = RoaFnnModel.init([4, 4, 3, 2], alpha=0.4, filter_kind=FilterKind.SEMI_PERMUTATION, seed=1)
    assert set(np.unique(m.filters[1])) <= {0.0, 1.0}


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 8), st.integers(2, 12), st.floats(0.01, 0.99), st.integers(0, 2**31))
def test_state_norm_bound(width, depth, alpha, seed):
    m = RoaFnnModel.init([width] * (depth + 1), alpha=alpha, seed=seed)
    _, trace = fnn_forward(m, np.random.default_rng(seed).normal(size=width))
    xs = [a[0] for a in trace.activations]
    for prev, nxt in zip(xs, xs[1:]):
        assert np.linalg.norm(nxt) <= alpha * np.sqrt(width) + (1 - alpha) * np.linalg.norm(prev) + 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_batch_gradient_is_sum_of_samples(seed):
    rng = np.random.default_rng(seed)
    m = random_model([3, 4, 2], seed=seed % 1000)
    x = rng.normal(size=(4, 3))
    e = rng.normal(size=(4, 2))
    _, trace = fnn_forward(m, x)
    batched = fnn_backward(m, trace, e).as_dict()
    total = None
    for i in range(4):
        _, tr = fnn_forward(m, x[i])
        g = fnn_backward(m, tr, e[i]).as_dict()
        total = g if total is None else {k: total[k] + g[k] for k in g}
    for k in batched:
        assert np.allclose(batched[k], total[k], rtol=1e-10, atol=1e-12)
