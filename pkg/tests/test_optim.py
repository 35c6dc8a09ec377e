import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roann.optim import OptimizerConfig, OptimizerState, apply_schedule, batch_average, global_norm, step


def test_batch_average_cases():
    g = {"w": np.array([1.0, -2.0])}
    assert np.array_equal(batch_average([g])["w"], g["w"])
    assert not batch_average([g, {"w": -g["w"]}])["w"].any()
    scalars = [{"s": np.array(v)} for v in (1.0, 2.0, 3.0)]
    assert batch_average(scalars)["s"] == 2.0


def test_batch_average_errors():
    with pytest.raises(ValueError):
        batch_average([])
    with pytest.raises(ValueError):
        batch_average([{"w": np.zeros(2)}, {"w": np.zeros(3)}])


def test_sgd_step():
    p = {"w": np.array([1.0])}
    state = step(p, {"w": np.array([2.0])}, OptimizerConfig("sgd", 0.1), OptimizerState())
    assert p["w"][0] == pytest.approx(0.8)
    assert state.step == 1


@pytest.mark.parametrize("c", [1e-3, 0.7, 250.0])
def test_adam_first_step_is_learning_rate(c):
    p = {"w": np.array([0.0])}
    step(p, {"w": np.array([c])}, OptimizerConfig("adam", 0.5), OptimizerState())
    # bias-corrected moments give m_hat = c and v_hat = c^2
    assert p["w"][0] == pytest.approx(-0.5 * c / (c + 1e-8), rel=1e-12)


def test_zero_gradient():
    for kind in ("sgd", "nag"):
        p = {"w": np.array([1.5, -2.0])}
        step(p, {"w": np.zeros(2)}, OptimizerConfig(kind, 0.1), OptimizerState())
        assert np.array_equal(p["w"], [1.5, -2.0])
    p = {"w": np.array([1.5])}
    step(p, {"w": np.zeros(1)}, OptimizerConfig("adam", 0.1), OptimizerState())
    assert p["w"][0] == 1.5


def test_nag_matches_lookahead_form():
    # Sutskever form: v <- m v - lr grad(theta + m v); theta <- theta + v.
    # The stored parameters of the reformulated update are phi = theta + m v.
    def grad(x):
        return np.array([3.0 * x[0] ** 2 - 1.0, 2.0 * x[1]])

    mu, lr = 0.9, 0.05
    theta = np.array([1.0, 2.0])
    v = np.zeros(2)
    phi = {"w": theta.copy()}
    cfg = OptimizerConfig("nag", lr, momentum=mu)
    state = OptimizerState()
    for _ in range(20):
        v = mu * v - lr * grad(theta + mu * v)
        theta = theta + v
        step(phi, {"w": grad(phi["w"])}, cfg, state)
        assert np.allclose(phi["w"], theta + mu * v, atol=1e-12)


def test_schedule_lookup():
    cfg = OptimizerConfig("adam", 0.1, schedule=[(0, 0.1), (10, 0.01)])
    assert apply_schedule(cfg, 5) == 0.1
    assert apply_schedule(cfg, 10) == 0.01
    assert apply_schedule(OptimizerConfig("sgd", 0.3), 99) == 0.3


def test_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig("sgd", 0.0)
    with pytest.raises(ValueError):
        OptimizerConfig("nag", 0.1, momentum=1.0)
    with pytest.raises(ValueError):
        OptimizerConfig("rmsprop", 0.1)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        step({"w": np.zeros(2)}, {"w": np.zeros(3)}, OptimizerConfig(), OptimizerState())
    with pytest.raises(KeyError):
        step({"w": np.zeros(2)}, {"v": np.zeros(2)}, OptimizerConfig(), OptimizerState())


def test_global_norm():
    assert global_norm({"a": np.array([3.0]), "b": np.array([[4.0]])}) == 5.0


# entries away from the underflow range so squared norms stay representable
entries = st.floats(-100, 100).filter(lambda v: v == 0 or abs(v) > 1e-100)
vectors = st.lists(entries, min_size=1, max_size=8).map(np.array)


@settings(max_examples=80, deadline=None)
@given(vectors, st.floats(0.01, 1.99))
def test_sgd_decreases_quadratic(p0, lr):
    if not np.any(p0):
        return
    p = {"w": p0.copy()}
    step(p, {"w": p0.copy()}, OptimizerConfig("sgd", lr), OptimizerState())
    assert 0.5 * p["w"] @ p["w"] < 0.5 * p0 @ p0


@settings(max_examples=80, deadline=None)
@given(vectors, st.floats(1e-4, 1.0))
def test_adam_first_step_bounded(g, lr):
    p = {"w": np.zeros_like(g)}
    step(p, {"w": g}, OptimizerConfig("adam", lr), OptimizerState())
    assert np.all(np.abs(p["w"]) <= lr * (1 + 1e-12))


@settings(max_examples=80, deadline=None)
@given(st.lists(st.lists(st.floats(-100, 100), min_size=3, max_size=3).map(np.array), min_size=1, max_size=5),
       st.sampled_from([0.5, 2.0, 0.25, -4.0]))
def test_average_commutes_with_power_of_two_scaling(gs, c):
    # power-of-two factors make the commutation exact in floating point
    grads = [{"w": g} for g in gs]
    lhs = batch_average([{"w": c * g["w"]} for g in grads])["w"]
    rhs = c * batch_average(grads)["w"]
    assert np.array_equal(lhs, rhs)
