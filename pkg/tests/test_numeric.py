import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgeprop.numeric import (
    AdamState,
    MLPParams,
    NumericError,
    adam_step,
    grad_check,
    init_mlp,
    l2_norm,
    mlp_backward,
    mlp_forward,
    numeric_gradient,
    relative_error,
    softmax_cross_entropy,
)
from oracles import naive_mlp


def identity_mlp():
    return MLPParams(np.eye(2), np.zeros(2), np.eye(2), np.zeros(2))


def random_mlp(rng, d_in=4, d_h=5, d_out=3):
    p = init_mlp(rng, d_in, d_h, d_out)
    return MLPParams(p.W1, rng.normal(size=d_h) * 0.3, p.W2, rng.normal(size=d_out) * 0.3)


class TestMLPForward:
    def test_identity_weights(self):
        Y, cache = mlp_forward(identity_mlp(), np.array([[-1.0, 2.0]]))
        np.testing.assert_array_equal(cache.hidden, [[0.0, 2.0]])
        np.testing.assert_array_equal(Y, [[0.0, 2.0]])

    def test_zero_params(self, rng):
        Y, _ = mlp_forward(MLPParams.zeros(3, 4, 2), rng.normal(size=(5, 3)))
        np.testing.assert_array_equal(Y, 0.0)

    def test_matches_scalar_loops(self, rng):
        p = random_mlp(rng)
        X = rng.normal(size=(6, 4))
        Y, _ = mlp_forward(p, X)
        for i in range(6):
            np.testing.assert_allclose(Y[i], naive_mlp(p.W1, p.b1, p.W2, p.b2, X[i]), atol=1e-12, rtol=0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mlp_forward(identity_mlp(), np.ones((1, 3)))

    def test_deterministic(self, rng):
        p = random_mlp(rng)
        X = rng.normal(size=(7, 4))
        assert mlp_forward(p, X)[0].tobytes() == mlp_forward(p, X)[0].tobytes()


class TestMLPBackward:
    def test_zero_upstream(self, rng):
        p = random_mlp(rng)
        _, cache = mlp_forward(p, rng.normal(size=(3, 4)))
        dX, g = mlp_backward(p, cache, np.zeros((3, 3)))
        assert not dX.any()
        assert all(not a.any() for a in g.arrays().values())

    def test_relu_gate(self):
        p = identity_mlp()
        _, cache = mlp_forward(p, np.array([[-1.0, 2.0]]))
        dX, _ = mlp_backward(p, cache, np.array([[1.0, 1.0]]))
        np.testing.assert_array_equal(dX, [[0.0, 1.0]])

    def test_subgradient_zero_at_kink(self):
        p = identity_mlp()
        _, cache = mlp_forward(p, np.array([[0.0, 1.0]]))
        dX, _ = mlp_backward(p, cache, np.ones((1, 2)))
        assert dX[0, 0] == 0.0

    def test_finite_differences(self, rng):
        p = random_mlp(rng)
        X = rng.normal(size=(4, 4))
        R = rng.normal(size=(4, 3))

        def f(arrays):
            q = MLPParams(arrays["W1"], arrays["b1"], arrays["W2"], arrays["b2"])
            return float(np.sum(mlp_forward(q, arrays["X"])[0] * R))

        _, cache = mlp_forward(p, X)
        dX, g = mlp_backward(p, cache, R)
        analytic = {**g.arrays(), "X": dX}
        assert grad_check(f, {**p.arrays(), "X": X}, analytic, h=1e-5) < 1e-6

    def test_upstream_shape_mismatch(self, rng):
        p = random_mlp(rng)
        _, cache = mlp_forward(p, rng.normal(size=(2, 4)))
        with pytest.raises(ValueError):
            mlp_backward(p, cache, np.zeros((2, 2)))


class TestSoftmaxCrossEntropy:
    def test_uniform(self):
        loss, d = softmax_cross_entropy([0.0, 0.0], 0)
        assert loss == pytest.approx(math.log(2), abs=1e-12)
        np.testing.assert_allclose(d, [-0.5, 0.5], atol=1e-15)

    def test_large_logits_stable(self):
        loss, d = softmax_cross_entropy([1000.0, 0.0], 0)
        assert loss == pytest.approx(0.0, abs=1e-12)
        assert np.all(np.isfinite(d))

    def test_finite_differences(self, rng):
        for _ in range(10):
            logits = rng.normal(size=4) * 3
            label = int(rng.integers(4))
            _, d = softmax_cross_entropy(logits, label)
            num = numeric_gradient(lambda a: softmax_cross_entropy(a["z"], label)[0], {"z": logits})["z"]
            np.testing.assert_allclose(d, num, atol=1e-6)

    def test_rejects_non_finite(self):
        with pytest.raises(NumericError):
            softmax_cross_entropy([np.nan, 0.0], 0)

    def test_rejects_bad_label(self):
        with pytest.raises(ValueError):
            softmax_cross_entropy([0.0, 0.0], 2)


class TestAdam:
    def test_first_step_is_lr_times_sign(self):
        p = {"x": np.array([1.0])}
        new, state = adam_step(p, {"x": np.array([4.0])}, AdamState(), lr=0.1)
        assert abs(new["x"][0] - (1.0 - 0.1)) < 1e-6
        assert state.step == 1

    def test_zero_gradient_keeps_params(self):
        p = {"x": np.array([1.0, -2.0])}
        new, _ = adam_step(p, {"x": np.zeros(2)}, AdamState.for_params(p), lr=0.1)
        np.testing.assert_array_equal(new["x"], p["x"])

    def test_converges_on_quadratic(self):
        p = {"x": np.array([5.0])}
        state = AdamState.for_params(p)
        for _ in range(1000):
            p, state = adam_step(p, {"x": 2 * p["x"]}, state, lr=0.05)
        assert abs(p["x"][0]) < 0.1
        assert state.step == 1000

    def test_pure(self):
        p = {"x": np.array([1.0])}
        state = AdamState.for_params(p)
        adam_step(p, {"x": np.array([1.0])}, state, lr=0.1)
        assert p["x"][0] == 1.0 and state.step == 0 and state.m["x"][0] == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adam_step({"x": np.zeros(2)}, {"x": np.zeros(3)}, AdamState(), lr=0.1)


class TestGradCheck:
    def test_square(self):
        err = grad_check(lambda a: float(a["x"][0] ** 2), {"x": np.array([3.0])}, {"x": np.array([6.0])})
        assert err < 1e-9

    def test_constant(self):
        assert grad_check(lambda a: 1.0, {"x": np.array([3.0, 1.0])}, {"x": np.zeros(2)}) == 0.0

    def test_non_finite_objective(self):
        with pytest.raises(NumericError):
            grad_check(lambda a: float("nan"), {"x": np.zeros(1)}, {"x": np.zeros(1)})

    def test_relative_error_floor(self):
        assert relative_error(np.zeros(3), np.zeros(3)) == 0.0


def test_glorot_reproducible():
    a = init_mlp(np.random.default_rng(7), 5, 4, 3)
    b = init_mlp(np.random.default_rng(7), 5, 4, 3)
    for k in a.arrays():
        assert a.arrays()[k].tobytes() == b.arrays()[k].tobytes()
    bound = math.sqrt(6 / 9)
    assert np.all(np.abs(a.W1) <= bound) and not a.b1.any()


def test_l2_norm():
    assert l2_norm([3.0, 4.0]) == 5.0


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_mlp_backward_property(d_in, d_h, d_out, seed):
    rng = np.random.default_rng(seed)
    p = random_mlp(rng, d_in, d_h, d_out)
    X = rng.normal(size=(3, d_in))
    R = rng.normal(size=(3, d_out))

    def f(arrays):
        q = MLPParams(arrays["W1"], arrays["b1"], arrays["W2"], arrays["b2"])
        return float(np.sum(mlp_forward(q, X)[0] * R))

    _, cache = mlp_forward(p, X)
    _, g = mlp_backward(p, cache, R)
    assert grad_check(f, p.arrays(), g.arrays()) < 1e-6
