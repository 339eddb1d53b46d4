import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxdg.errors import ConfigurationError, RejectedInputError
from ctxdg.numcore import (Affine, Identity, LayerStack, ReLU, Schedule, backward,
                           finite_difference, forward, grad_check, identity_stack,
                           loss_and_grad, make_optimizer, mlp)

from helpers import away_from_kinks


class TestForward:
    def test_identity_stack(self):
        assert np.array_equal(forward(identity_stack(2), np.array([[1.0, 2.0]])), [[1.0, 2.0]])

    def test_identity_affine(self):
        s = LayerStack([Affine(np.eye(2), np.zeros(2))])
        assert np.array_equal(forward(s, np.array([[3.0, 4.0]])), [[3.0, 4.0]])

    def test_relu(self):
        s = LayerStack([ReLU()], dim=2)
        assert np.array_equal(forward(s, np.array([[-1.0, 2.0]])), [[0.0, 2.0]])

    def test_dimension_mismatch(self):
        s = mlp([3, 2], np.random.default_rng(0))
        with pytest.raises(RejectedInputError):
            forward(s, np.ones((4, 2)))

    def test_adjacent_dims_checked(self):
        with pytest.raises(RejectedInputError):
            LayerStack([Affine(np.ones((2, 3))), Affine(np.ones((4, 1)))])

    def test_pure(self):
        rng = np.random.default_rng(1)
        s = mlp([4, 8, 8, 2], rng)
        x = rng.normal(size=(16, 4))
        a, b = forward(s, x), forward(s, x)
        assert a.tobytes() == b.tobytes()
        assert a.shape == (16, 2)

    def test_penultimate(self):
        s = mlp([3, 5, 2], np.random.default_rng(0))
        x = np.ones((2, 3))
        assert s.penultimate(x).shape == (2, 5)


class TestBackward:
    def test_affine_outer_product(self):
        W = np.array([[1.0], [2.0]])
        s = LayerStack([Affine(W, np.zeros(1))])
        x = np.array([[3.0, 5.0]])
        grads, dx = backward(s, x, np.array([[1.0]]))
        assert np.array_equal(grads[0], np.outer(x, [1.0]))
        assert np.array_equal(grads[1], [1.0])
        assert np.array_equal(dx, W.T)

    def test_relu_subgradient(self):
        s = LayerStack([ReLU()], dim=2)
        _, dx = backward(s, np.array([[-1.0, 2.0]]), np.array([[1.0, 1.0]]))
        assert np.array_equal(dx, [[0.0, 1.0]])

    def test_relu_zero_convention(self):
        s = LayerStack([ReLU()], dim=1)
        _, dx = backward(s, np.array([[0.0]]), np.array([[1.0]]))
        assert dx[0, 0] == 0.0

    def test_upstream_shape_checked(self):
        s = mlp([2, 3], np.random.default_rng(0))
        with pytest.raises(RejectedInputError):
            backward(s, np.ones((4, 2)), np.ones((4, 2)))

    def test_two_layer_against_finite_differences(self):
        rng = np.random.default_rng(3)
        s = mlp([3, 6, 2], rng)
        x = away_from_kinks(s, rng.normal(size=(5, 3)), rng)
        up = rng.normal(size=(5, 2))
        grads, dx = backward(s, x, up)
        num = finite_difference(lambda: float(np.sum(s.forward(x) * up)), s.params())
        for a, n in zip(grads, num):
            assert np.max(np.abs(a - n) / np.maximum(1, np.abs(a) + np.abs(n))) <= 1e-4
        num_x = finite_difference(lambda: float(np.sum(s.forward(x) * up)), [x])[0]
        assert np.allclose(dx, num_x, atol=1e-6)


class TestLoss:
    def test_mse_zero(self):
        p = np.array([[1.0, 2.0]])
        loss, g = loss_and_grad("mse", p, p.copy())
        assert loss == 0 and np.all(g == 0)

    def test_mse_value(self):
        loss, g = loss_and_grad("mse", np.array([[1.0]]), np.array([[3.0]]))
        assert loss == 4.0
        assert np.array_equal(g, [[-4.0]])

    def test_mse_sums_dimensions(self):
        loss, _ = loss_and_grad("mse", np.array([[1.0, 1.0], [0.0, 0.0]]), np.zeros((2, 2)))
        assert loss == 1.0

    def test_ce_uniform(self):
        loss, _ = loss_and_grad("softmax_ce", np.zeros((3, 2)), np.array([0, 1, 1]))
        assert loss == pytest.approx(math.log(2), abs=1e-15)

    @pytest.mark.parametrize("bad", [[2], [-1], [0.5]])
    def test_ce_invalid_index(self, bad):
        with pytest.raises(RejectedInputError):
            loss_and_grad("softmax_ce", np.zeros((1, 2)), np.array(bad))

    def test_unknown_kind(self):
        with pytest.raises(RejectedInputError):
            loss_and_grad("hinge", np.zeros((1, 1)), np.zeros((1, 1)))

    @given(st.integers(1, 6), st.integers(2, 5), st.floats(-50, 50), st.integers(0, 2 ** 31))
    def test_ce_shift_invariant(self, rows, classes, shift, seed):
        rng = np.random.default_rng(seed)
        logits = rng.normal(size=(rows, classes)) * 5
        target = rng.integers(0, classes, rows)
        a, ga = loss_and_grad("softmax_ce", logits, target)
        b, gb = loss_and_grad("softmax_ce", logits + shift, target)
        assert abs(a - b) <= 1e-10
        assert np.allclose(ga, gb, atol=1e-10)

    @given(st.integers(1, 5), st.integers(1, 3), st.integers(0, 2 ** 31))
    def test_mse_nonnegative(self, rows, cols, seed):
        rng = np.random.default_rng(seed)
        p, t = rng.normal(size=(rows, cols)), rng.normal(size=(rows, cols))
        assert loss_and_grad("mse", p, t)[0] > 0
        assert loss_and_grad("mse", p, p)[0] == 0


class TestGradCheck:
    def test_linear_mse_exact(self):
        rng = np.random.default_rng(0)
        s = mlp([3, 2], rng)
        x, y = rng.normal(size=(8, 3)), rng.normal(size=(8, 2))
        assert grad_check(s, "mse", x, y, 1e-5) <= 1e-8

    def test_two_layer_relu(self):
        rng = np.random.default_rng(4)
        s = mlp([3, 8, 1], rng)
        x = away_from_kinks(s, rng.normal(size=(6, 3)), rng)
        assert grad_check(s, "mse", x, rng.normal(size=(6, 1))) <= 1e-4

    def test_no_parameters(self):
        s = LayerStack([Identity()], dim=2)
        assert grad_check(s, "mse", np.ones((2, 2)), np.ones((2, 2))) == 0.0

    def test_step_positive(self):
        with pytest.raises(RejectedInputError):
            grad_check(identity_stack(1), "mse", np.ones((1, 1)), np.ones((1, 1)), step=0)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2 ** 31), st.sampled_from(["mse", "softmax_ce"]))
    def test_random_stacks(self, seed, loss):
        rng = np.random.default_rng(seed)
        depth = rng.integers(0, 3)
        sizes = [int(rng.integers(1, 5))] + [int(rng.integers(2, 7)) for _ in range(depth)] \
            + [int(rng.integers(2, 4))]
        s = mlp(sizes, rng)
        x = away_from_kinks(s, rng.uniform(-3, 3, (4, sizes[0])), rng)
        y = rng.integers(0, sizes[-1], 4) if loss == "softmax_ce" else rng.uniform(-10, 10, (4, sizes[-1]))
        assert grad_check(s, loss, x, y) <= 1e-4


class TestOptimizer:
    def test_adam_defaults(self):
        opt = make_optimizer({"kind": "adam"})
        assert (opt.beta1, opt.beta2, opt.eps) == (0.9, 0.999, 1e-8)
        assert opt.schedule(1) == opt.schedule(1000) == 1e-3

    @pytest.mark.parametrize("kind", ["constant", "step", "cosine"])
    def test_schedule_positive(self, kind):
        s = Schedule(lr=0.1, kind=kind, every=10, total=100)
        assert all(s(t) > 0 for t in range(1, 500))

    def test_bad_lr(self):
        with pytest.raises(ConfigurationError):
            make_optimizer({"lr": 0})

    def test_unknown_key(self):
        with pytest.raises(ConfigurationError):
            make_optimizer({"lr": 0.1, "betas": 3})

    @pytest.mark.parametrize("kind", ["sgd", "adam"])
    def test_minimizes_quadratic(self, kind):
        w = np.array([5.0, -3.0])
        opt = make_optimizer({"kind": kind, "lr": 0.1})
        for _ in range(500):
            opt.step([w], [2 * w])
        assert np.linalg.norm(w) < 1e-2


class TestSerialization:
    def test_round_trip(self):
        s = mlp([3, 4, 2], np.random.default_rng(9))
        t = LayerStack.from_dict(s.to_dict())
        x = np.random.default_rng(1).normal(size=(3, 3))
        assert forward(s, x).tobytes() == forward(t, x).tobytes()
