import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import central_difference, jacobi_eigenvalues, naive_matmul, relative_error
from threads_desk import numerics as nx
from threads_desk import tape as T
from threads_desk.tape import GradTape

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


class TestMatmul:
    def test_identity(self, rng):
        B = rng.normal(size=(3, 4))
        np.testing.assert_array_equal(nx.matmul(np.eye(3), B), B)

    def test_hand_sum(self):
        np.testing.assert_array_equal(nx.matmul([[1, 2], [3, 4]], [[1], [1]]), [[3], [7]])

    def test_triple_loop_oracle(self, rng):
        a, b = rng.normal(size=(8, 8)), rng.normal(size=(8, 8))
        assert np.abs(nx.matmul(a, b) - naive_matmul(a, b)).max() < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(nx.ShapeError):
            nx.matmul(np.ones((2, 3)), np.ones((2, 3)))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**31))
    def test_random_shapes(self, n, k, m, seed):
        r = np.random.default_rng(seed)
        a, b = r.normal(size=(n, k)), r.normal(size=(k, m))
        assert np.abs(nx.matmul(a, b) - naive_matmul(a, b)).max() < 1e-12


class TestActivations:
    def test_fixed_points(self):
        assert nx.activation("sigmoid", np.zeros(1))[0] == 0.5
        assert nx.activation("tanh", np.zeros(1))[0] == 0.0
        assert nx.activation("relu", np.array([-1.0, 2.0])).tolist() == [0.0, 2.0]

    def test_gelu_erf(self):
        expected = 0.5 * (1 + math.erf(1 / math.sqrt(2)))
        assert nx.gelu(np.array([1.0]))[0] == pytest.approx(expected, abs=1e-15)
        assert nx.gelu(np.array([1.0]))[0] == pytest.approx(0.84134, abs=1e-5)

    def test_sigmoid_extremes_are_finite(self):
        out = nx.sigmoid(np.array([-1000.0, 1000.0]))
        assert np.all(np.isfinite(out)) and out[0] == 0.0 and out[1] == 1.0

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            nx.activation("swish", np.zeros(2))


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(nx.stable_softmax(np.zeros(3)), [1 / 3] * 3, rtol=0, atol=1e-15)

    def test_no_overflow(self):
        np.testing.assert_array_equal(nx.stable_softmax(np.array([1000.0, 1000.0])), [0.5, 0.5])

    def test_closed_form(self):
        np.testing.assert_allclose(nx.stable_softmax(np.array([0.0, math.log(3)])), [0.25, 0.75], atol=1e-15)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            nx.stable_softmax(np.array([]))

    @given(arrays(np.float64, st.integers(1, 20), elements=finite))
    def test_simplex(self, x):
        p = nx.stable_softmax(x)
        assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-12
        np.testing.assert_allclose(p, nx.stable_softmax(x + 7.5), atol=1e-12)


class TestLayerNorm:
    def test_constant_input(self):
        np.testing.assert_array_equal(nx.layer_normalize(np.full(5, 3.0), np.ones(5), np.zeros(5)), np.zeros(5))

    def test_already_normalized(self):
        np.testing.assert_allclose(nx.layer_normalize(np.array([1.0, -1.0]), np.ones(2), np.zeros(2), eps=1e-14),
                                   [1.0, -1.0], atol=1e-12)

    def test_moments(self, rng):
        y = nx.layer_normalize(rng.normal(2, 5, size=16), np.ones(16), np.zeros(16), eps=1e-14)
        assert abs(y.mean()) < 1e-12
        assert abs(y.var() - 1) < 1e-6


class TestDropout:
    def test_p_zero(self, rng):
        np.testing.assert_array_equal(nx.dropout_mask(0.0, (4, 5), rng, True), np.ones((4, 5)))

    def test_eval_mode(self, rng):
        np.testing.assert_array_equal(nx.dropout_mask(0.9, (4, 5), rng, False), np.ones((4, 5)))

    def test_kept_fraction(self):
        mask = nx.dropout_mask(0.25, (100_000,), np.random.default_rng(0), True)
        assert abs(np.mean(mask > 0) - 0.75) < 0.01
        assert np.allclose(mask[mask > 0], 1 / 0.75)

    def test_invalid_p(self, rng):
        with pytest.raises(ValueError):
            nx.dropout_mask(1.0, (2,), rng, True)


class TestSingularValues:
    def test_identity(self):
        np.testing.assert_allclose(nx.singular_values(np.eye(4)), np.ones(4))

    def test_diagonal(self):
        np.testing.assert_allclose(nx.singular_values(np.diag([1.0, 3.0, 2.0])), [3, 2, 1])

    def test_jacobi_oracle(self, rng):
        h = rng.normal(size=(12, 5))
        oracle = np.sqrt(np.clip(jacobi_eigenvalues(h.T @ h), 0, None))
        assert np.abs(nx.singular_values(h) - oracle).max() < 1e-8

    def test_non_finite(self):
        with pytest.raises(ValueError):
            nx.singular_values(np.array([[np.nan, 1.0]]))


def _gradcheck(build, *values, tol=1e-7):
    """Compare tape gradients of a scalar function against central differences."""
    tape = GradTape()
    vs = [tape.param(v) for v in values]
    out = build(*vs)
    tape.backward(out)
    for v, raw in zip(vs, values):
        def f():
            t2 = GradTape(enabled=False)
            return float(build(*[t2.const(x) for x in values]).value)
        fd = central_difference(f, raw)
        assert relative_error(v.grad, fd) < tol


class TestTapeGradients:
    def test_matmul_chain(self, rng):
        _gradcheck(lambda a, b: (T.tanh(a @ b) * (a @ b)).sum(), rng.normal(size=(3, 4)), rng.normal(size=(4, 2)))

    @pytest.mark.parametrize("kind", ["tanh", "sigmoid", "gelu"])
    def test_activations(self, rng, kind):
        _gradcheck(lambda x: (T.activation(kind, x) * x).sum(), rng.normal(size=(3, 3)))

    def test_relu_away_from_kink(self, rng):
        x = rng.normal(size=(4, 4))
        x[np.abs(x) < 0.1] = 0.5
        _gradcheck(lambda v: (T.relu(v) * v).sum(), x)

    def test_softmax_and_log_softmax(self, rng):
        w = rng.normal(size=(2, 5))
        _gradcheck(lambda x: (T.softmax(x, axis=1) * w).sum() + (T.log_softmax(x, axis=0) * w).sum(),
                   rng.normal(size=(2, 5)))

    def test_layer_norm(self, rng):
        w = rng.normal(size=(3, 6))
        _gradcheck(lambda x, g, b: (T.layer_norm(x, g, b) * w).sum(),
                   rng.normal(size=(3, 6)), rng.normal(size=6), rng.normal(size=6))

    def test_l2_normalize_rows(self, rng):
        w = rng.normal(size=(3, 4))
        _gradcheck(lambda x: (T.l2_normalize_rows(x) * w).sum(), rng.normal(size=(3, 4)))

    def test_broadcast_add_and_mean(self, rng):
        _gradcheck(lambda x, b: T.exp(T.scale(x + b, 0.3)).mean(), rng.normal(size=(4, 3)), rng.normal(size=3))

    def test_getitem_concat_take_rows(self, rng):
        ids = np.array([2, 0, 2])
        w = rng.normal(size=(5, 2))

        def build(t, y):
            rows = T.take_rows(t, ids)
            return (T.concat([rows, y[1:3]], axis=0) * w).sum() + (rows * rows).sum()

        _gradcheck(build, rng.normal(size=(4, 2)), rng.normal(size=(4, 2)))

    def test_log(self, rng):
        _gradcheck(lambda x: T.log(x).sum(), rng.uniform(0.5, 2.0, size=(3, 2)))

    def test_backward_on_disabled_tape(self):
        tape = GradTape(enabled=False)
        with pytest.raises(RuntimeError):
            tape.backward(tape.const(1.0))
