import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from strucattn import numkit
from strucattn.numkit import (
    NEG_INF,
    DegenerateRowError,
    DimensionError,
    OracleFailure,
    elementwise,
    finite_diff_grad,
    matmul,
    softmax_rows,
)

finite_matrices = arrays(
    np.float64,
    st.tuples(st.integers(1, 6), st.integers(1, 6)),
    elements=st.floats(-50, 50),
)


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(matmul(a, np.eye(2)), a)

    def test_hand_arithmetic(self):
        out = matmul(np.array([[1.0, 2.0]]), np.array([[3.0], [4.0]]))
        assert out.shape == (1, 1)
        assert out[0, 0] == 11.0

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
            matmul(np.zeros((2, 3)), np.zeros((2, 2)))

    @given(
        a=arrays(np.float64, (3, 4), elements=st.floats(-5, 5)),
        b=arrays(np.float64, (4, 2), elements=st.floats(-5, 5)),
        c=arrays(np.float64, (2, 3), elements=st.floats(-5, 5)),
    )
    @settings(max_examples=50)
    def test_associativity(self, a, b, c):
        left = matmul(matmul(a, b), c)
        right = matmul(a, matmul(b, c))
        assert np.max(np.abs(left - right)) < 1e-9


class TestSoftmaxRows:
    def test_symmetric_row(self):
        out = softmax_rows(np.array([[0.0, 0.0]]))
        assert np.array_equal(out, np.array([[0.5, 0.5]]))

    def test_neg_inf_underflows_to_exact_zero(self):
        out = softmax_rows(np.array([[NEG_INF, 0.0, 0.0]]))
        assert out[0, 0] == 0.0
        assert out[0, 1] == 0.5 and out[0, 2] == 0.5

    def test_known_row(self):
        # frozen from an independent high-precision exp-normalize evaluation
        out = softmax_rows(np.array([[1.0, 2.0, 3.0]]))
        expected = [0.09003057317038046, 0.24472847105479765, 0.6652409557748219]
        assert np.max(np.abs(out[0] - expected)) < 1e-15

    def test_degenerate_row_raises(self):
        with pytest.raises(DegenerateRowError, match="row 1"):
            softmax_rows(np.array([[0.0, 1.0], [NEG_INF, NEG_INF]]))

    @given(m=finite_matrices)
    @settings(max_examples=100)
    def test_rows_sum_to_one(self, m):
        out = softmax_rows(m)
        assert np.all(out >= 0)
        assert np.max(np.abs(out.sum(axis=1) - 1.0)) < 1e-12

    @given(m=finite_matrices, c=st.floats(-30, 30))
    @settings(max_examples=100)
    def test_shift_invariance(self, m, c):
        assert np.max(np.abs(softmax_rows(m) - softmax_rows(m + c))) < 1e-12


class TestElementwise:
    def test_sigmoid_at_zero(self):
        assert elementwise("sigmoid", np.zeros((1, 1)))[0, 0] == 0.5

    def test_sigmoid_extremes_are_stable(self):
        out = numkit.sigmoid(np.array([[-1000.0, 1000.0]]))
        assert out[0, 0] == 0.0 and out[0, 1] == 1.0

    def test_tanh_at_zero(self):
        assert elementwise("tanh", np.zeros((2, 2)))[0, 0] == 0.0

    def test_add(self):
        assert elementwise("add", np.array([[1.0]]), np.array([[2.0]]))[0, 0] == 3.0

    def test_add_shape_mismatch(self):
        with pytest.raises(DimensionError):
            elementwise("add", np.zeros((1, 2)), np.zeros((2, 1)))

    def test_scale(self):
        assert elementwise("scale", np.array([[2.0]]), 3.0)[0, 0] == 6.0

    def test_unknown_op(self):
        with pytest.raises(ValueError, match="unknown"):
            elementwise("exp", np.zeros((1, 1)))


class TestFiniteDiffGrad:
    def test_quadratic(self):
        grad = finite_diff_grad(lambda v: float(v[0] ** 2), np.array([3.0]), eps=1e-5)
        assert abs(grad[0] - 6.0) < 1e-8

    def test_sigmoid_slope_at_zero(self):
        def f(v):
            return float(numkit.sigmoid(v.reshape(1, -1)).sum())

        grad = finite_diff_grad(f, np.zeros(4), eps=1e-5)
        assert np.max(np.abs(grad - 0.25)) < 1e-8

    def test_non_finite_reports_coordinate(self):
        def f(v):
            return math.inf if v[1] > 0 else float(v.sum())

        with pytest.raises(OracleFailure, match="coordinate 1"):
            finite_diff_grad(f, np.zeros(3), eps=1e-5)

    def test_eps_range_enforced(self):
        with pytest.raises(ValueError):
            finite_diff_grad(lambda v: 0.0, np.zeros(1), eps=1e-2)
