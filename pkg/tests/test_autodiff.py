"""Every tape primitive's backward pass against the finite-difference oracle."""

import numpy as np
import pytest

from strucattn import autodiff as ad
from strucattn.numkit import finite_diff_grad

rng = np.random.default_rng(20240811)


def check_gradient(make, x0, tol=1e-6):
    """make(arr) -> (scalar loss Tensor, leaf Tensor); compares backprop to FD."""
    loss, leaf = make(x0)
    loss.backward()
    got = leaf.grad.ravel()
    fd = finite_diff_grad(lambda v: float(make(v.reshape(x0.shape))[0].value), x0.ravel())
    denom = max(np.linalg.norm(got), np.linalg.norm(fd), 1e-12)
    assert np.linalg.norm(got - fd) / denom < tol


def project(t, w):
    """Fixed linear functional turning any tensor into a scalar loss."""
    return ad.sum_all(ad.mul(t, ad.const(w)))


def test_add_broadcast_rows():
    x0 = rng.normal(size=(3, 4))
    other = rng.normal(size=(1, 4))
    w = rng.normal(size=(3, 4))

    def make(arr):
        leaf = ad.const(arr)
        return project(ad.add(leaf, ad.const(other)), w), leaf

    check_gradient(make, x0)

    def make_b(arr):
        leaf = ad.const(arr)
        return project(ad.add(ad.const(x0), leaf), w), leaf

    check_gradient(make_b, other)


def test_mul_broadcast_column():
    x0 = rng.normal(size=(4, 1))
    other = rng.normal(size=(4, 5))
    w = rng.normal(size=(4, 5))

    def make(arr):
        leaf = ad.const(arr)
        return project(ad.mul(leaf, ad.const(other)), w), leaf

    check_gradient(make, x0)


def test_matmul_both_sides():
    a0 = rng.normal(size=(3, 4))
    b0 = rng.normal(size=(4, 2))
    w = rng.normal(size=(3, 2))

    def make_a(arr):
        leaf = ad.const(arr)
        return project(ad.matmul(leaf, ad.const(b0)), w), leaf

    def make_b(arr):
        leaf = ad.const(arr)
        return project(ad.matmul(ad.const(a0), leaf), w), leaf

    check_gradient(make_a, a0)
    check_gradient(make_b, b0)


def test_shared_node_accumulates():
    x0 = rng.normal(size=(3, 3))
    w = rng.normal(size=(3, 3))

    def make(arr):
        leaf = ad.const(arr)
        return project(ad.add(ad.matmul(leaf, leaf), leaf), w), leaf

    check_gradient(make, x0)


@pytest.mark.parametrize("op", [ad.tanh, ad.sigmoid, ad.transpose, ad.neg])
def test_unary_ops(op):
    x0 = rng.normal(size=(3, 4))
    w = rng.normal(size=(4, 3)) if op is ad.transpose else rng.normal(size=(3, 4))

    def make(arr):
        leaf = ad.const(arr)
        return project(op(leaf), w), leaf

    check_gradient(make, x0)


def test_relu_away_from_kink():
    x0 = rng.normal(size=(3, 4))
    x0[np.abs(x0) < 1e-2] = 0.5
    w = rng.normal(size=(3, 4))

    def make(arr):
        leaf = ad.const(arr)
        return project(ad.relu(leaf), w), leaf

    check_gradient(make, x0)


def test_power_negative_exponent():
    x0 = rng.uniform(0.5, 3.0, size=(4, 1))
    w = rng.normal(size=(4, 1))

    def make(arr):
        leaf = ad.const(arr)
        return project(ad.power(leaf, -2.0), w), leaf

    check_gradient(make, x0)


def test_maximum_const_floor():
    x0 = rng.uniform(0.5, 2.0, size=(3, 1))  # comfortably above the floor

    def make(arr):
        leaf = ad.const(arr)
        return project(ad.maximum_const(leaf, 1e-6), np.ones((3, 1))), leaf

    check_gradient(make, x0)


def test_softmax_rows_grad():
    x0 = rng.normal(size=(3, 5))
    w = rng.normal(size=(3, 5))

    def make(arr):
        leaf = ad.const(arr)
        return project(ad.softmax_rows(leaf), w), leaf

    check_gradient(make, x0)


def test_log_softmax_rows_grad():
    x0 = rng.normal(size=(3, 5))
    w = rng.normal(size=(3, 5))

    def make(arr):
        leaf = ad.const(arr)
        return project(ad.log_softmax_rows(leaf), w), leaf

    check_gradient(make, x0)


def test_layer_norm_grads_all_inputs():
    x0 = rng.normal(size=(3, 6))
    gamma0 = rng.normal(size=(1, 6))
    beta0 = rng.normal(size=(1, 6))
    w = rng.normal(size=(3, 6))

    def make_x(arr):
        leaf = ad.const(arr)
        return project(ad.layer_norm(leaf, ad.const(gamma0), ad.const(beta0)), w), leaf

    def make_g(arr):
        leaf = ad.const(arr)
        return project(ad.layer_norm(ad.const(x0), leaf, ad.const(beta0)), w), leaf

    def make_b(arr):
        leaf = ad.const(arr)
        return project(ad.layer_norm(ad.const(x0), ad.const(gamma0), leaf), w), leaf

    check_gradient(make_x, x0)
    check_gradient(make_g, gamma0)
    check_gradient(make_b, beta0)


def test_embed_scatter_with_repeats():
    table0 = rng.normal(size=(5, 3))
    ids = [0, 2, 2, 4]
    w = rng.normal(size=(4, 3))

    def make(arr):
        leaf = ad.const(arr)
        return project(ad.embed(leaf, ids), w), leaf

    check_gradient(make, table0)


def test_concat_slice_pick():
    a0 = rng.normal(size=(4, 2))
    b0 = rng.normal(size=(4, 3))

    def make(arr):
        leaf = ad.const(arr)
        cat = ad.concat_cols([leaf, ad.const(b0)])
        sliced = ad.slice_rows(cat, 1, 4)
        picked = ad.pick_rows(sliced, [0, 2, 4])
        return ad.sum_all(picked), leaf

    check_gradient(make, a0)


def test_forward_values_match_numpy():
    x = rng.normal(size=(3, 4))
    assert np.array_equal(ad.tanh(ad.const(x)).value, np.tanh(x))
    assert np.array_equal(ad.scale(ad.const(x), 2.5).value, x * 2.5)
    assert ad.sum_all(ad.const(x)).value == pytest.approx(x.sum())


def test_backward_requires_scalar():
    with pytest.raises(ValueError):
        ad.const(np.zeros((2, 2))).backward()
