import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

import oracles
from evp.autodiff import (
    Tensor,
    backward,
    concat_channels,
    conv2d,
    group_norm,
    linear,
    pool,
    resize_bilinear,
    softmax,
    sum_,
)
from evp.autodiff.functional import bilinear_matrix
from evp.errors import ShapeError


def T(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


# -- linear -------------------------------------------------------------

def test_linear_identity():
    x = np.random.default_rng(0).standard_normal((4, 3))
    assert np.array_equal(linear(T(x), T(np.eye(3)), T(np.zeros(3))).data, x)


def test_linear_sum_case():
    assert np.array_equal(linear(T(np.ones((1, 3))), T(np.ones((2, 3))), T(np.zeros(2))).data, [[3.0, 3.0]])


def test_linear_matches_triple_loop():
    rng = np.random.default_rng(1)
    x, w, b = rng.standard_normal((4, 8)), rng.standard_normal((5, 8)), rng.standard_normal(5)
    assert np.max(np.abs(linear(T(x), T(w), T(b)).data - oracles.linear(x, w, b))) <= 1e-12


def test_linear_dimension_mismatch():
    with pytest.raises(ShapeError):
        linear(T(np.ones((2, 3))), T(np.ones((4, 2))))


# -- conv2d -------------------------------------------------------------

def test_conv_channel_identity():
    x = np.random.default_rng(2).standard_normal((2, 3, 5, 4))
    w = np.eye(3).reshape(3, 3, 1, 1)
    assert np.array_equal(conv2d(T(x), T(w), T(np.zeros(3))).data, x)


def test_conv_sum_case():
    out = conv2d(T(np.ones((1, 1, 3, 3))), T(np.ones((1, 1, 3, 3))))
    assert out.shape == (1, 1, 1, 1) and out.item() == 9.0


def test_conv_matches_nested_loops():
    rng = np.random.default_rng(3)
    x, w, b = rng.standard_normal((2, 3, 5, 5)), rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4)
    got = conv2d(T(x), T(w), T(b), padding=1).data
    assert np.max(np.abs(got - oracles.conv2d(x, w, b, padding=1))) <= 1e-12


def test_conv_rejects_bad_geometry():
    x = T(np.ones((1, 2, 6, 6)))
    with pytest.raises(ShapeError):
        conv2d(x, T(np.ones((1, 2, 2, 2))))  # even kernel
    with pytest.raises(ShapeError):
        conv2d(x, T(np.ones((1, 2, 3, 3))), stride=2)  # (6 - 3) / 2 not integral
    with pytest.raises(ShapeError):
        conv2d(x, T(np.ones((1, 3, 3, 3))))  # channel mismatch


# -- group_norm ---------------------------------------------------------

def test_group_norm_constant_input_is_zero():
    out = group_norm(T(np.full((1, 4, 3, 3), 7.0)), 2, T(np.ones(4)), T(np.zeros(4)))
    assert np.array_equal(out.data, np.zeros((1, 4, 3, 3)))


def test_group_norm_zero_gamma_gives_beta():
    beta = np.arange(4.0)
    out = group_norm(T(np.random.default_rng(4).standard_normal((2, 4, 3, 3))), 2, T(np.zeros(4)), T(beta))
    assert np.array_equal(out.data, np.broadcast_to(beta.reshape(1, 4, 1, 1), (2, 4, 3, 3)))


def test_group_norm_standardizes_each_group():
    # eps enters the variance as var / (var + eps), so keep it well below the tolerance
    x = np.random.default_rng(5).standard_normal((2, 4, 3, 3)) * 3 + 1
    out = group_norm(T(x), 2, T(np.ones(4)), T(np.zeros(4)), eps=1e-9).data.reshape(2, 2, -1)
    assert np.max(np.abs(out.mean(axis=2))) <= 1e-10
    assert np.max(np.abs(out.var(axis=2) - 1)) <= 1e-6


def test_group_norm_indivisible_channels():
    with pytest.raises(ShapeError):
        group_norm(T(np.ones((1, 3, 2, 2))), 2, T(np.ones(3)), T(np.zeros(3)))


# -- softmax ------------------------------------------------------------

def test_softmax_uniform():
    assert np.allclose(softmax(T(np.zeros(5))).data, 0.2, rtol=0, atol=1e-16)


def test_softmax_shift_invariance():
    x = np.random.default_rng(6).standard_normal((3, 7))
    assert np.max(np.abs(softmax(T(x), 1).data - softmax(T(x + 13.5), 1).data)) <= 1e-12


def test_softmax_matches_formula():
    x = np.random.default_rng(7).standard_normal(7)
    assert np.max(np.abs(softmax(T(x)).data - np.exp(x) / np.exp(x).sum())) <= 1e-12


def test_softmax_bad_axis():
    with pytest.raises(ShapeError):
        softmax(T(np.ones((2, 2))), axis=2)


@settings(max_examples=60, deadline=None)
@given(
    hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=6), elements=st.floats(-300, 300)),
    st.integers(-3, 2),
)
def test_softmax_rows_are_distributions(x, axis):
    axis = axis % x.ndim
    p = softmax(T(x), axis).data
    assert np.all(p >= 0) and np.all(p <= 1)
    assert np.max(np.abs(p.sum(axis=axis) - 1)) <= 1e-6


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float64, st.integers(1, 8), elements=st.floats(-20, 20)))
def test_softmax_strictly_positive_for_moderate_inputs(x):
    assert np.all(softmax(T(x)).data > 0)


# -- pool ---------------------------------------------------------------

def test_global_avg_of_ones():
    out = pool(T(np.ones((2, 3, 4, 5))), "avg")
    assert out.shape == (2, 3, 1, 1) and np.all(out.data == 1.0)


def test_max_of_constant():
    assert np.all(pool(T(np.full((1, 2, 3, 3), -4.5)), "max", (3, 1)).data == -4.5)


def test_window_avg_matches_loop_exactly():
    x = np.random.default_rng(8).standard_normal((1, 3, 4, 4))
    assert np.array_equal(pool(T(x), "avg", (2, 2)).data, oracles.pool(x, "avg", (2, 2)))


def test_channel_mode_reduces_channels():
    x = np.random.default_rng(9).standard_normal((2, 5, 3, 4))
    assert pool(T(x), "max", "global", "channel").shape == (2, 1, 3, 4)
    assert np.array_equal(pool(T(x), "max", "global", "channel").data[:, 0], x.max(axis=1))


def test_max_pool_ties_route_to_first_element():
    x = T(np.array([[[[1.0, 3.0], [3.0, 0.0]]]]), grad=True)
    backward(sum_(pool(x, "max")))
    assert np.array_equal(x.grad[0, 0], [[0.0, 1.0], [0.0, 0.0]])
    y = T(np.full((1, 2, 1, 1), 2.0), grad=True)
    backward(sum_(pool(y, "max", "global", "channel")))
    assert np.array_equal(y.grad.ravel(), [1.0, 0.0])


def test_window_larger_than_input():
    with pytest.raises(ShapeError):
        pool(T(np.ones((1, 1, 2, 2))), "avg", (3, 1))


# -- resize -------------------------------------------------------------

def test_resize_same_size_is_identity():
    x = np.random.default_rng(10).standard_normal((1, 2, 3, 5))
    assert np.array_equal(resize_bilinear(T(x), 3, 5).data, x)


@pytest.mark.parametrize("size", [(1, 1), (3, 7), (9, 2)])
def test_resize_preserves_constants(size):
    out = resize_bilinear(T(np.full((1, 1, 4, 3), 2.5)), *size).data
    assert np.allclose(out, 2.5, rtol=0, atol=1e-15)


def test_resize_hand_evaluated_grid():
    # half-pixel sources for 2 -> 4 are -0.25, 0.25, 0.75, 1.25, clamped to [0, 1]
    x = np.array([[[[0.0, 1.0], [2.0, 3.0]]]])
    expected = np.array(
        [
            [0.0, 0.25, 0.75, 1.0],
            [0.5, 0.75, 1.25, 1.5],
            [1.5, 1.75, 2.25, 2.5],
            [2.0, 2.25, 2.75, 3.0],
        ]
    )
    assert np.array_equal(resize_bilinear(T(x), 4, 4).data[0, 0], expected)


def test_bilinear_rows_are_convex_weights():
    m = bilinear_matrix(5, 13)
    assert np.all(m >= 0) and np.allclose(m.sum(axis=1), 1.0, rtol=0, atol=1e-15)


def test_resize_downsizing_allowed():
    assert resize_bilinear(T(np.ones((1, 1, 8, 8))), 3, 2).shape == (1, 1, 3, 2)


# -- concat -------------------------------------------------------------

def test_concat_single_input():
    x = np.random.default_rng(11).standard_normal((1, 2, 3, 3))
    assert np.array_equal(concat_channels([T(x)]).data, x)


def test_concat_orders_blocks():
    a, b = np.zeros((1, 1, 2, 2)), np.ones((1, 1, 2, 2))
    out = concat_channels([T(a), T(b)]).data
    assert out.shape == (1, 2, 2, 2) and np.all(out[0, 0] == 0) and np.all(out[0, 1] == 1)


def test_concat_backward_routes_ones():
    a, b = T(np.zeros((1, 1, 2, 2)), True), T(np.ones((1, 3, 2, 2)), True)
    backward(sum_(concat_channels([a, b])))
    assert np.all(a.grad == 1) and np.all(b.grad == 1)


def test_concat_spatial_mismatch():
    with pytest.raises(ShapeError):
        concat_channels([T(np.ones((1, 1, 2, 2))), T(np.ones((1, 1, 3, 2)))])
