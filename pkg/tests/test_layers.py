import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from traffic_examiner.errors import ArgumentError, ShapeError
from traffic_examiner.nn import (
    Conv1dParams,
    DenseParams,
    conv1d,
    conv1d_backward,
    dense,
    dense_backward,
    dropout,
    grad_check,
    lrn,
    maxpool1d,
    maxpool1d_backward,
    pooled_length,
    relu,
    relu_backward,
)


def test_conv1d_zero_kernels_give_bias():
    x = np.random.default_rng(0).standard_normal((1, 2, 10))
    p = Conv1dParams(np.zeros((3, 2, 5)), np.array([1.0, -2.0, 0.5]))
    out, _ = conv1d(x, p)
    assert_array_equal(out[0], np.repeat(p.bias[:, None], 10, axis=1))


def test_conv1d_centered_identity_kernel():
    x = np.random.default_rng(1).standard_normal((2, 1, 12))
    kernels = np.zeros((1, 1, 25))
    kernels[0, 0, 12] = 1.0
    out, _ = conv1d(x, Conv1dParams(kernels, np.zeros(1)))
    assert_allclose(out, x)


def test_conv1d_full_width_shape_and_channel_check():
    rng = np.random.default_rng(2)
    out, _ = conv1d(rng.random((1, 1, 784)), Conv1dParams.init(rng, 32, 1, 25))
    assert out.shape == (1, 32, 784)
    with pytest.raises(ShapeError):
        conv1d(rng.random((1, 2, 784)), Conv1dParams.init(rng, 32, 1, 25))


def test_conv1d_is_linear_without_bias():
    rng = np.random.default_rng(3)
    p = Conv1dParams(rng.standard_normal((4, 2, 7)), np.zeros(4))
    x, y = rng.standard_normal((2, 1, 2, 30))
    fx, _ = conv1d(x, p)
    fy, _ = conv1d(y, p)
    fxy, _ = conv1d(2.5 * x - 0.75 * y, p)
    assert_allclose(fxy, 2.5 * fx - 0.75 * fy, atol=1e-12)


def test_relu_forward_and_subgradient():
    x = np.array([[-1.0, 0.0, 2.0]])
    out, cache = relu(x)
    assert_array_equal(out, [[0.0, 0.0, 2.0]])
    assert_array_equal(relu_backward(np.ones_like(x), cache), [[0.0, 0.0, 1.0]])
    positive = np.array([[0.5, 3.0]])
    assert_array_equal(relu(positive)[0], positive)


def test_maxpool_examples():
    out, _ = maxpool1d(np.array([[[1.0, 5.0, 2.0, 0.0, 3.0, 1.0]]]))
    assert_array_equal(out, [[[5.0, 3.0]]])
    assert pooled_length(784) == 261
    assert pooled_length(261) == 87
    with pytest.raises(ShapeError):
        maxpool1d(np.zeros((1, 1, 2)))


def test_maxpool_ties_route_to_first_index():
    out, cache = maxpool1d(np.array([[[4.0, 4.0, 1.0]]]))
    assert_array_equal(maxpool1d_backward(np.array([[[1.0]]]), cache), [[[1.0, 0.0, 0.0]]])


@settings(deadline=None)
@given(st.integers(min_value=3, max_value=40), st.integers(min_value=0, max_value=2**31 - 1))
def test_maxpool_backward_conserves_mass(length, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 3, length))
    out, cache = maxpool1d(x)
    upstream = rng.standard_normal(out.shape)
    assert maxpool1d_backward(upstream, cache).sum() == pytest.approx(upstream.sum())


def test_lrn_examples():
    x = np.random.default_rng(4).standard_normal((1, 6, 5))
    out, _ = lrn(x, k=2.0, n=5, alpha=0.0, beta=0.75)
    assert_allclose(out, x / 2.0**0.75)
    single, _ = lrn(np.array([[[2.0]]]), k=1.0, n=1, alpha=1.0, beta=1.0)
    assert single[0, 0, 0] == pytest.approx(0.4)
    zero, _ = lrn(np.zeros((1, 4, 3)))
    assert not zero.any()
    with pytest.raises(ArgumentError):
        lrn(x, n=4)


def test_lrn_window_is_clipped_at_edges():
    x = np.ones((1, 3, 1))
    out, _ = lrn(x, k=1.0, n=3, alpha=1.0, beta=1.0)
    # edge channels see two squares, the middle one three
    assert_allclose(out[0, :, 0], [1 / 3, 1 / 4, 1 / 3])


def test_dense_examples():
    x = np.array([[3.0, 4.0]])
    out, _ = dense(x, DenseParams(np.array([[1.0, 2.0]]), np.zeros(1)))
    assert_array_equal(out, [[11.0]])
    out, _ = dense(x, DenseParams(np.eye(2), np.zeros(2)))
    assert_array_equal(out, x)
    out, _ = dense(x, DenseParams(np.zeros((3, 2)), np.array([1.0, 2.0, 3.0])))
    assert_array_equal(out, [[1.0, 2.0, 3.0]])
    with pytest.raises(ShapeError):
        dense(np.ones((1, 3)), DenseParams(np.eye(2), np.zeros(2)))


def test_dropout_modes():
    x = np.random.default_rng(5).standard_normal((10, 20))
    assert dropout(x, 0.0, np.random.default_rng(0), True)[0] is x
    assert dropout(x, 0.9, None, False)[0] is x
    a, mask_a = dropout(x, 0.5, np.random.default_rng(42), True)
    b, mask_b = dropout(x, 0.5, np.random.default_rng(42), True)
    assert_array_equal(mask_a, mask_b)
    assert_array_equal(a, b)
    assert set(np.unique(mask_a)) <= {0.0, 2.0}
    with pytest.raises(ArgumentError):
        dropout(x, 1.0, np.random.default_rng(0), True)


def test_dropout_keeps_expected_fraction():
    _, mask = dropout(np.ones((200, 200)), 0.5, np.random.default_rng(7), True)
    assert abs((mask > 0).mean() - 0.5) < 0.02


def test_grad_check_dense():
    rng = np.random.default_rng(8)
    r = rng.standard_normal((3, 5))

    def op(a):
        out, cache = dense(a["x"], DenseParams(a["w"], a["b"]))
        dx, g = dense_backward(r, cache)
        return float((out * r).sum()), {"x": dx, "w": g.weight, "b": g.bias}

    inputs = {"x": rng.standard_normal((3, 4)), "w": rng.standard_normal((5, 4)), "b": rng.standard_normal(5)}
    assert grad_check(op, inputs) < 1e-4


def test_grad_check_relu_away_from_zero():
    rng = np.random.default_rng(9)
    x = rng.choice([-1.0, 1.0], size=(2, 8)) * rng.uniform(0.2, 2.0, size=(2, 8))
    r = rng.standard_normal(x.shape)

    def op(a):
        out, cache = relu(a["x"])
        return float((out * r).sum()), {"x": relu_backward(r, cache)}

    assert grad_check(op, {"x": x}) < 1e-4


def test_grad_check_conv1d_width_three():
    rng = np.random.default_rng(10)
    r = rng.standard_normal((1, 3, 9))

    def op(a):
        out, cache = conv1d(a["x"], Conv1dParams(a["k"], a["b"]))
        dx, g = conv1d_backward(r, cache)
        return float((out * r).sum()), {"x": dx, "k": g.kernels, "b": g.bias}

    inputs = {"x": rng.standard_normal((1, 2, 9)), "k": rng.standard_normal((3, 2, 3)), "b": rng.standard_normal(3)}
    assert grad_check(op, inputs) < 1e-4


def test_grad_check_detects_a_wrong_backward():
    rng = np.random.default_rng(11)

    def op(a):
        out, cache = relu(a["x"])
        return float(out.sum()), {"x": 0.5 * relu_backward(np.ones_like(out), cache)}

    assert grad_check(op, {"x": rng.uniform(0.5, 1.0, size=(1, 4))}) > 0.1


def test_grad_check_restores_inputs():
    x = np.arange(6.0).reshape(2, 3) + 1.0
    original = x.copy()
    grad_check(lambda a: (float((a["x"] ** 2).sum()), {"x": 2 * a["x"]}), {"x": x}, max_coords=3)
    assert_array_equal(x, original)
