import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from evrwkv.tensor import (
    Conv2d,
    Linear,
    Value,
    avg_pool2,
    bilinear_sample,
    concat,
    conv2d,
    conv_transpose2d,
    depthwise_conv2d,
    finite_difference_gradient,
    layer_norm,
    matmul,
    no_grad,
    relative_error,
    split,
    stack,
)
from evrwkv.tensor.ops import separable_blur
from evrwkv.tensor.value import unbroadcast
from helpers import assert_gradients, leaves


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- elementwise and reductions ------------------------------------------------


UNARY = {
    "exp": lambda x: x.exp(),
    "log": lambda x: (x * x + 0.5).log(),
    "sqrt": lambda x: (x * x + 0.1).sqrt(),
    "abs": lambda x: x.abs(),
    "sigmoid": lambda x: x.sigmoid(),
    "relu": lambda x: x.relu(),
    "leaky_relu": lambda x: x.leaky_relu(0.1),
    "squared_relu": lambda x: x.squared_relu(),
    "clamp_min": lambda x: x.clamp_min(0.2),
    "pow": lambda x: (x * x + 1.0) ** 1.7,
    "neg": lambda x: -x,
    "rdiv": lambda x: 1.0 / (x * x + 1.0),
    "rsub": lambda x: 2.0 - x,
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name, rng):
    params = leaves(rng, x=(3, 4))
    assert_gradients(lambda p: UNARY[name](p["x"]), params, rng)


BINARY = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / (b * b + 1.0),
}


@pytest.mark.parametrize("name", sorted(BINARY))
@pytest.mark.parametrize("shape_b", [(3, 4), (1, 4), (4,), (3, 1), ()])
def test_binary_gradients_with_broadcasting(name, shape_b, rng):
    params = leaves(rng, a=(3, 4), b=shape_b)
    assert_gradients(lambda p: BINARY[name](p["a"], p["b"]), params, rng)


@pytest.mark.parametrize("axis,keepdims", [(None, False), (0, False), (1, True), ((0, 2), False)])
def test_sum_and_mean_gradients(axis, keepdims, rng):
    params = leaves(rng, x=(2, 3, 4))
    assert_gradients(lambda p: p["x"].sum(axis=axis, keepdims=keepdims) * 1.5
                     + p["x"].mean(axis=axis, keepdims=keepdims), params, rng)


def test_max_gradient_and_tie_split(rng):
    params = leaves(rng, x=(3, 5))
    assert_gradients(lambda p: p["x"].max(axis=0), params, rng)
    assert_gradients(lambda p: p["x"].max(axis=1, keepdims=True), params, rng)
    x = Value(np.array([[1.0, 1.0, 0.0]]), requires_grad=True)
    x.max(axis=1).sum().backward()
    np.testing.assert_array_equal(x.grad, [[0.5, 0.5, 0.0]])


def test_shape_ops_gradients(rng):
    params = leaves(rng, x=(2, 3, 4), y=(2, 3, 4))
    assert_gradients(lambda p: p["x"].reshape(6, 4).T * 2.0, params, rng)
    assert_gradients(lambda p: p["x"].transpose(2, 0, 1)[1:, :, ::2], params, rng)
    assert_gradients(lambda p: p["x"][np.array([0, 0, 1])], params, rng)  # repeated fancy index
    assert_gradients(lambda p: concat([p["x"], p["y"] * 2.0], axis=1), params, rng)
    assert_gradients(lambda p: stack([p["x"], p["y"]], axis=2), params, rng)
    assert_gradients(lambda p: split(p["x"], [1, 3], axis=2)[1] * split(p["y"], [2, 2], axis=2)[0][..., :1], params, rng)


def test_split_rejects_bad_sizes():
    with pytest.raises(ValueError, match="do not cover"):
        split(Value(np.zeros((2, 5))), [2, 2], axis=1)


# -- array ops -----------------------------------------------------------------


def test_matmul_gradient_and_shape_error(rng):
    params = leaves(rng, a=(3, 4), b=(4, 2))
    assert_gradients(lambda p: matmul(p["a"], p["b"]), params, rng)
    assert_gradients(lambda p: p["a"] @ p["b"], params, rng)
    with pytest.raises(ValueError, match=r"\(3, 4\).*\(3, 4\)"):
        matmul(params["a"], params["a"])


@pytest.mark.parametrize("stride,pad,k", [(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 0, 2)])
def test_conv2d_gradient(stride, pad, k, rng):
    params = leaves(rng, x=(3, 8, 8), w=(4, 3, k, k), b=(4,))
    assert_gradients(lambda p: conv2d(p["x"], p["w"], p["b"], stride=stride, pad=pad), params, rng)


def test_conv2d_against_direct_loop(rng):
    from scipy.signal import correlate2d

    x, w = rng.normal(size=(2, 6, 7)), rng.normal(size=(3, 2, 3, 3))
    out = conv2d(Value(x), Value(w), pad=1).data
    ref = np.stack([sum(correlate2d(x[i], w[o, i], mode="same") for i in range(2)) for o in range(3)])
    np.testing.assert_allclose(out, ref, atol=1e-12)


@pytest.mark.parametrize("k,stride", [(1, 1), (3, 1), (5, 1), (3, 2)])
def test_depthwise_gradient(k, stride, rng):
    params = leaves(rng, x=(4, 8, 8), w=(4, k, k))
    assert_gradients(lambda p: depthwise_conv2d(p["x"], p["w"], stride=stride), params, rng)


def test_depthwise_matches_scipy(rng):
    from scipy.signal import correlate2d

    x, w = rng.normal(size=(3, 7, 6)), rng.normal(size=(3, 5, 5))
    out = depthwise_conv2d(Value(x), Value(w)).data
    ref = np.stack([correlate2d(x[c], w[c], mode="same") for c in range(3)])
    np.testing.assert_allclose(out, ref, atol=1e-12)
    with pytest.raises(ValueError, match="odd"):
        depthwise_conv2d(Value(x), Value(np.zeros((3, 2, 2))))


@pytest.mark.parametrize("k,stride,pad", [(2, 2, 0), (4, 2, 1), (3, 1, 1)])
def test_conv_transpose_gradient_and_adjointness(k, stride, pad, rng):
    params = leaves(rng, x=(3, 4, 4), w=(3, 2, k, k), b=(2,))
    assert_gradients(lambda p: conv_transpose2d(p["x"], p["w"], p["b"], stride=stride, pad=pad), params, rng)
    # <convT(x), y> == <x, conv(y)> with the same geometry
    x = rng.normal(size=(3, 4, 4))
    w = rng.normal(size=(3, 2, k, k))
    y_shape = conv_transpose2d(Value(x), Value(w), stride=stride, pad=pad).shape
    y = rng.normal(size=y_shape)
    lhs = np.sum(conv_transpose2d(Value(x), Value(w), stride=stride, pad=pad).data * y)
    rhs = np.sum(x * conv2d(Value(y), Value(w), stride=stride, pad=pad).data)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_layer_norm_gradient_and_statistics(rng):
    params = leaves(rng, x=(6, 5), g=(5,), b=(5,))
    assert_gradients(lambda p: layer_norm(p["x"], p["g"], p["b"]), params, rng)
    y = layer_norm(Value(rng.normal(3, 2, size=(4, 64))), Value(np.ones(64)), Value(np.zeros(64)), eps=0.0).data
    np.testing.assert_allclose(y.mean(axis=1), 0, atol=1e-12)
    np.testing.assert_allclose(y.std(axis=1), 1, atol=1e-12)


def test_bilinear_sample_gradient(rng):
    x = Value(rng.normal(size=(2, 5, 6)), requires_grad=True)
    # keep samples away from integer lattice lines where the derivative jumps
    c = rng.uniform(-0.8, 5.8, size=(2, 3, 4))
    c = np.where(np.abs(c - np.round(c)) < 0.05, c + 0.1, c)
    coords = Value(c, requires_grad=True)
    assert_gradients(lambda p: bilinear_sample(p["x"], p["c"]), {"x": x, "c": coords}, rng)


def test_bilinear_sample_integer_coords_and_outside(rng):
    x = rng.normal(size=(2, 4, 4))
    rows, cols = np.meshgrid(np.arange(4.0), np.arange(4.0), indexing="ij")
    out = bilinear_sample(Value(x), Value(np.stack([rows, cols]))).data
    np.testing.assert_array_equal(out, x)
    far = bilinear_sample(Value(x), Value(np.array([[-5.0], [20.0]]))).data
    np.testing.assert_array_equal(far, 0.0)


def test_avg_pool_and_separable_blur_gradients(rng):
    params = leaves(rng, x=(2, 8, 6))
    assert_gradients(lambda p: avg_pool2(p["x"]), params, rng)
    taps = np.array([0.25, 0.5, 0.25])
    assert_gradients(lambda p: separable_blur(p["x"], taps), params, rng)
    ref = depthwise_conv2d(Value(params["x"].data), Value(np.tile(np.outer(taps, taps), (2, 1, 1))), pad=0).data
    np.testing.assert_allclose(separable_blur(Value(params["x"].data), taps).data, ref, atol=1e-14)


def test_linear_and_conv_modules(rng):
    lin = Linear(rng, 3, 5)
    assert lin(Value(rng.normal(size=(7, 3)))).shape == (7, 5)
    conv = Conv2d(rng, 3, 4, 3, stride=2, pad=1)
    assert conv(Value(rng.normal(size=(3, 8, 8)))).shape == (4, 4, 4)


# -- engine behaviour -------------------------------------------------------------


def test_shared_subexpression_accumulates():
    x = Value(np.array(3.0), requires_grad=True)
    y = x * x
    (y + y * x).backward()  # d/dx (x^2 + x^3) = 2x + 3x^2
    assert x.grad == pytest.approx(6 + 27)


def test_backward_requires_scalar_root():
    x = Value(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        (x * 2).backward()


def test_interior_grads_are_released():
    x = Value(np.ones(3), requires_grad=True)
    y = x * 2.0
    y.sum().backward()
    assert y.grad is None
    np.testing.assert_array_equal(x.grad, 2.0)


def test_no_grad_records_nothing():
    x = Value(np.ones(3), requires_grad=True)
    with no_grad():
        y = (x * 2.0).exp()
    assert not y.requires_grad and y._parents == ()


def test_deep_chain_does_not_recurse():
    x = Value(np.array(1.0), requires_grad=True)
    y = x
    for _ in range(5000):
        y = y * 1.0
    y.backward()
    assert x.grad == 1.0


def test_cycle_detection():
    a = Value(np.ones(2), requires_grad=True)
    b = a * 2.0
    a._parents, a._backward = (b,), lambda g: None
    with pytest.raises(RuntimeError, match="cycle"):
        b.sum().backward()


def test_finite_difference_validates_step_and_finiteness():
    x = Value(np.ones(2), requires_grad=True)
    with pytest.raises(ValueError, match="outside"):
        finite_difference_gradient(lambda p: p["x"].sum(), {"x": x}, "x", h=1e-2)
    with pytest.raises(FloatingPointError):
        finite_difference_gradient(lambda p: (p["x"] * np.inf).sum(), {"x": x}, "x")


def test_relative_error_floor():
    assert relative_error(np.array([1e-9]), np.array([0.0])) == pytest.approx(1e-3)
    assert relative_error(np.array([2.0]), np.array([1.0])) == pytest.approx(0.5)
    assert relative_error(np.array([1.0]), np.array([np.nan])) == 0.0


@settings(max_examples=60, deadline=None)
@given(
    arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 4)), elements=st.floats(-3, 3)),
    st.sampled_from([(1,), (1, 1), ()]),
)
def test_unbroadcast_inverts_broadcast_sum(grad, target):
    target = target if len(target) <= grad.ndim else target[: grad.ndim]
    out = unbroadcast(grad, target)
    assert out.shape == target
    assert out.sum() == pytest.approx(grad.sum(), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (4,), elements=st.floats(-50, 50)))
def test_sigmoid_is_stable_and_matches_definition(x):
    s = Value(x).sigmoid().data
    assert np.all((s >= 0) & (s <= 1))
    from scipy.special import expit

    np.testing.assert_allclose(s, expit(x), rtol=1e-14, atol=0)
