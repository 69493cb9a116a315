import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from evrwkv.feature_init import IlluminationEstimator, Stem, retinex_boost
from evrwkv.tensor import Value
from helpers import assert_gradients


@pytest.fixture
def rng():
    return np.random.default_rng(5)


def test_black_image_with_zero_bias_gives_half_illumination(rng):
    est = IlluminationEstimator(rng)
    out = est(np.zeros((3, 8, 8)))
    assert out.shape == (1, 8, 8)
    np.testing.assert_array_equal(out.data, 0.5)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 6, 6), elements=st.floats(0, 1)), st.integers(0, 2**16))
def test_illumination_is_strictly_inside_unit_interval(image, seed):
    est = IlluminationEstimator(np.random.default_rng(seed))
    out = est(image).data
    assert np.all(out > 0) and np.all(out < 1)


def test_illumination_sees_channel_max_prior(rng):
    est = IlluminationEstimator(rng)
    est.conv.weight.data[:] = 0
    est.conv.weight.data[0, 0, 1, 1] = 1.0  # centre tap on the max-over-channels plane
    img = rng.uniform(size=(3, 4, 4))
    np.testing.assert_allclose(est(img).data[0], 1 / (1 + np.exp(-img.max(axis=0))), rtol=1e-14)


def test_retinex_examples():
    out = retinex_boost(np.full((3, 2, 2), 0.4), np.full((1, 2, 2), 0.5)).data
    np.testing.assert_allclose(out, 0.6, rtol=1e-15)
    img = np.random.default_rng(0).uniform(size=(3, 4, 4))
    np.testing.assert_array_equal(retinex_boost(img, np.zeros((4, 4))).data, img)
    np.testing.assert_array_equal(retinex_boost(img, np.ones((1, 4, 4))).data, 2 * img)


def test_retinex_is_not_clamped():
    out = retinex_boost(np.full((3, 1, 1), 0.9), np.full((1, 1, 1), 0.9)).data
    assert np.all(out > 1.0)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 3, 3), elements=st.floats(0, 1)), arrays(np.float64, (1, 3, 3), elements=st.floats(0, 1)))
def test_retinex_brightens_between_one_and_two_times(img, illum):
    out = retinex_boost(img, illum).data
    assert np.all(out >= img) and np.all(out <= 2 * img)


def test_retinex_rejects_mismatched_map():
    with pytest.raises(ValueError, match="does not match"):
        retinex_boost(np.zeros((3, 4, 4)), np.zeros((1, 4, 5)))


@pytest.mark.parametrize("c_in", [3, 32])
def test_stem_halves_resolution(rng, c_in):
    stem = Stem(rng, c_in, 16)
    assert stem(rng.normal(size=(c_in, 64, 64))).shape == (16, 32, 32)


def test_stem_rejects_odd_extent(rng):
    stem = Stem(rng, 3, 4)
    with pytest.raises(ValueError, match="even"):
        stem(np.zeros((3, 9, 8)))


def test_stem_zero_input_gives_zero_features(rng):
    out = Stem(rng, 3, 4)(np.zeros((3, 8, 8)))
    np.testing.assert_array_equal(out.data, 0)


def test_stem_leaky_slope(rng):
    stem = Stem(rng, 1, 1)
    stem.conv1.weight.data = np.zeros((1, 1, 3, 3))
    stem.conv1.weight.data[0, 0, 1, 1] = 1.0
    stem.conv2.weight.data = np.zeros((1, 1, 3, 3))
    stem.conv2.weight.data[0, 0, 1, 1] = 1.0
    x = np.array([[[-2.0, 3.0], [1.0, -1.0]]])
    np.testing.assert_allclose(stem(x).data, [[[-0.2]]], rtol=1e-15)


def test_feature_init_gradients_reach_illumination_conv(rng):
    est, stem = IlluminationEstimator(rng), Stem(rng, 3, 2)
    img = Value(rng.uniform(size=(3, 6, 6)), requires_grad=True)

    def fn(p):
        return stem(retinex_boost(img, est(img)))

    params = dict(img=img, **{f"est.{k}": v for k, v in est.named_parameters().items()},
                  **{f"stem.{k}": v for k, v in stem.named_parameters().items()})
    assert_gradients(fn, params, rng)
    assert np.any(est.conv.weight.grad != 0)
