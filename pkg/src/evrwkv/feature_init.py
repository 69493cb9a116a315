"""Rough Retinex-style brightening and the stride-2 convolutional stems."""

from __future__ import annotations

from .tensor import Conv2d, Module, Value, as_value, concat


class IlluminationEstimator(Module):
    """Illumination map in (0, 1) from [max_c(I); I] through one 3x3 conv."""

    def __init__(self, rng, in_channels: int = 3):
        self.conv = Conv2d(rng, in_channels + 1, 1, 3)

    def __call__(self, image: Value) -> Value:
        image = as_value(image)
        prior = image.max(axis=0, keepdims=True)
        return self.conv(concat([prior, image], axis=0)).sigmoid()


def retinex_boost(image: Value, illumination: Value) -> Value:
    """I * L + I with L broadcast over channels; deliberately not clamped."""
    image, illumination = as_value(image), as_value(illumination)
    if illumination.ndim == 2:
        illumination = illumination.reshape((1,) + illumination.shape)
    if illumination.shape[1:] != image.shape[1:]:
        raise ValueError(f"illumination {illumination.shape} does not match image {image.shape}")
    return image * illumination + image


class Stem(Module):
    """3x3 stride-1 conv + leaky ReLU(0.1), then 3x3 stride-2 conv: (C_in,H,W) -> (C,H/2,W/2)."""

    def __init__(self, rng, c_in: int, c: int, slope: float = 0.1):
        self.conv1 = Conv2d(rng, c_in, c, 3)
        self.conv2 = Conv2d(rng, c, c, 3, stride=2, pad=1)
        self._slope = slope

    def __call__(self, x: Value) -> Value:
        x = as_value(x)
        _, h, w = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"stem input extents must be even, got {h}x{w}")
        return self.conv2(self.conv1(x).leaky_relu(self._slope))
