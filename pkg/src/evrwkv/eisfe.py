"""Frequency/spatial fusion of restored image and event features.

The frequency branch smooths each channel with its own learned-width
Gaussian, applied as a product of spectra. The spatial branch is a
deformable 3x3 convolution. Both are blended by per-pixel spatial attention
and then reweighted per channel.
"""

from __future__ import annotations

import numpy as np

from .fft import fft2, ifft2, next_pow2
from .tensor import Conv2d, ConvTranspose2d, Module, Value, as_value, concat, conv2d, matmul, param, uniform_init
from .tensor.ops import bilinear_sample
from .tensor.value import _send


def gaussian_kernel(sigma: float, K: int) -> np.ndarray:
    """Normalised K x K Gaussian sampled on integer offsets around 0."""
    if K % 2 == 0 or K < 1:
        raise ValueError(f"kernel size must be odd and positive, got {K}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    r = (K - 1) // 2
    ax = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * sigma**2)) / (2.0 * np.pi * sigma**2)
    return g / g.sum()


def gaussian_kernels(sigma: Value, K: int) -> Value:
    """Stack of normalised Gaussians, one per entry of ``sigma`` (C,) -> (C, K, K)."""
    sigma = as_value(sigma)
    r = (K - 1) // 2
    ax = np.arange(-r, r + 1, dtype=np.float64)
    r2 = ax[:, None] ** 2 + ax[None, :] ** 2
    s = sigma.data[:, None, None]
    e = np.exp(-r2 / (2.0 * s**2))
    G = e / e.sum(axis=(1, 2), keepdims=True)

    def bw(g):
        # dG/ds = G * (r2 - sum(G r2)) / s^3
        dGds = G * (r2 - (G * r2).sum(axis=(1, 2), keepdims=True)) / s**3
        _send(sigma, (g * dGds).sum(axis=(1, 2)))

    return Value.make(G, (sigma,), bw)


def fft_filter(x: Value, kernel: Value, circular: bool = False) -> Value:
    """Per-channel 'same'-size convolution of ``x`` (C, H, W) with ``kernel`` (C, K, K).

    Linear mode zero-pads both operands to a power of two that avoids
    wraparound. Circular mode convolves on the power-of-two frame covering
    the image with the kernel centred at the origin.
    """
    x, kernel = as_value(x), as_value(kernel)
    c, h, w = x.shape
    K = kernel.shape[-1]
    r = (K - 1) // 2
    if circular:
        ph, pw = next_pow2(h), next_pow2(w)
        shift, crop = -r, 0
    else:
        ph, pw = next_pow2(h + K - 1), next_pow2(w + K - 1)
        shift, crop = 0, r
    rows = (np.arange(K) + shift) % ph
    cols = (np.arange(K) + shift) % pw
    xf = fft2(np.pad(x.data, ((0, 0), (0, ph - h), (0, pw - w))))
    kframe = np.zeros((c, ph, pw))
    np.add.at(kframe, (slice(None), rows[:, None], cols[None, :]), kernel.data)
    kf = fft2(kframe)
    full = ifft2(xf * kf).real
    out = full[:, crop : crop + h, crop : crop + w]

    def bw(g):
        gframe = np.zeros((c, ph, pw))
        gframe[:, crop : crop + h, crop : crop + w] = g
        gf = fft2(gframe)
        if x.requires_grad:
            _send(x, ifft2(gf * np.conj(kf)).real[:, :h, :w])
        if kernel.requires_grad:
            dframe = ifft2(gf * np.conj(xf)).real
            _send(kernel, dframe[:, rows[:, None], cols[None, :]])

    return Value.make(np.ascontiguousarray(out), (x, kernel), bw)


def sigma_from_raw(sigma_raw: Value, sigma_min: float, sigma_max: float) -> Value:
    return as_value(sigma_raw).sigmoid() * (sigma_max - sigma_min) + sigma_min


def adaptive_gaussian_filter(
    x: Value,
    sigma_raw: Value,
    sigma_min: float = 0.3,
    sigma_max: float = 4.0,
    K: int = 11,
    circular: bool = False,
) -> Value:
    """Blur channel c with a Gaussian of width sigma_min + sigmoid(raw_c) * (sigma_max - sigma_min)."""
    sigma = sigma_from_raw(sigma_raw, sigma_min, sigma_max)
    return fft_filter(x, gaussian_kernels(sigma, K), circular=circular)


def deform_conv2d(x: Value, offsets: Value, weight: Value, bias: Value | None = None) -> Value:
    """Deformable convolution with per-pixel tap offsets.

    ``offsets`` has shape (2*k*k, H, W); channels (2n, 2n+1) shift tap n
    (row-major over the k x k window) by (dy, dx). Output keeps H x W.
    """
    x, offsets, weight = as_value(x), as_value(offsets), as_value(weight)
    c_out, c_in, k, _ = weight.shape
    _, h, w = x.shape
    kk = k * k
    if offsets.shape != (2 * kk, h, w):
        raise ValueError(f"offsets must have shape {(2 * kk, h, w)}, got {offsets.shape}")
    r = (k - 1) // 2
    ti, tj = np.divmod(np.arange(kk), k)
    base = np.stack([
        (np.arange(h)[None, :, None] + (ti - r)[:, None, None]) * np.ones((1, 1, w)),
        (np.arange(w)[None, None, :] + (tj - r)[:, None, None]) * np.ones((1, h, 1)),
    ])  # (2, kk, H, W)
    coords = offsets.reshape(kk, 2, h, w).transpose(1, 0, 2, 3) + base
    sampled = bilinear_sample(x, coords).reshape(c_in * kk, h * w)
    out = matmul(weight.reshape(c_out, c_in * kk), sampled).reshape(c_out, h, w)
    if bias is not None:
        out = out + as_value(bias).reshape(c_out, 1, 1)
    return out


class DeformConv(Module):
    def __init__(self, rng, c_in: int, c_out: int, k: int = 3):
        self.offset_predictor = Conv2d(rng, c_in, 2 * k * k, 3)
        self.weight = uniform_init(rng, (c_out, c_in, k, k), c_in * k * k)
        self.bias = param(np.zeros(c_out))

    def __call__(self, x: Value, offsets: Value | None = None) -> Value:
        if offsets is None:
            offsets = self.offset_predictor(x)
        return deform_conv2d(x, offsets, self.weight, self.bias)


class SpatialAttention(Module):
    """sigmoid(conv7x7([mean_c; max_c])) -> (1, H, W)."""

    def __init__(self, rng, k: int = 7):
        self.conv = Conv2d(rng, 2, 1, k)

    def __call__(self, x: Value) -> Value:
        pooled = concat([x.mean(axis=0, keepdims=True), x.max(axis=0, keepdims=True)], axis=0)
        return self.conv(pooled).sigmoid()


class ChannelAttention(Module):
    """Global average pool, squeeze MLP, sigmoid -> (C, 1, 1)."""

    def __init__(self, rng, c: int, ratio: int = 4):
        hidden = max(1, c // ratio)
        self.w1 = uniform_init(rng, (c, hidden), c)
        self.b1 = param(np.zeros(hidden))
        self.w2 = uniform_init(rng, (hidden, c), hidden)
        self.b2 = param(np.zeros(c))

    def __call__(self, x: Value) -> Value:
        c = x.shape[0]
        z = x.mean(axis=(1, 2)).reshape(1, c)
        z = (matmul(z, self.w1) + self.b1).relu()
        z = (matmul(z, self.w2) + self.b2).sigmoid()
        return z.reshape(c, 1, 1)


class EISFE(Module):
    def __init__(self, rng, c: int, sigma_min: float = 0.3, sigma_max: float = 4.0, K: int = 11,
                 circular: bool = False):
        if not 0 < sigma_min < sigma_max:
            raise ValueError(f"need 0 < sigma_min < sigma_max, got {sigma_min}, {sigma_max}")
        self.to_freq = Conv2d(rng, 3 * c, c, 1)
        self.to_spat = Conv2d(rng, 3 * c, c, 1)
        self.sigma_raw = param(np.zeros(c))
        self.deform = DeformConv(rng, c, c, 3)
        self.attn_freq = SpatialAttention(rng)
        self.attn_spat = SpatialAttention(rng)
        self.attn_chan = ChannelAttention(rng, c)
        self._sigma_range = (sigma_min, sigma_max)
        self._K = K
        self._circular = circular

    def sigmas(self) -> np.ndarray:
        return sigma_from_raw(self.sigma_raw, *self._sigma_range).data

    def branches(self, x_img: Value, x_ev: Value, x_inp: Value) -> tuple[Value, Value]:
        if not (x_img.shape == x_ev.shape == x_inp.shape):
            raise ValueError(f"EISFE inputs must share shape: {x_img.shape}, {x_ev.shape}, {x_inp.shape}")
        fused = concat([x_img, x_ev, x_inp], axis=0)
        x_freq = self.to_freq(fused)
        x_spat = self.to_spat(fused)
        f = adaptive_gaussian_filter(x_freq, self.sigma_raw, *self._sigma_range, K=self._K, circular=self._circular)
        s = self.deform(x_spat)
        return f, s

    def __call__(self, x_img: Value, x_ev: Value, x_inp: Value, gates: tuple | None = None) -> Value:
        """``gates`` = (A_freq, A_spat, A_chan) overrides the attention maps."""
        f, s = self.branches(x_img, x_ev, x_inp)
        if gates is None:
            a_freq, a_spat = self.attn_freq(f), self.attn_spat(s)
        else:
            a_freq, a_spat = as_value(gates[0]), as_value(gates[1])
        fused = a_freq * f + a_spat * s
        a_chan = self.attn_chan(fused) if gates is None else as_value(gates[2])
        return fused * a_chan


class ReconstructHead(Module):
    """1x1 conv, 4x4 stride-2 transposed conv, 1x1 conv to RGB."""

    def __init__(self, rng, c: int, out_channels: int = 3):
        self.proj = Conv2d(rng, c, c, 1)
        self.up = ConvTranspose2d(rng, c, c, 4, stride=2, pad=1)
        self.to_rgb = Conv2d(rng, c, out_channels, 1)

    def __call__(self, x: Value) -> Value:
        return self.to_rgb(self.up(self.proj(x)))
