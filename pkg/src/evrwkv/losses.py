"""Training losses and image-quality metrics.

Images are (C, H, W) arrays or Values with a dynamic range of 1.0 unless
stated otherwise. Loss functions return scalar Values so they can be
back-propagated; :func:`psnr` and the ``*_index`` helpers return floats.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .eisfe import gaussian_kernel
from .tensor import Value, as_value, avg_pool2, conv2d, no_grad
from .tensor.ops import separable_blur

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
CHARBONNIER_EPS = 1e-4


@dataclass(frozen=True)
class LossWeights:
    reconstruction: float = 1.0
    perceptual: float = 0.1
    ssim: float = 0.2
    ms_ssim: float = 0.2

    def __post_init__(self):
        vals = self.as_tuple()
        if any(v < 0 for v in vals) or not any(v > 0 for v in vals):
            raise ValueError(f"loss weights must be >= 0 with at least one > 0, got {vals}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.reconstruction, self.perceptual, self.ssim, self.ms_ssim)


@dataclass(frozen=True)
class SsimConfig:
    window: int = 11
    sigma: float = 1.5
    dynamic_range: float = 1.0
    k1: float = 0.01
    k2: float = 0.03
    ms_weights: tuple = field(default=MS_SSIM_WEIGHTS)

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2


def charbonnier(pred, target, eps: float = CHARBONNIER_EPS, global_norm: bool = False) -> Value:
    """mean(sqrt(d^2 + eps^2)); ``global_norm`` uses sqrt(||d||_2 + eps^2) instead."""
    pred, target = as_value(pred), as_value(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    d = pred - target
    if global_norm:
        return ((d * d).sum().sqrt() + eps**2).sqrt()
    return (d * d + eps**2).sqrt().mean()


class PerceptualProxy:
    """Frozen three-stage conv stack (3->8->16->32, stride 2, leaky ReLU).

    Stands in for a pretrained classifier; weights come from a fixed seed so
    every instance is identical.
    """

    CHANNELS = (8, 16, 32)

    def __init__(self, seed: int = 0, in_channels: int = 3, slope: float = 0.1):
        rng = np.random.default_rng(seed)
        self.weights = []
        c_in = in_channels
        for c_out in self.CHANNELS:
            bound = 1.0 / np.sqrt(c_in * 9)
            self.weights.append(Value(rng.uniform(-bound, bound, size=(c_out, c_in, 3, 3))))
            c_in = c_out
        self.slope = slope

    def features(self, x) -> list[Value]:
        feats = []
        h = as_value(x)
        for w in self.weights:
            h = conv2d(h, w, stride=2, pad=1).leaky_relu(self.slope)
            feats.append(h)
        return feats


_DEFAULT_PROXY: PerceptualProxy | None = None


def default_proxy() -> PerceptualProxy:
    global _DEFAULT_PROXY
    if _DEFAULT_PROXY is None:
        _DEFAULT_PROXY = PerceptualProxy()
    return _DEFAULT_PROXY


def perceptual_loss(pred, target, extractor: PerceptualProxy | None = None) -> Value:
    """Mean absolute feature difference, averaged over the extractor's stages.

    The target side is treated as a constant.
    """
    extractor = extractor or default_proxy()
    with no_grad():
        tf = extractor.features(as_value(target).detach())
    pf = extractor.features(pred)
    total = None
    for a, b in zip(pf, tf):
        term = (a - b).abs().mean()
        total = term if total is None else total + term
    return total * (1.0 / len(pf))


def _taps(cfg: SsimConfig) -> np.ndarray:
    """1-D factor of the normalised 2-D Gaussian window."""
    g = gaussian_kernel(cfg.sigma, cfg.window)
    return g.sum(axis=1)


def _ssim_maps(x: Value, y: Value, cfg: SsimConfig) -> tuple[Value, Value]:
    """Luminance and contrast-structure maps over valid window positions."""
    c, h, w = x.shape
    if min(h, w) < cfg.window:
        raise ValueError(f"image {h}x{w} is smaller than the {cfg.window}x{cfg.window} SSIM window")
    taps = _taps(cfg)

    def blur(z):
        return separable_blur(z, taps)

    mu_x, mu_y = blur(x), blur(y)
    mu_xx, mu_yy, mu_xy = mu_x * mu_x, mu_y * mu_y, mu_x * mu_y
    s_xx = blur(x * x) - mu_xx
    s_yy = blur(y * y) - mu_yy
    s_xy = blur(x * y) - mu_xy
    lum = (2.0 * mu_xy + cfg.c1) / (mu_xx + mu_yy + cfg.c1)
    cs = (2.0 * s_xy + cfg.c2) / (s_xx + s_yy + cfg.c2)
    return lum, cs


def _prepare(x, y):
    x, y = as_value(x), as_value(y)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if x.ndim == 2:
        x, y = x.reshape((1,) + x.shape), y.reshape((1,) + y.shape)
    return x, y


def ssim(x, y, cfg: SsimConfig = SsimConfig()) -> Value:
    """Mean SSIM over all valid 11x11 Gaussian windows and channels."""
    x, y = _prepare(x, y)
    lum, cs = _ssim_maps(x, y, cfg)
    return (lum * cs).mean()


def ms_ssim_levels(h: int, w: int, cfg: SsimConfig = SsimConfig()) -> int:
    levels = 0
    while levels < len(cfg.ms_weights) and min(h, w) // (2**levels) >= cfg.window:
        levels += 1
    return levels


def ms_ssim_weights(levels: int, cfg: SsimConfig = SsimConfig()) -> np.ndarray:
    w = np.asarray(cfg.ms_weights[:levels], dtype=np.float64)
    return w / w.sum()


def ms_ssim(x, y, cfg: SsimConfig = SsimConfig(), floor: float = 1e-8) -> Value:
    """Multi-scale SSIM: contrast-structure terms at every scale but the
    coarsest, full SSIM at the coarsest, combined as a weighted geometric mean.

    Fewer than five scales are used when the image is too small; the weights
    are then renormalised to sum to one.
    """
    x, y = _prepare(x, y)
    levels = ms_ssim_levels(*x.shape[1:], cfg=cfg)
    if levels == 0:
        raise ValueError(f"image {x.shape[1:]} too small for MS-SSIM with window {cfg.window}")
    weights = ms_ssim_weights(levels, cfg)
    out = None
    for j in range(levels):
        lum, cs = _ssim_maps(x, y, cfg)
        if j == levels - 1:
            term = (lum * cs).mean()
        else:
            term = cs.mean()
            x, y = avg_pool2(x), avg_pool2(y)
        term = term.clamp_min(floor) ** float(weights[j])
        out = term if out is None else out * term
    return out


def total_loss(pred, target, weights: LossWeights = LossWeights(), cfg: SsimConfig = SsimConfig(),
               extractor: PerceptualProxy | None = None, charbonnier_global: bool = False,
               parts: dict | None = None) -> Value:
    """Weighted sum of Charbonnier, perceptual, (1 - SSIM) and (1 - MS-SSIM).

    Terms whose weight is zero are skipped. If ``parts`` is a dict it is
    filled with the individual loss values as floats.
    """
    pred, target = as_value(pred), as_value(target)
    lr, lp, ls, lm = weights.as_tuple()
    terms = []
    if lr:
        terms.append(("reconstruction", lr, charbonnier(pred, target, global_norm=charbonnier_global)))
    if lp:
        terms.append(("perceptual", lp, perceptual_loss(pred, target, extractor)))
    if ls:
        terms.append(("ssim", ls, 1.0 - ssim(pred, target, cfg)))
    if lm:
        terms.append(("ms_ssim", lm, 1.0 - ms_ssim(pred, target, cfg)))
    total = None
    for name, lam, val in terms:
        if parts is not None:
            parts[name] = float(val.data)
        total = lam * val if total is None else total + lam * val
    return total


def psnr(x, y, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE); identical inputs give +inf."""
    x = np.asarray(x.data if isinstance(x, Value) else x, dtype=np.float64)
    y = np.asarray(y.data if isinstance(y, Value) else y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak**2 / mse)


def ssim_index(x, y, cfg: SsimConfig = SsimConfig()) -> float:
    with no_grad():
        return float(ssim(x, y, cfg).data)


def ms_ssim_index(x, y, cfg: SsimConfig = SsimConfig()) -> float:
    with no_grad():
        return float(ms_ssim(x, y, cfg).data)
