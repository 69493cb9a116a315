"""Cross-modal RWKV block and the U-shaped encoder/decoder built from it.

Features travel between blocks as (C, H, W) grids; inside a block they are
also viewed as (T, C) token matrices with T = H * W in raster order.
"""

from __future__ import annotations

import numpy as np

from .tensor import (
    Conv2d,
    ConvTranspose2d,
    DepthwiseConv2d,
    LayerNorm,
    Linear,
    Module,
    Value,
    as_value,
    concat,
    param,
    split,
)
from .wkv import re_wkv_2d


def to_tokens(x: Value) -> Value:
    c, h, w = x.shape
    return x.reshape(c, h * w).transpose(1, 0)


def to_grid(t: Value, h: int, w: int) -> Value:
    n, c = t.shape
    if n != h * w:
        raise ValueError(f"token count {n} does not match a {h}x{w} grid")
    return t.transpose(1, 0).reshape(c, h, w)


class OmniShift(Module):
    """Weighted sum of identity and 1x1 / 3x3 / 5x5 depthwise branches."""

    KERNELS = (1, 3, 5)

    def __init__(self, rng, c: int):
        self.branch_weights = param(np.full(4, 0.25))
        self.convs = [DepthwiseConv2d(rng, c, k) for k in self.KERNELS]

    def branches(self, x: Value) -> list[Value]:
        return [x] + [conv(x) for conv in self.convs]

    def __call__(self, x: Value) -> Value:
        out = None
        for i, b in enumerate(self.branches(x)):
            term = self.branch_weights[i] * b
            out = term if out is None else out + term
        return out


class CSShift(Module):
    """Per-modality OmniShift; ``cross=True`` also adds the other modality's
    branches under each modality's weights."""

    def __init__(self, rng, c: int, cross: bool = False):
        self.img = OmniShift(rng, c)
        self.ev = OmniShift(rng, c)
        self._cross = cross

    def __call__(self, x_img: Value, x_ev: Value, h: int, w: int) -> tuple[Value, Value]:
        if x_img.shape != x_ev.shape:
            raise ValueError(f"modalities must share shape, got {x_img.shape} and {x_ev.shape}")
        g_img, g_ev = to_grid(x_img, h, w), to_grid(x_ev, h, w)
        b_img, b_ev = self.img.branches(g_img), self.ev.branches(g_ev)
        out_img = _weighted(self.img.branch_weights, b_img)
        out_ev = _weighted(self.ev.branch_weights, b_ev)
        if self._cross:
            out_img = out_img + _weighted(self.img.branch_weights, b_ev)
            out_ev = out_ev + _weighted(self.ev.branch_weights, b_img)
        return to_tokens(out_img), to_tokens(out_ev)


def _weighted(weights: Value, branches: list[Value]) -> Value:
    out = weights[0] * branches[0]
    for i in range(1, len(branches)):
        out = out + weights[i] * branches[i]
    return out


class DPConv(Module):
    """Depthwise 3x3 followed by pointwise 1x1."""

    def __init__(self, rng, c: int):
        self.depthwise = DepthwiseConv2d(rng, c, 3)
        self.pointwise = Conv2d(rng, c, c, 1, bias=False)

    def __call__(self, x: Value) -> Value:
        return self.pointwise(self.depthwise(x))


class WkvDirection(Module):
    """Decay (stored as log w so w stays positive) and current-token bonus."""

    def __init__(self, rng, c: int):
        self.log_w = param(np.log(rng.uniform(0.1, 1.0, size=c)))
        self.u = param(np.zeros(c))

    def pair(self) -> tuple[Value, Value]:
        return self.log_w.exp(), self.u


class ReWKV(Module):
    def __init__(self, rng, c: int, share_direction_params: bool = False):
        self.horizontal = WkvDirection(rng, c)
        self.vertical = None if share_direction_params else WkvDirection(rng, c)

    def __call__(self, k: Value, v: Value, exponent: str = "vrwkv", iterations: int = 2) -> Value:
        ph = self.horizontal.pair()
        pv = ph if self.vertical is None else self.vertical.pair()
        return re_wkv_2d(k, v, ph, pv, iterations=iterations, exponent=exponent)


class SpatialMix(Module):
    def __init__(self, rng, c: int, cs_shift_cross: bool = False, share_direction_params: bool = False,
                 wkv_exponent: str = "vrwkv", residual: bool = True):
        self.ln_img = LayerNorm(c)
        self.ln_ev = LayerNorm(c)
        self.cs_shift = CSShift(rng, c, cross=cs_shift_cross)
        self.key_img = DPConv(rng, c)
        self.key_ev = DPConv(rng, c)
        self.value_img = Linear(rng, c, c)
        self.value_ev = Linear(rng, c, c)
        self.receptance_img = Linear(rng, c, c)
        self.receptance_ev = Linear(rng, c, c)
        self.wkv_img = ReWKV(rng, c, share_direction_params)
        self.wkv_ev = ReWKV(rng, c, share_direction_params)
        self.alpha_img = param(np.zeros(c))
        self.alpha_ev = param(np.zeros(c))
        self.out_img = Linear(rng, c, c)
        self.out_ev = Linear(rng, c, c)
        self._exponent = wkv_exponent
        self._residual = residual

    def mix(self, x_img: Value, x_ev: Value) -> dict[str, Value]:
        """Every intermediate of the mixing chain, keyed by name (grids are (C,H,W))."""
        c, h, w = x_img.shape
        t_img, t_ev = to_tokens(x_img), to_tokens(x_ev)
        s_img, s_ev = self.cs_shift(self.ln_img(t_img), self.ln_ev(t_ev), h, w)
        k_img = self.key_img(to_grid(s_img, h, w))
        k_ev = self.key_ev(to_grid(s_ev, h, w))
        v_img, v_ev = self.value_img(s_img), self.value_ev(s_ev)
        r_img, r_ev = self.receptance_img(s_img), self.receptance_ev(s_ev)
        # keys are exchanged between modalities
        wkv_img = to_tokens(self.wkv_img(k_ev, to_grid(v_img, h, w), exponent=self._exponent))
        wkv_ev = to_tokens(self.wkv_ev(k_img, to_grid(v_ev, h, w), exponent=self._exponent))
        g_img, g_ev = self.alpha_img.sigmoid(), self.alpha_ev.sigmoid()
        x1 = g_img * wkv_img + (1.0 - g_img) * t_ev
        x2 = g_ev * wkv_ev + (1.0 - g_ev) * t_img
        o_img = self.out_img(r_img.sigmoid() * x1)
        o_ev = self.out_ev(r_ev.sigmoid() * x2)
        return dict(t_img=t_img, t_ev=t_ev, s_img=s_img, s_ev=s_ev, k_img=k_img, k_ev=k_ev,
                    v_img=v_img, v_ev=v_ev, r_img=r_img, r_ev=r_ev, wkv_img=wkv_img, wkv_ev=wkv_ev,
                    x1=x1, x2=x2, o_img=o_img, o_ev=o_ev)

    def __call__(self, x_img: Value, x_ev: Value) -> tuple[Value, Value]:
        _, h, w = x_img.shape
        m = self.mix(x_img, x_ev)
        o_img, o_ev = to_grid(m["o_img"], h, w), to_grid(m["o_ev"], h, w)
        if self._residual:
            return x_img + o_img, x_ev + o_ev
        return o_img, o_ev


class ChannelMix(Module):
    """Image-only gated feed-forward: R * (relu(X Wk)^2 Wv), X from conv + OmniShift."""

    def __init__(self, rng, c: int, hidden_ratio: int = 4, residual: bool = True):
        self.ln = LayerNorm(c)
        self.conv = Conv2d(rng, c, c, 1, bias=False)
        self.shift = OmniShift(rng, c)
        self.key = Linear(rng, c, hidden_ratio * c)
        self.value = Linear(rng, hidden_ratio * c, c)
        self.receptance = Linear(rng, c, c)
        self._residual = residual

    def __call__(self, x: Value) -> Value:
        _, h, w = x.shape
        xn = to_grid(self.ln(to_tokens(x)), h, w)
        xc = to_tokens(self.shift(self.conv(xn)))
        kc = self.key(xc).squared_relu()
        vc = self.value(kc)
        rc = self.receptance(xc).sigmoid()
        out = to_grid(rc * vc, h, w)
        return x + out if self._residual else out


class CrossRWKVBlock(Module):
    def __init__(self, rng, c: int, spatial_mix: bool = True, channel_mix: bool = True, hidden_ratio: int = 4,
                 **spatial_kwargs):
        self.spatial = SpatialMix(rng, c, **spatial_kwargs) if spatial_mix else None
        self.channel = ChannelMix(rng, c, hidden_ratio, residual=spatial_kwargs.get("residual", True)) if channel_mix else None

    def __call__(self, x_img: Value, x_ev: Value) -> tuple[Value, Value]:
        if self.spatial is not None:
            x_img, x_ev = self.spatial(x_img, x_ev)
        if self.channel is not None:
            x_img = self.channel(x_img)
        return x_img, x_ev


class CrossUNet(Module):
    """Encoder levels halve resolution and double channels; the deepest level
    is the bottleneck. Decoder levels upsample, concatenate the skip and fuse
    with a 1x1 conv. A final 3x3 conv maps the concatenated streams to two
    C-channel outputs."""

    def __init__(self, rng, c: int = 16, levels: int = 4, multipliers=(1, 2, 4, 8), blocks: int = 1, **block_kwargs):
        if len(multipliers) != levels:
            raise ValueError(f"need {levels} channel multipliers, got {multipliers}")
        chans = [c * m for m in multipliers]
        self._levels = levels

        def stage(ch):
            return [CrossRWKVBlock(rng, ch, **block_kwargs) for _ in range(blocks)]

        self.encoder = [stage(chans[i]) for i in range(levels - 1)]
        self.down_img = [Conv2d(rng, chans[i], chans[i + 1], 3, stride=2, pad=1) for i in range(levels - 1)]
        self.down_ev = [Conv2d(rng, chans[i], chans[i + 1], 3, stride=2, pad=1) for i in range(levels - 1)]
        self.bottleneck = stage(chans[-1])
        self.up_img = [ConvTranspose2d(rng, chans[i + 1], chans[i], 2, stride=2) for i in range(levels - 1)]
        self.up_ev = [ConvTranspose2d(rng, chans[i + 1], chans[i], 2, stride=2) for i in range(levels - 1)]
        self.fuse_img = [Conv2d(rng, 2 * chans[i], chans[i], 1) for i in range(levels - 1)]
        self.fuse_ev = [Conv2d(rng, 2 * chans[i], chans[i], 1) for i in range(levels - 1)]
        self.decoder = [stage(chans[i]) for i in range(levels - 1)]
        self.split = Conv2d(rng, 2 * c, 2 * c, 3)

    def check_extent(self, h: int, w: int) -> None:
        f = 2 ** (self._levels - 1)
        if h % f or w % f:
            raise ValueError(f"U-Net input {h}x{w} must be divisible by {f}")

    def __call__(self, x_img: Value, x_ev: Value) -> tuple[Value, Value]:
        x_img, x_ev = as_value(x_img), as_value(x_ev)
        self.check_extent(*x_img.shape[1:])
        skips = []
        for i in range(self._levels - 1):
            for blk in self.encoder[i]:
                x_img, x_ev = blk(x_img, x_ev)
            skips.append((x_img, x_ev))
            x_img, x_ev = self.down_img[i](x_img), self.down_ev[i](x_ev)
        for blk in self.bottleneck:
            x_img, x_ev = blk(x_img, x_ev)
        for i in reversed(range(self._levels - 1)):
            s_img, s_ev = skips[i]
            x_img = self.fuse_img[i](concat([self.up_img[i](x_img), s_img], axis=0))
            x_ev = self.fuse_ev[i](concat([self.up_ev[i](x_ev), s_ev], axis=0))
            for blk in self.decoder[i]:
                x_img, x_ev = blk(x_img, x_ev)
        out = self.split(concat([x_img, x_ev], axis=0))
        c = out.shape[0] // 2
        o_img, o_ev = split(out, [c, c], axis=0)
        return o_img, o_ev
