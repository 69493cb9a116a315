"""End-to-end enhancement network: brighten, stem, restore, fuse, reconstruct."""

from __future__ import annotations

import numpy as np

from .config import RunConfig
from .cross_rwkv import CrossUNet
from .eisfe import EISFE, ReconstructHead
from .feature_init import IlluminationEstimator, Stem, retinex_boost
from .tensor import Conv2d, Module, Value, as_value, concat


class EvRWKV(Module):
    def __init__(self, cfg: RunConfig | None = None):
        cfg = cfg or RunConfig()
        self._cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        c = cfg.channels
        self.illumination = IlluminationEstimator(rng)
        self.image_stem = Stem(rng, 3, c)
        self.event_stem = Stem(rng, cfg.bins, c)
        self.unet = CrossUNet(
            rng, c, levels=cfg.levels, multipliers=tuple(cfg.multipliers), blocks=cfg.blocks_per_level,
            spatial_mix=cfg.spatial_mix, channel_mix=cfg.channel_mix, hidden_ratio=cfg.hidden_ratio,
            cs_shift_cross=cfg.cs_shift_cross, share_direction_params=cfg.share_direction_params,
            wkv_exponent=cfg.wkv_exponent, residual=cfg.residual,
        )
        if cfg.eisfe:
            self.eisfe = EISFE(rng, c, cfg.sigma_min, cfg.sigma_max, cfg.gaussian_kernel, cfg.fft_circular)
            self.fuse = None
        else:
            # plain 1x1 fusion of the same three inputs stands in for the module
            self.eisfe = None
            self.fuse = Conv2d(rng, 3 * c, c, 1)
        self.head = ReconstructHead(rng, c)

    @property
    def config(self) -> RunConfig:
        return self._cfg

    def check_input(self, image_shape, voxel_shape) -> None:
        if len(image_shape) != 3 or image_shape[0] != 3:
            raise ValueError(f"image must be (3, H, W), got {tuple(image_shape)}")
        if tuple(voxel_shape) != (self._cfg.bins,) + tuple(image_shape[1:]):
            raise ValueError(f"voxel grid {tuple(voxel_shape)} does not match image {tuple(image_shape)} "
                             f"with {self._cfg.bins} bins")
        f = self._cfg.spatial_divisor
        if image_shape[1] % f or image_shape[2] % f:
            raise ValueError(f"image extents {image_shape[1]}x{image_shape[2]} must be divisible by {f}")

    def __call__(self, image, voxel, trace: dict | None = None) -> Value:
        image, voxel = as_value(image), as_value(voxel)
        self.check_input(image.shape, voxel.shape)
        illum = self.illumination(image)
        boosted = retinex_boost(image, illum)
        x_img = self.image_stem(boosted)
        x_ev = self.event_stem(voxel)
        r_img, r_ev = self.unet(x_img, x_ev)
        if self.eisfe is not None:
            fused = self.eisfe(r_img, r_ev, x_img)
        else:
            fused = self.fuse(concat([r_img, r_ev, x_img], axis=0))
        out = self.head(fused)
        if trace is not None:
            trace.update(illumination=illum.data, boosted=boosted.data, x_img=x_img.data, x_ev=x_ev.data,
                         restored_img=r_img.data, restored_ev=r_ev.data, fused=fused.data)
        return out


def parameter_group(path: str) -> str:
    """Coarse grouping of parameter paths used in gradient reports."""
    top = path.split(".", 1)[0]
    if top == "unet":
        if ".spatial." in path:
            return "spatial_mix"
        if ".channel." in path:
            return "channel_mix"
        return "unet"
    if top in ("illumination", "image_stem", "event_stem"):
        return "feature_init"
    if top in ("head", "fuse"):
        return "head"
    return top
