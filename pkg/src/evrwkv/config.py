"""Run configuration: one flat JSON document, validated before use."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .losses import LossWeights
from .wkv import EXPONENTS


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # architecture
    channels: int = 16
    levels: int = 4
    multipliers: list = field(default_factory=lambda: [1, 2, 4, 8])
    blocks_per_level: int = 1
    hidden_ratio: int = 4
    wkv_exponent: str = "vrwkv"
    share_direction_params: bool = False
    cs_shift_cross: bool = False
    residual: bool = True
    # events
    bins: int = 32
    voxel_norm: str = "max_abs"
    t_start: float | None = None
    t_end: float | None = None
    # frequency branch
    sigma_min: float = 0.3
    sigma_max: float = 4.0
    gaussian_kernel: int = 11
    fft_circular: bool = False
    # ablations
    eisfe: bool = True
    spatial_mix: bool = True
    channel_mix: bool = True
    ms_ssim_loss: bool = True
    # loss
    lambda_r: float = 1.0
    lambda_p: float = 0.1
    lambda_s: float = 0.2
    lambda_m: float = 0.2
    charbonnier_global: bool = False
    # training
    seed: int = 0
    precision: str = "float64"
    lr: float = 1e-3
    steps: int = 500
    beta1: float = 0.9
    beta2: float = 0.999

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.channels < 1 or self.levels < 1 or self.blocks_per_level < 0:
            raise ConfigError("channels, levels must be >= 1 and blocks_per_level >= 0")
        if len(self.multipliers) != self.levels:
            raise ConfigError(f"multipliers {self.multipliers} must have one entry per level ({self.levels})")
        if self.wkv_exponent not in EXPONENTS:
            raise ConfigError(f"wkv_exponent must be one of {EXPONENTS}, got {self.wkv_exponent!r}")
        if self.bins < 1:
            raise ConfigError("bins must be >= 1")
        if self.voxel_norm not in ("none", "max_abs", "std"):
            raise ConfigError(f"unknown voxel_norm {self.voxel_norm!r}")
        if not 0 < self.sigma_min < self.sigma_max:
            raise ConfigError("need 0 < sigma_min < sigma_max")
        if self.gaussian_kernel < 1 or self.gaussian_kernel % 2 == 0:
            raise ConfigError("gaussian_kernel must be a positive odd integer")
        if self.precision not in ("float64", "float32"):
            raise ConfigError(f"precision must be float64 or float32, got {self.precision!r}")
        if self.lr < 0 or not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ConfigError("invalid optimiser settings")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        try:
            self.loss_weights()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_r, self.lambda_p, self.lambda_s, self.lambda_m if self.ms_ssim_loss else 0.0)

    @property
    def spatial_divisor(self) -> int:
        """Input images must be divisible by this (stem halves, U-Net halves levels-1 times)."""
        return 2 ** self.levels

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(data)

    def replace(self, **changes) -> "RunConfig":
        return self.from_dict({**self.to_dict(), **changes})

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# Settings for full-scale training runs; the defaults above are sized for one CPU.
FULL_SCALE = {
    "crop": 256,
    "batch_size": 8,
    "epochs": 80,
    "lr": {"SDE": 1e-4, "SDSD": 1.5e-4, "RELED": 1e-4},
    "optimizer": "Adam",
}
