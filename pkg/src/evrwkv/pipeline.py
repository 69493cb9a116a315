"""End-to-end entry points: enhancement, checkpoints, model-level gradient
checks and the parameter ledger."""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .events import EventStream, normalize_voxel, voxelize
from .imageio import atomic_write_bytes
from .losses import PerceptualProxy, SsimConfig, ms_ssim_index, psnr, ssim_index, total_loss
from .model import EvRWKV, parameter_group
from .synthetic import make_pair
from .tensor import no_grad, relative_error
from .tensor.gradcheck import finite_difference_gradient

GROUPS = ("feature_init", "spatial_mix", "channel_mix", "unet", "eisfe", "head")
GRADCHECK_THRESHOLD = 1e-3


def event_voxels(events: EventStream, cfg: RunConfig, height: int | None = None, width: int | None = None,
                 t_start: float | None = None, t_end: float | None = None) -> np.ndarray:
    """Voxelize and normalise per the config; explicit window arguments win over config values."""
    t_start = cfg.t_start if t_start is None else t_start
    t_end = cfg.t_end if t_end is None else t_end
    grid = voxelize(events, cfg.bins, height, width, t_start, t_end)
    return normalize_voxel(grid, cfg.voxel_norm).data


def image_metrics(pred: np.ndarray, target: np.ndarray) -> dict:
    out = {"psnr_db": psnr(pred, target), "ssim": ssim_index(pred, target)}
    try:
        out["ms_ssim"] = ms_ssim_index(pred, target)
    except ValueError:
        out["ms_ssim"] = None  # image smaller than one SSIM window
    return out


@dataclass
class EnhancementResult:
    raw: np.ndarray  # network output before clamping
    trace: dict = field(default_factory=dict)
    metrics: dict | None = None

    @property
    def image(self) -> np.ndarray:
        return np.clip(self.raw, 0.0, 1.0)


def enhance(image: np.ndarray, voxel: np.ndarray, model: EvRWKV, target: np.ndarray | None = None,
            keep_trace: bool = False) -> EnhancementResult:
    trace = {} if keep_trace else None
    with no_grad():
        out = model(image, voxel, trace=trace)
    res = EnhancementResult(out.data, trace or {})
    if target is not None:
        res.metrics = image_metrics(res.image, target)
    return res


# checkpoints: an .npz with one array per parameter path plus the config as JSON


def save_checkpoint(path, model: EvRWKV) -> None:
    arrays = {f"param:{k}": v for k, v in model.state_dict().items()}
    arrays["config"] = np.frombuffer(json.dumps(model.config.to_dict(), sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    atomic_write_bytes(path, buf.getvalue())


def load_checkpoint(path, cfg: RunConfig | None = None) -> EvRWKV:
    """Rebuild the model from a checkpoint; ``cfg`` overrides the stored config."""
    with np.load(path) as data:
        stored = RunConfig.from_dict(json.loads(bytes(data["config"]).decode()))
        state = {k[len("param:"):]: data[k] for k in data.files if k.startswith("param:")}
    model = EvRWKV(cfg or stored)
    model.load_state_dict(state)
    return model


# model-level finite-difference check


@dataclass
class GradReport:
    errors: dict = field(default_factory=dict)  # group -> max relative error
    worst: dict = field(default_factory=dict)  # group -> parameter path with that error
    threshold: float = GRADCHECK_THRESHOLD

    @property
    def passed(self) -> bool:
        return all(e <= self.threshold for e in self.errors.values())

    def text(self) -> str:
        if not self.errors:
            return "no parameter groups selected\n"
        lines = [f"{'group':<14} {'max_rel_err':>12}  status  worst parameter"]
        for g in sorted(self.errors):
            e = self.errors[g]
            lines.append(f"{g:<14} {e:>12.3e}  {'ok' if e <= self.threshold else 'FAIL':<6}  {self.worst[g]}")
        return "\n".join(lines) + "\n"


def gradcheck_config(cfg: RunConfig) -> RunConfig:
    """Shrink a config to gradient-check scale, keeping its ablation flags."""
    return cfg.replace(channels=4, bins=4, blocks_per_level=1, hidden_ratio=2, steps=0)


def model_gradcheck(cfg: RunConfig | None = None, groups=None, entries_per_group: int = 6, h: float = 1e-6,
                    size: int = 16, threshold: float = GRADCHECK_THRESHOLD) -> GradReport:
    """Compare backprop with central differences on a tiny model.

    The image is ``size`` x ``size`` (feature maps are at most half that).
    For every selected group, ``entries_per_group`` parameter entries are
    probed, spread over as many distinct arrays as possible. ``groups=()``
    selects nothing and yields an empty, passing report.
    """
    cfg = gradcheck_config(cfg or RunConfig())
    model = EvRWKV(cfg)
    pair = make_pair(cfg.seed, size, size)
    voxel = event_voxels(pair.events, cfg)
    weights, ssim_cfg, proxy = cfg.loss_weights(), SsimConfig(), PerceptualProxy()
    params = model.named_parameters()
    wanted = set(GROUPS if groups is None else groups)
    unknown = wanted - set(GROUPS)
    if unknown:
        raise ValueError(f"unknown parameter groups: {sorted(unknown)}")
    by_group: dict[str, list[str]] = {}
    for path in params:
        g = parameter_group(path)
        if g in wanted:
            by_group.setdefault(g, []).append(path)
    report = GradReport(threshold=threshold)
    if not by_group:
        return report

    def objective(_params):
        return total_loss(model(pair.low, voxel), pair.sharp, weights, ssim_cfg, proxy, cfg.charbonnier_global)

    model.zero_grad()
    objective(params).backward()
    rng = np.random.default_rng(cfg.seed)
    for g, paths in sorted(by_group.items()):
        picks = rng.choice(len(paths), size=entries_per_group, replace=len(paths) < entries_per_group)
        chosen: dict[str, list[int]] = {}
        for i in picks:
            path = paths[i]
            chosen.setdefault(path, []).append(int(rng.integers(params[path].size)))
        worst_err, worst_path = 0.0, ""
        for path, idx in chosen.items():
            p = params[path]
            analytic = np.zeros(p.shape) if p.grad is None else p.grad
            numeric = finite_difference_gradient(objective, params, path, h=h, indices=np.unique(idx))
            err = relative_error(analytic, numeric)
            if err >= worst_err:
                worst_err, worst_path = err, path
        report.errors[g], report.worst[g] = worst_err, worst_path
    return report


def describe(model: EvRWKV) -> str:
    """Plain-text parameter ledger: path, shape, count, then the total."""
    params = model.named_parameters()
    width = max((len(k) for k in params), default=4)
    lines = [f"{'path':<{width}}  {'shape':<16} {'count':>9}"]
    for path, p in params.items():
        lines.append(f"{path:<{width}}  {str(tuple(p.shape)):<16} {p.size:>9}")
    lines.append(f"{'total':<{width}}  {'':<16} {model.num_parameters():>9}")
    return "\n".join(lines) + "\n"


__all__ = [
    "EnhancementResult", "GradReport", "describe", "enhance", "event_voxels", "image_metrics",
    "load_checkpoint", "model_gradcheck", "save_checkpoint",
]
