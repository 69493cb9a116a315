"""Single-pair overfitting loop used as a desk-scale training check."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .losses import PerceptualProxy, SsimConfig, psnr, ssim_index, total_loss
from .model import EvRWKV
from .tensor import Module, no_grad

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    pass


class Adam:
    def __init__(self, params: dict, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def first_non_finite(model: Module) -> str | None:
    for name, p in model.named_parameters().items():
        if not np.all(np.isfinite(p.data)):
            return f"{name} (value)"
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            return f"{name} (gradient)"
    return None


def largest_parameter(model: Module) -> str:
    name, p = max(model.named_parameters().items(), key=lambda kv: float(np.max(np.abs(kv[1].data))))
    return f"{name} (max |value| {float(np.max(np.abs(p.data))):.3g})"


@dataclass
class TrainResult:
    losses: list = field(default_factory=list)
    psnr_start: float = float("nan")
    psnr_end: float = float("nan")
    ssim_start: float = float("nan")
    ssim_end: float = float("nan")
    output: np.ndarray | None = None
    model: EvRWKV | None = None

    @property
    def psnr_gain(self) -> float:
        return self.psnr_end - self.psnr_start

    def loss_csv(self) -> str:
        lines = ["step,loss"] + [f"{i},{v:.10g}" for i, v in enumerate(self.losses)]
        return "\n".join(lines) + "\n"


def train_toy(low: np.ndarray, gt: np.ndarray, voxel: np.ndarray, cfg: RunConfig | None = None,
              steps: int | None = None, model: EvRWKV | None = None, log_every: int = 50,
              stop_at_gain: float | None = None, eval_every: int = 25) -> TrainResult:
    """Fit the model to one (low-light, ground truth, voxel) triple with Adam.

    ``losses[i]`` is the objective before update i. The final PSNR/SSIM are
    measured after the last update. With ``stop_at_gain`` set, PSNR is
    measured every ``eval_every`` updates and training ends once it has
    improved by at least that many dB.
    """
    cfg = cfg or RunConfig()
    steps = cfg.steps if steps is None else steps
    if steps > 2000:
        raise ValueError("toy training is capped at 2000 steps")
    model = model or EvRWKV(cfg)
    params = model.named_parameters()
    opt = Adam(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    weights, ssim_cfg, proxy = cfg.loss_weights(), SsimConfig(), PerceptualProxy()
    res = TrainResult(model=model)

    with no_grad():
        out0 = model(low, voxel).data
    res.psnr_start = psnr(out0, gt)
    res.ssim_start = ssim_index(out0, gt)

    for step in range(steps):
        model.zero_grad()
        try:
            loss = total_loss(model(low, voxel), gt, weights, ssim_cfg, proxy, cfg.charbonnier_global)
        except ValueError as exc:
            if step == 0:
                raise
            # the inputs passed at step 0, so an updated parameter broke a domain check
            raise NumericalError(f"forward pass failed at step {step} ({exc}); "
                                 f"largest parameter: {largest_parameter(model)}") from None
        val = float(loss.data)
        if not np.isfinite(val):
            raise NumericalError(f"loss became {val} at step {step}; first non-finite: {first_non_finite(model)}")
        loss.backward()
        bad = first_non_finite(model)
        if bad is not None:
            raise NumericalError(f"non-finite parameter at step {step}: {bad}")
        res.losses.append(val)
        opt.step()
        if log_every and step % log_every == 0:
            log.info("step %d loss %.6f", step, val)
        if stop_at_gain is not None and (step + 1) % eval_every == 0:
            with no_grad():
                gain = psnr(model(low, voxel).data, gt) - res.psnr_start
            if gain >= stop_at_gain:
                log.info("PSNR gain %.2f dB reached after %d steps", gain, step + 1)
                break

    with no_grad():
        out = model(low, voxel).data
    res.output = out
    res.psnr_end = psnr(out, gt)
    res.ssim_end = ssim_index(out, gt)
    return res
