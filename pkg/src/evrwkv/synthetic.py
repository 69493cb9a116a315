"""Synthetic low-light pairs with matching event streams.

The sharp scene is a few smooth colour blobs, bars and a ramp. Motion is
simulated by translating the scene one pixel at a time; events fire where
the log intensity of consecutive frames changes by more than a contrast
threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .events import EventStream


@dataclass
class SyntheticPair:
    sharp: np.ndarray  # (3, H, W) in [0, 1]
    low: np.ndarray  # (3, H, W) in [0, 1]
    events: EventStream


def sharp_scene(rng: np.random.Generator, height: int = 64, width: int = 64) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width] / np.array([height, width])[:, None, None]
    img = np.empty((3, height, width))
    for c in range(3):
        img[c] = 0.25 + 0.3 * (rng.uniform() * xx + rng.uniform() * yy)
    for _ in range(4):
        cy, cx = rng.uniform(0.15, 0.85, size=2)
        r = rng.uniform(0.08, 0.2)
        mask = ((yy - cy) ** 2 + (xx - cx) ** 2) < r * r
        img[:, mask] = rng.uniform(0.05, 0.95, size=(3, 1))
    for _ in range(2):
        y0, x0 = rng.integers(0, height - 8), rng.integers(0, width - 8)
        img[:, y0:y0 + rng.integers(4, 16), x0:x0 + 3] = rng.uniform(0, 1, size=(3, 1, 1))
    return np.clip(img, 0.0, 1.0)


def darken(img: np.ndarray, rng: np.random.Generator, gamma: float = 2.2, gain: float = 0.6,
           noise: float = 0.02) -> np.ndarray:
    low = gain * img**gamma + rng.normal(0.0, noise, size=img.shape)
    return np.clip(low, 0.0, 1.0)


def motion_events(img: np.ndarray, rng: np.random.Generator, shifts: int = 8, threshold: float = 0.15,
                  duration_us: int = 10_000) -> EventStream:
    """Events from log-intensity differences between successively shifted copies."""
    gray = img.mean(axis=0)
    h, w = gray.shape
    log_ref = np.log(gray + 1e-3)
    ts, xs, ys, ps = [], [], [], []
    step = duration_us / shifts
    for i in range(1, shifts + 1):
        log_now = np.log(np.roll(gray, i, axis=1) + 1e-3)
        diff = log_now - log_ref
        fired = np.abs(diff) >= threshold
        y, x = np.nonzero(fired)
        t = ((i - 1) * step + rng.uniform(0.0, step, size=y.size)).astype(np.uint64)
        ts.append(t)
        xs.append(x)
        ys.append(y)
        ps.append(np.sign(diff[fired]).astype(np.int8))
        log_ref = np.where(fired, log_now, log_ref)
    return EventStream(np.concatenate(ts), np.concatenate(xs), np.concatenate(ys), np.concatenate(ps), h, w)


def make_pair(seed: int = 0, height: int = 64, width: int = 64) -> SyntheticPair:
    rng = np.random.default_rng(seed)
    sharp = sharp_scene(rng, height, width)
    low = darken(sharp, rng)
    return SyntheticPair(sharp, low, motion_events(sharp, rng))
