"""Runtime scaling of the quadratic and linear WKV implementations."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .tensor import relative_error
from .wkv import WkvParams, bi_wkv_naive, bi_wkv_scan

DEFAULT_LENGTHS = (256, 512, 1024, 2048, 4096)
IMPLS = {"naive": bi_wkv_naive, "scan": bi_wkv_scan}
# agreement required between the two implementations while benchmarking
TOLERANCE = {"float64": 1e-8, "float32": 1e-4}


@dataclass
class BenchResult:
    rows: list = field(default_factory=list)  # (impl, T, C, seconds)
    slopes: dict = field(default_factory=dict)
    max_disagreement: float = 0.0
    precision: str = "float64"

    def csv(self) -> str:
        lines = ["impl,T,C,seconds"] + [f"{i},{t},{c},{s:.6e}" for i, t, c, s in self.rows]
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        parts = [f"{impl} slope {s:.3f}" for impl, s in sorted(self.slopes.items())]
        return "; ".join(parts) + f"; max relative disagreement {self.max_disagreement:.2e}"

    @property
    def agrees(self) -> bool:
        return self.max_disagreement < TOLERANCE[self.precision]


def loglog_slope(lengths, seconds) -> float:
    """Least-squares slope of log(seconds) against log(T)."""
    return float(np.polyfit(np.log(lengths), np.log(seconds), 1)[0])


def _median_time(fn, repeats: int) -> tuple[float, np.ndarray]:
    out = fn()  # warm-up, discarded
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times)), out


def bench_wkv(lengths=DEFAULT_LENGTHS, channels: int = 32, repeats: int = 5, seed: int = 0,
              precision: str = "float64", impls=("naive", "scan"), progress=None) -> BenchResult:
    """Median-of-``repeats`` timings per implementation and length.

    Every length also checks that the implementations agree on the same
    inputs.
    """
    if precision not in TOLERANCE:
        raise ValueError(f"precision must be one of {sorted(TOLERANCE)}, got {precision!r}")
    dtype = np.float32 if precision == "float32" else np.float64
    rng = np.random.default_rng(seed)
    res = BenchResult(precision=precision)
    times = {impl: [] for impl in impls}
    for T in lengths:
        k = rng.normal(size=(T, channels)).astype(dtype)
        v = rng.normal(size=(T, channels)).astype(dtype)
        params = WkvParams(rng.uniform(0.1, 2.0, size=channels), rng.normal(size=channels))
        outs = {}
        for impl in impls:
            fn = IMPLS[impl]
            sec, outs[impl] = _median_time(lambda: fn(k, v, params), repeats)
            times[impl].append(sec)
            res.rows.append((impl, T, channels, sec))
            if progress:
                progress(impl, T, sec)
        if len(outs) == 2:
            err = relative_error(outs["scan"].astype(np.float64), outs["naive"].astype(np.float64))
            res.max_disagreement = max(res.max_disagreement, err)
    if len(lengths) >= 2:
        res.slopes = {impl: loglog_slope(lengths, t) for impl, t in times.items()}
    return res
