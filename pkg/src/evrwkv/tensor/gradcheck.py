"""Central finite differences, used as the oracle for every backward rule."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .value import Value, no_grad


def _scalar(out) -> float:
    val = float(out.data if isinstance(out, Value) else out)
    if not np.isfinite(val):
        raise FloatingPointError(f"objective returned a non-finite value: {val}")
    return val


def finite_difference_gradient(
    f: Callable[[Mapping[str, Value]], Value | float],
    params: Mapping[str, Value],
    path: str,
    h: float = 1e-6,
    indices: np.ndarray | None = None,
) -> np.ndarray:
    """(f(theta + h e_i) - f(theta - h e_i)) / 2h for each element of ``params[path]``.

    When ``indices`` (flat positions) is given only those entries are
    evaluated; the remaining entries of the result are NaN.
    """
    if not 1e-7 <= h <= 1e-4:
        raise ValueError(f"step h={h} outside [1e-7, 1e-4]")
    p = params[path]
    flat = p.data.reshape(-1)
    grad = np.full(flat.shape, np.nan)
    todo = range(flat.size) if indices is None else indices
    with no_grad():
        for i in todo:
            orig = flat[i]
            flat[i] = orig + h
            fp = _scalar(f(params))
            flat[i] = orig - h
            fm = _scalar(f(params))
            flat[i] = orig
            grad[i] = (fp - fm) / (2 * h)
    return grad.reshape(p.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """max |a - n| / max(|a|, |n|, floor) over entries where ``numeric`` is set."""
    mask = ~np.isnan(numeric)
    if not mask.any():
        return 0.0
    a, n = analytic[mask], numeric[mask]
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def check_gradients(
    f: Callable[[Mapping[str, Value]], Value],
    params: Mapping[str, Value],
    h: float = 1e-6,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> dict[str, float]:
    """Compare backward() against finite differences for every named parameter.

    Returns the max relative error per parameter path. ``max_entries`` caps
    how many elements of each array are probed (chosen at random).
    """
    for p in params.values():
        p.grad = None
    loss = f(params)
    loss.backward()
    analytic = {k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for k, p in params.items()}
    rng = rng or np.random.default_rng(0)
    report = {}
    for path, p in params.items():
        idx = None
        if max_entries is not None and p.size > max_entries:
            idx = rng.choice(p.size, size=max_entries, replace=False)
        numeric = finite_difference_gradient(f, params, path, h=h, indices=idx)
        report[path] = relative_error(analytic[path], numeric)
    return report
