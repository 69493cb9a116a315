"""Shared test utilities."""

from __future__ import annotations

import numpy as np

from evrwkv.tensor import Value, check_gradients

GRAD_TOL = 1e-4
H = 1e-6


def leaves(rng, **shapes) -> dict[str, Value]:
    """Named float64 leaves with standard normal entries."""
    return {name: Value(rng.normal(size=shape), requires_grad=True) for name, shape in shapes.items()}


def projection(rng, fn):
    """Wrap ``fn(params) -> Value`` into a scalar objective sum(r * out) with a fixed random r."""
    cache = {}

    def f(params):
        out = fn(params)
        if "r" not in cache:
            cache["r"] = rng.normal(size=out.shape)
        return (out * cache["r"]).sum()

    return f


def assert_gradients(fn, params, rng, tol=GRAD_TOL, max_entries=None, h=H):
    report = check_gradients(projection(rng, fn), params, h=h, max_entries=max_entries, rng=rng)
    bad = {k: v for k, v in report.items() if not v < tol}
    assert not bad, f"gradient mismatch: {bad}"
    return report

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
