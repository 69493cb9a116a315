"""Parameter containers and the handful of layers the model is built from."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops
from .value import Value


def param(data: np.ndarray, name: str | None = None) -> Value:
    return Value(np.asarray(data, dtype=np.float64), requires_grad=True, name=name)


def uniform_init(rng: np.random.Generator, shape: tuple, fan_in: int) -> Value:
    bound = 1.0 / np.sqrt(fan_in)
    return param(rng.uniform(-bound, bound, size=shape))


class Module:
    """Attribute-registered tree of parameters and sub-modules.

    Parameter paths are dotted attribute names; :meth:`named_parameters`
    returns them sorted so iteration order never depends on construction order.
    """

    def named_parameters(self, prefix: str = "") -> dict[str, Value]:
        out: dict[str, Value] = {}
        for key, val in vars(self).items():
            if not key.startswith("_"):
                _collect(val, f"{prefix}{key}", out)
        return dict(sorted(out.items()))

    def parameters(self) -> Iterator[Value]:
        yield from self.named_parameters().values()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for k, p in params.items():
            arr = np.asarray(state[k])
            if arr.shape != p.shape:
                raise ValueError(f"{k}: expected shape {p.shape}, got {arr.shape}")
            p.data = arr.astype(p.data.dtype, copy=True)


def _collect(val, path: str, out: dict) -> None:
    if isinstance(val, Value):
        if val.requires_grad:
            out[path] = val
    elif isinstance(val, Module):
        for key, sub in vars(val).items():
            if not key.startswith("_"):
                _collect(sub, f"{path}.{key}", out)
    elif isinstance(val, (list, tuple)):
        for i, item in enumerate(val):
            _collect(item, f"{path}.{i}", out)


class Conv2d(Module):
    def __init__(self, rng, c_in: int, c_out: int, k: int, stride: int = 1, pad: int | None = None, bias: bool = True):
        self.weight = uniform_init(rng, (c_out, c_in, k, k), c_in * k * k)
        self.bias = param(np.zeros(c_out)) if bias else None
        self._stride = stride
        self._pad = (k - 1) // 2 if pad is None else pad

    def __call__(self, x: Value) -> Value:
        return ops.conv2d(x, self.weight, self.bias, stride=self._stride, pad=self._pad)


class ConvTranspose2d(Module):
    def __init__(self, rng, c_in: int, c_out: int, k: int, stride: int = 2, pad: int = 0, bias: bool = True):
        self.weight = uniform_init(rng, (c_in, c_out, k, k), c_in * k * k)
        self.bias = param(np.zeros(c_out)) if bias else None
        self._stride = stride
        self._pad = pad

    def __call__(self, x: Value) -> Value:
        return ops.conv_transpose2d(x, self.weight, self.bias, stride=self._stride, pad=self._pad)


class DepthwiseConv2d(Module):
    def __init__(self, rng, c: int, k: int):
        self.kernel = uniform_init(rng, (c, k, k), k * k)

    def __call__(self, x: Value) -> Value:
        return ops.depthwise_conv2d(x, self.kernel)


class Linear(Module):
    """Token-wise projection ``(T, C_in) @ (C_in, C_out)``, no bias."""

    def __init__(self, rng, c_in: int, c_out: int):
        self.weight = uniform_init(rng, (c_in, c_out), c_in)

    def __call__(self, x: Value) -> Value:
        return ops.matmul(x, self.weight)


class LayerNorm(Module):
    def __init__(self, c: int, eps: float = 1e-5):
        self.gamma = param(np.ones(c))
        self.beta = param(np.zeros(c))
        self._eps = eps

    def __call__(self, x: Value) -> Value:
        return ops.layer_norm(x, self.gamma, self.beta, self._eps)
