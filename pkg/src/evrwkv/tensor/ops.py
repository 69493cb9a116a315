"""Differentiable array ops used by the model.

Images are channel-first ``(C, H, W)`` without a batch axis. All convolutions
are cross-correlations with zero padding, matching deep-learning convention.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .value import Value, _send, as_value


def matmul(a: Value, b: Value) -> Value:
    a, b = as_value(a), as_value(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        if a.requires_grad:
            _send(a, g @ b.data.T)
        if b.requires_grad:
            _send(b, a.data.T @ g)

    return Value.make(a.data @ b.data, (a, b), bw)


def _out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def conv2d(x: Value, weight: Value, bias: Value | None = None, stride: int = 1, pad: int = 0) -> Value:
    """Dense 2-D convolution. ``weight`` is ``(C_out, C_in, k, k)``."""
    x, weight = as_value(x), as_value(weight)
    c_out, c_in, k, k2 = weight.shape
    if k != k2:
        raise ValueError(f"square kernels only, got {weight.shape}")
    if x.shape[0] != c_in:
        raise ValueError(f"conv2d channel mismatch: input {x.shape}, weight {weight.shape}")
    _, h, w = x.shape
    ho, wo = _out_size(h, k, stride, pad), _out_size(w, k, stride, pad)
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad))) if pad else x.data
    if k == 1:
        cols = xp[:, : stride * ho : stride, : stride * wo : stride].reshape(c_in, ho * wo)
    else:
        win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
        # (C_in, k, k, Ho, Wo) flattened in the same order as weight
        cols = np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(c_in * k * k, ho * wo)
    wmat = weight.data.reshape(c_out, c_in * k * k)
    out = (wmat @ cols).reshape(c_out, ho, wo)
    parents = [x, weight]
    if bias is not None:
        bias = as_value(bias)
        out = out + bias.data[:, None, None]
        parents.append(bias)

    def bw(g):
        gm = g.reshape(c_out, ho * wo)
        if weight.requires_grad:
            _send(weight, (gm @ cols.T).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            _send(bias, gm.sum(axis=1))
        if x.requires_grad:
            dcols = (wmat.T @ gm).reshape(c_in, k, k, ho, wo)
            dxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    dxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[:, i, j]
            _send(x, dxp[:, pad : pad + h, pad : pad + w] if pad else dxp)

    return Value.make(out, parents, bw)


def depthwise_conv2d(x: Value, kernel: Value, stride: int = 1, pad: int | None = None) -> Value:
    """Per-channel convolution; ``kernel`` is ``(C, k, k)`` with odd ``k``.

    ``pad`` defaults to ``(k - 1) // 2`` (shape preserving at stride 1).
    """
    x, kernel = as_value(x), as_value(kernel)
    c, k, _ = kernel.shape
    if k % 2 == 0:
        raise ValueError(f"depthwise kernel size must be odd, got {k}")
    if x.shape[0] != c:
        raise ValueError(f"depthwise channel mismatch: input {x.shape}, kernel {kernel.shape}")
    if pad is None:
        pad = (k - 1) // 2
    _, h, w = x.shape
    ho, wo = _out_size(h, k, stride, pad), _out_size(w, k, stride, pad)
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad))) if pad else x.data
    kd = kernel.data
    if stride == 1 and 2 * pad == k - 1:
        return _depthwise_same(x, kernel, xp)
    out = np.zeros((c, ho, wo), dtype=np.result_type(x.data, kd))
    for i in range(k):
        for j in range(k):
            out += kd[:, i, j, None, None] * xp[:, i : i + stride * ho : stride, j : j + stride * wo : stride]

    def bw(g):
        if kernel.requires_grad:
            dk = np.empty_like(kd)
            for i in range(k):
                for j in range(k):
                    patch = xp[:, i : i + stride * ho : stride, j : j + stride * wo : stride]
                    dk[:, i, j] = (g * patch).sum(axis=(1, 2))
            _send(kernel, dk)
        if x.requires_grad:
            dxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    dxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += kd[:, i, j, None, None] * g
            _send(x, dxp[:, pad : pad + h, pad : pad + w] if pad else dxp)

    return Value.make(out, (x, kernel), bw)


def _windows(xp: np.ndarray, k: int) -> np.ndarray:
    """k x k sliding windows of a padded (C, H, W) map as a (C, H*W, k*k) array."""
    c = xp.shape[0]
    win = sliding_window_view(xp, (k, k), axis=(1, 2))
    return win.reshape(c, -1, k * k)


def _depthwise_same(x: Value, kernel: Value, xp: np.ndarray) -> Value:
    # stride-1 shape-preserving case as a batched matmul over channels
    c, h, w = x.shape
    k = kernel.shape[-1]
    pad = (k - 1) // 2
    kd = kernel.data
    win = _windows(xp, k)
    out = (win @ kd.reshape(c, k * k, 1)).reshape(c, h, w)

    def bw(g):
        if kernel.requires_grad:
            _send(kernel, (g.reshape(c, 1, h * w) @ win).reshape(c, k, k))
        if x.requires_grad:
            gp = np.pad(g, ((0, 0), (pad, pad), (pad, pad)))
            flipped = kd[:, ::-1, ::-1].reshape(c, k * k, 1)
            _send(x, (_windows(gp, k) @ flipped).reshape(c, h, w))

    return Value.make(out, (x, kernel), bw)


def conv_transpose2d(x: Value, weight: Value, bias: Value | None = None, stride: int = 2, pad: int = 0) -> Value:
    """Transposed convolution; ``weight`` is ``(C_in, C_out, k, k)``.

    Output extent is ``(n - 1) * stride - 2 * pad + k``; this is the adjoint of
    :func:`conv2d` with the same geometry.
    """
    x, weight = as_value(x), as_value(weight)
    c_in, c_out, k, _ = weight.shape
    if x.shape[0] != c_in:
        raise ValueError(f"conv_transpose2d channel mismatch: input {x.shape}, weight {weight.shape}")
    _, h, w = x.shape
    hf, wf = (h - 1) * stride + k, (w - 1) * stride + k
    ho, wo = hf - 2 * pad, wf - 2 * pad
    xm = x.data.reshape(c_in, h * w)
    full = np.zeros((c_out, hf, wf), dtype=x.data.dtype)
    for i in range(k):
        for j in range(k):
            full[:, i : i + stride * h : stride, j : j + stride * w : stride] += (
                weight.data[:, :, i, j].T @ xm
            ).reshape(c_out, h, w)
    out = full[:, pad : pad + ho, pad : pad + wo]
    parents = [x, weight]
    if bias is not None:
        bias = as_value(bias)
        out = out + bias.data[:, None, None]
        parents.append(bias)

    def bw(g):
        gf = np.zeros((c_out, hf, wf), dtype=g.dtype)
        gf[:, pad : pad + ho, pad : pad + wo] = g
        dx = np.zeros((c_in, h * w), dtype=g.dtype) if x.requires_grad else None
        dw = np.zeros_like(weight.data) if weight.requires_grad else None
        for i in range(k):
            for j in range(k):
                gs = gf[:, i : i + stride * h : stride, j : j + stride * w : stride].reshape(c_out, h * w)
                if dx is not None:
                    dx += weight.data[:, :, i, j] @ gs
                if dw is not None:
                    dw[:, :, i, j] = xm @ gs.T
        if dx is not None:
            _send(x, dx.reshape(x.shape))
        if dw is not None:
            _send(weight, dw)
        if bias is not None and bias.requires_grad:
            _send(bias, g.sum(axis=(1, 2)))

    return Value.make(np.ascontiguousarray(out), parents, bw)


def layer_norm(x: Value, gamma: Value, beta: Value, eps: float = 1e-5) -> Value:
    """Normalise over the last axis then apply the affine map."""
    x, gamma, beta = as_value(x), as_value(gamma), as_value(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    n = x.shape[-1]

    def bw(g):
        if gamma.requires_grad:
            _send(gamma, (g * xhat).reshape(-1, n).sum(axis=0))
        if beta.requires_grad:
            _send(beta, g.reshape(-1, n).sum(axis=0))
        if x.requires_grad:
            gh = g * gamma.data
            dx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
            _send(x, dx)

    return Value.make(out, (x, gamma, beta), bw)


def bilinear_sample(x: Value, coords: Value) -> Value:
    """Sample ``x`` (C, H, W) at continuous ``coords`` (2, *S) = (row, col).

    Reads outside the image return zero. Differentiable in both arguments;
    the coordinate gradient is the one-sided (floor) derivative at integer
    positions.
    """
    x, coords = as_value(x), as_value(coords)
    c, h, w = x.shape
    sshape = coords.shape[1:]
    ys = coords.data[0].reshape(-1)
    xs = coords.data[1].reshape(-1)
    y0 = np.floor(ys)
    x0 = np.floor(xs)
    fy, fx = ys - y0, xs - x0
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    xflat = x.data.reshape(c, h * w)
    corners = []
    out = np.zeros((c, ys.size), dtype=x.data.dtype)
    for dy in (0, 1):
        for dx in (0, 1):
            yi, xi = y0 + dy, x0 + dx
            valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
            lin = np.where(valid, yi * w + xi, 0)
            wy = fy if dy else 1.0 - fy
            wx = fx if dx else 1.0 - fx
            vals = xflat[:, lin] * valid
            out += vals * (wy * wx)
            corners.append((dy, dx, lin, valid, wy, wx, vals))

    def bw(g):
        gf = g.reshape(c, -1)
        if x.requires_grad:
            dxf = np.zeros(c * h * w, dtype=gf.dtype)
            offs = (np.arange(c) * (h * w))[:, None]
            for _, _, lin, valid, wy, wx, _ in corners:
                wts = gf * (wy * wx * valid)
                dxf += np.bincount((offs + lin).ravel(), weights=wts.ravel(), minlength=c * h * w)
            _send(x, dxf.reshape(c, h, w))
        if coords.requires_grad:
            gy = np.zeros(ys.size, dtype=gf.dtype)
            gx = np.zeros(ys.size, dtype=gf.dtype)
            for dy, dx, _, _, wy, wx, vals in corners:
                s = (gf * vals).sum(axis=0)
                gy += s * wx * (1.0 if dy else -1.0)
                gx += s * wy * (1.0 if dx else -1.0)
            _send(coords, np.stack([gy.reshape(sshape), gx.reshape(sshape)]))

    return Value.make(out.reshape((c,) + sshape), (x, coords), bw)


def avg_pool2(x: Value) -> Value:
    """2x2 mean pooling with stride 2 (odd trailing row/column dropped)."""
    x = as_value(x)
    c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    out = x.data[:, : 2 * h2, : 2 * w2].reshape(c, h2, 2, w2, 2).mean(axis=(2, 4))

    def bw(g):
        full = np.zeros_like(x.data)
        full[:, : 2 * h2, : 2 * w2] = np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * 0.25
        _send(x, full)

    return Value.make(out, (x,), bw)


def maximum(x: Value, floor: float) -> Value:
    return as_value(x).clamp_min(floor)


def separable_blur(x: Value, taps: np.ndarray) -> Value:
    """'Valid' per-channel filtering with the constant outer-product kernel
    ``taps[:, None] * taps[None, :]``, done as a row pass then a column pass."""
    x = as_value(x)
    taps = np.asarray(taps, dtype=np.float64)
    k = taps.size
    c, h, w = x.shape
    ho, wo = h - k + 1, w - k + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"{h}x{w} input is smaller than the {k}-tap window")
    rows = np.zeros((c, h, wo))
    for j in range(k):
        rows += taps[j] * x.data[:, :, j : j + wo]
    out = np.zeros((c, ho, wo))
    for i in range(k):
        out += taps[i] * rows[:, i : i + ho, :]

    def bw(g):
        grows = np.zeros((c, h, wo))
        for i in range(k):
            grows[:, i : i + ho, :] += taps[i] * g
        gx = np.zeros((c, h, w))
        for j in range(k):
            gx[:, :, j : j + wo] += taps[j] * grows
        _send(x, gx)

    return Value.make(out, (x,), bw)
