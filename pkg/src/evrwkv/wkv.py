"""Bidirectional WKV attention.

For a sequence of keys ``k`` and values ``v`` (shape ``(..., T, C)``) and
per-channel ``w`` (decay) and ``u`` (current-token bonus)::

    y_t = sum_i exp(E[t, i]) v_i / sum_i exp(E[t, i])

    E[t, i] = -(|t - i| - 1) / T * w + k_i     (i != t, "vrwkv")
    E[t, i] = -(|t - i| - 1) / T * (w + k_i)   (i != t, "grouped")
    E[t, t] = u + k_t

Two implementations are provided: a direct O(T^2) evaluation used as the
oracle, and an O(T) pair of directional scans that carry a running maximum
exponent so nothing overflows. Only the "vrwkv" grouping factorises into a
scan; "grouped" always runs on the quadratic path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor.value import Value, _send, as_value

EXPONENTS = ("vrwkv", "grouped")


@dataclass
class WkvParams:
    w: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        self.u = np.asarray(self.u, dtype=np.float64)
        if np.any(~(self.w > 0)):
            raise ValueError("decay w must be positive in every channel")


def _floats(x) -> np.ndarray:
    """float32 input stays float32; everything else becomes float64."""
    x = np.asarray(x)
    return x if x.dtype == np.float32 else x.astype(np.float64)


def _check(k: np.ndarray, v: np.ndarray, w: np.ndarray, u: np.ndarray, exponent: str) -> None:
    if exponent not in EXPONENTS:
        raise ValueError(f"unknown wkv exponent {exponent!r}; expected one of {EXPONENTS}")
    if k.shape != v.shape or k.ndim < 2:
        raise ValueError(f"k and v must share shape (..., T, C); got {k.shape} and {v.shape}")
    if k.shape[-2] < 1:
        raise ValueError("sequence length must be >= 1")
    if w.shape != (k.shape[-1],) or u.shape != (k.shape[-1],):
        raise ValueError(f"w and u must have shape ({k.shape[-1]},); got {w.shape}, {u.shape}")


# ---------------------------------------------------------------------------
# quadratic reference
# ---------------------------------------------------------------------------


def _exponents(k, w, u, rows, exponent):
    """E[..., t, i, c] for t in ``rows``; shape (..., len(rows), T, C)."""
    T = k.shape[-2]
    dist = np.abs(rows[:, None] - np.arange(T)[None, :]) - 1.0  # (nb, T)
    self_mask = dist < 0
    kk = k[..., None, :, :]  # (..., 1, T, C)
    if exponent == "vrwkv":
        E = -(dist[..., None] / T) * w + kk
    else:
        E = -(dist[..., None] / T) * (w + kk)
    cur = u + k[..., rows, :]  # (..., nb, C)
    E = np.where(self_mask[..., None], cur[..., :, None, :], E)
    return E, dist, self_mask


def bi_wkv_naive(k, v, params: WkvParams, exponent: str = "vrwkv", block: int | None = None) -> np.ndarray:
    """Direct evaluation, max-subtracted per output token.

    Works channel-major so the weighted sum over sources is a batched
    matmul; output rows are processed ``block`` at a time to bound memory.
    """
    k, v = _floats(k), _floats(v)
    _check(k, v, params.w, params.u, exponent)
    T = k.shape[-2]
    kc = np.swapaxes(k, -1, -2)  # (..., C, T)
    vc = np.swapaxes(v, -1, -2)[..., None]  # (..., C, T, 1)
    w = params.w.astype(k.dtype)[:, None, None]
    u = params.u.astype(k.dtype)[:, None]
    if block is None:
        block = max(1, min(T, 2_000_000 // max(1, kc.size)))
    out = np.empty(kc.shape, dtype=k.dtype)
    src = np.arange(T)
    for lo in range(0, T, block):
        rows = src[lo:lo + block]
        dist = (np.abs(rows[:, None] - src[None, :]) - 1.0) / T  # (nb, T)
        if exponent == "vrwkv":
            E = kc[..., None, :] - dist * w
        else:
            E = -dist * (w + kc[..., None, :])
        E[..., np.arange(rows.size), rows] = u + kc[..., rows]
        E -= E.max(axis=-1, keepdims=True)
        np.exp(E, out=E)
        out[..., rows] = (E @ vc)[..., 0] / E.sum(axis=-1)
    return np.swapaxes(out, -1, -2)


def bi_wkv_naive_backward(k, v, params: WkvParams, grad, exponent: str = "vrwkv"):
    """Gradients of sum(grad * y) from the quadratic formula: (dk, dv, dw, du)."""
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    g = np.asarray(grad, dtype=np.float64)
    _check(k, v, params.w, params.u, exponent)
    T = k.shape[-2]
    rows = np.arange(T)
    E, dist, self_mask = _exponents(k, params.w, params.u, rows, exponent)
    E -= E.max(axis=-2, keepdims=True)
    s = np.exp(E)
    s /= s.sum(axis=-2, keepdims=True)  # (..., T_out, T_in, C)
    y = (s * v[..., None, :, :]).sum(axis=-2)
    gt = g[..., :, None, :]
    dv = (s * gt).sum(axis=-3)
    dE = s * gt * (v[..., None, :, :] - y[..., :, None, :])
    lead = tuple(range(dE.ndim - 3))
    dself = np.where(self_mask[..., None], dE, 0.0)
    dcross = dE - dself
    ddist = -(np.where(self_mask, 0.0, dist) / T)[..., None]  # dE/dw on off-diagonal
    dw = (dcross * ddist).sum(axis=lead + (-3, -2))
    du = dself.sum(axis=lead + (-3, -2))
    if exponent == "vrwkv":
        dk = dE.sum(axis=-3)
    else:
        dk = dself.sum(axis=-3) + (dcross * ddist).sum(axis=-3)
    return dk, dv, dw, du


# ---------------------------------------------------------------------------
# linear scan
# ---------------------------------------------------------------------------


def _scan(keys, payloads, d, moments: bool = False):
    """Exclusive decayed sums along axis -2, in both directions at once.

    For each position t and direction this returns a log-scale ``p[t]`` and,
    for every payload ``x``, ``acc[t]`` such that

        exp(p[t]) * acc[t] = sum_{i before t} exp(-(|t - i| - 1) d + keys[i]) x[i]

    where "before" means i < t for the forward direction and i > t for the
    backward one. With ``moments`` it also returns the same sums weighted by
    (|t - i| - 1). Results come back as ``[forward, backward]``, each a tuple
    ``(p, acc, mom)`` where ``acc`` and ``mom`` have a leading payload axis.
    """
    T = keys.shape[-2]
    # time-major layout with the two directions stacked: (T, 2, ..., C)
    kt = np.moveaxis(np.stack([keys, keys[..., ::-1, :]]), -2, 0).copy()
    xs = np.stack([np.stack([x, x[..., ::-1, :]]) for x in payloads])
    xt = np.moveaxis(xs, -2, 0).copy()  # (T, P, 2, ..., C)
    dt = kt.dtype
    p = np.full(kt.shape[1:], -np.inf, dtype=dt)
    acc = np.zeros(xt.shape[1:], dtype=dt)
    mom = np.zeros(xt.shape[1:], dtype=dt) if moments else None
    p_out = np.empty(kt.shape, dtype=dt)
    acc_out = np.empty(xt.shape, dtype=dt)
    mom_out = np.empty(xt.shape, dtype=dt) if moments else None
    with np.errstate(invalid="ignore"):
        for t in range(T):
            p_out[t] = p
            acc_out[t] = acc
            k_now = kt[t]
            pd = p - d
            q = np.maximum(pd, k_now)
            e1 = np.exp(pd - q)
            e2 = np.exp(k_now - q)
            if moments:
                mom_out[t] = mom
                mom += acc
                mom *= e1
            acc *= e1
            acc += e2 * xt[t]
            p = q

    def split(a, payload_axis):
        a = np.moveaxis(a, 0, -2)
        if payload_axis:
            fwd, bwd = a[:, 0], a[:, 1]
        else:
            fwd, bwd = a[0], a[1]
        return fwd, bwd[..., ::-1, :]

    pf, pb = split(p_out, False)
    af, ab = split(acc_out, True)
    mf, mb = split(mom_out, True) if moments else (None, None)
    return [(pf, af, mf), (pb, ab, mb)]


def _scan_forward(k, v, w, u):
    T = k.shape[-2]
    w, u = np.asarray(w, dtype=k.dtype), np.asarray(u, dtype=k.dtype)
    d = w / T
    ones = np.ones_like(v)
    (pf, (af, bf), (maf, mbf)), (pb, (ab, bb), (mab, mbb)) = _scan(k, [v, ones], d, moments=True)
    cur = u + k
    q = np.maximum(np.maximum(pf, pb), cur)
    ef = np.exp(pf - q)
    eb = np.exp(pb - q)
    ec = np.exp(cur - q)
    num = ef * af + eb * ab + ec * v
    den = ef * bf + eb * bb + ec
    y = num / den
    cache = dict(k=k, v=v, d=d, T=T, q=q, ef=ef, eb=eb, ec=ec, den=den, y=y,
                 maf=maf, mbf=mbf, mab=mab, mbb=mbb)
    return y, cache


def _scan_backward(cache, g):
    k, v, y, den, q = cache["k"], cache["v"], cache["y"], cache["den"], cache["q"]
    T, d = cache["T"], cache["d"]
    lead = tuple(range(k.ndim - 1))
    s_self = cache["ec"] / den
    du = (g * s_self * (v - y)).sum(axis=lead)
    dv = g * s_self
    dk = dv * (v - y)
    dydw = -(cache["ef"] * (cache["maf"] - y * cache["mbf"]) + cache["eb"] * (cache["mab"] - y * cache["mbb"])) / (T * den)
    dw = (g * dydw).sum(axis=lead)
    # token t's weight on source i is exp(k_i - (|t-i|-1) d - q_t) / den_t,
    # so the cross terms are directional scans with key -q_t
    h = g / den
    hy = h * y
    with np.errstate(invalid="ignore", over="ignore"):
        for m, (ah, ahy), _ in _scan(-q, [h, hy], d):
            scale = np.exp(k + m)
            scale = np.where(np.isfinite(m), scale, 0.0)
            cross = scale * ah
            dv = dv + cross
            dk = dk + v * cross - scale * ahy
    return dk, dv, dw, du


def bi_wkv_scan(k, v, params: WkvParams) -> np.ndarray:
    """O(T) evaluation of the "vrwkv" grouping."""
    k, v = _floats(k), _floats(v)
    _check(k, v, params.w, params.u, "vrwkv")
    y, _ = _scan_forward(k, v, params.w, params.u)
    return y


def bi_wkv_backward(k, v, params: WkvParams, grad, impl: str = "scan", exponent: str = "vrwkv"):
    """(dk, dv, dw, du) for upstream ``grad``; ``impl`` is "scan" or "naive"."""
    if impl == "naive" or exponent == "grouped":
        return bi_wkv_naive_backward(k, v, params, grad, exponent=exponent)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    _check(k, v, params.w, params.u, exponent)
    _, cache = _scan_forward(k, v, params.w, params.u)
    return _scan_backward(cache, np.asarray(grad, dtype=np.float64))


# ---------------------------------------------------------------------------
# graph ops
# ---------------------------------------------------------------------------


def bi_wkv(k: Value, v: Value, w: Value, u: Value, exponent: str = "vrwkv", impl: str = "scan") -> Value:
    """Differentiable Bi-WKV over axis -2 of ``k``/``v``."""
    k, v, w, u = (as_value(a) for a in (k, v, w, u))
    _check(k.data, v.data, w.data, u.data, exponent)
    params = WkvParams(w.data, u.data)
    if exponent == "vrwkv" and impl == "scan":
        y, cache = _scan_forward(k.data, v.data, w.data, u.data)

        def grads(g):
            return _scan_backward(cache, g)
    else:
        y = bi_wkv_naive(k.data, v.data, params, exponent=exponent)

        def grads(g):
            return bi_wkv_naive_backward(k.data, v.data, params, g, exponent=exponent)

    def bw(g):
        dk, dv, dw, du = grads(g)
        _send(k, dk)
        _send(v, dv)
        _send(w, dw)
        _send(u, du)

    return Value.make(y, (k, v, w, u), bw)


_AXES = ((1, 2, 0), (2, 1, 0))  # rows (sequence along W), columns (along H)


def re_wkv_2d(k, v, params_h, params_v, iterations: int = 2, exponent: str = "vrwkv", impl: str = "scan") -> Value:
    """Alternate Bi-WKV over rows then columns of a (C, H, W) grid.

    ``params_h``/``params_v`` are ``(w, u)`` pairs (Values or arrays, or
    :class:`WkvParams`). Each pass feeds its output in as the next pass's
    values; keys are reused.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    k, v = as_value(k), as_value(v)
    pairs = [_as_pair(params_h), _as_pair(params_v)]
    out = v
    for it in range(iterations):
        axes = _AXES[it % 2]
        w, u = pairs[it % 2]
        y = bi_wkv(k.transpose(axes), out.transpose(axes), w, u, exponent=exponent, impl=impl)
        out = y.transpose(tuple(np.argsort(axes)))
    return out


def _as_pair(p):
    if isinstance(p, WkvParams):
        return as_value(p.w), as_value(p.u)
    w, u = p
    return as_value(w), as_value(u)
