"""Iterative radix-2 Cooley-Tukey FFT, vectorised over leading axes."""

from __future__ import annotations

import numpy as np

_BITREV_CACHE: dict[int, np.ndarray] = {}
_TWIDDLE_CACHE: dict[tuple[int, bool], np.ndarray] = {}


def next_pow2(n: int) -> int:
    return 1 if n <= 1 else 1 << (int(n) - 1).bit_length()


def _bit_reverse(n: int) -> np.ndarray:
    perm = _BITREV_CACHE.get(n)
    if perm is None:
        bits = n.bit_length() - 1
        idx = np.arange(n)
        perm = np.zeros(n, dtype=np.int64)
        for b in range(bits):
            perm |= ((idx >> b) & 1) << (bits - 1 - b)
        _BITREV_CACHE[n] = perm
    return perm


def fft(x, inverse: bool = False) -> np.ndarray:
    """1-D DFT along the last axis; its length must be a power of two."""
    a = np.asarray(x, dtype=np.complex128)
    n = a.shape[-1]
    if n & (n - 1):
        raise ValueError(f"radix-2 FFT needs a power-of-two length, got {n}")
    lead = a.shape[:-1]
    a = a[..., _bit_reverse(n)]
    b = np.empty_like(a)
    m = 1
    while m < n:
        tw = _twiddles(m, inverse)
        src = a.reshape(lead + (n // (2 * m), 2 * m))
        dst = b.reshape(src.shape)
        even = src[..., :m]
        odd = src[..., m:] * tw
        np.add(even, odd, out=dst[..., :m])
        np.subtract(even, odd, out=dst[..., m:])
        a, b = b, a
        m *= 2
    if inverse:
        a /= n
    return a


def _twiddles(m: int, inverse: bool) -> np.ndarray:
    key = (m, inverse)
    tw = _TWIDDLE_CACHE.get(key)
    if tw is None:
        sign = 1.0 if inverse else -1.0
        tw = _TWIDDLE_CACHE[key] = np.exp(sign * 1j * np.pi * np.arange(m) / m)
    return tw


def ifft(x) -> np.ndarray:
    return fft(x, inverse=True)


def fft2(x) -> np.ndarray:
    """2-D DFT over the last two axes."""
    return np.swapaxes(fft(np.swapaxes(fft(x), -1, -2)), -1, -2)


def ifft2(x) -> np.ndarray:
    return np.swapaxes(ifft(np.swapaxes(ifft(x), -1, -2)), -1, -2)


def dft_naive(x) -> np.ndarray:
    """O(N^2) matrix DFT over the last two axes; reference only."""
    x = np.asarray(x, dtype=np.complex128)
    h, w = x.shape[-2:]
    fh = np.exp(-2j * np.pi * np.outer(np.arange(h), np.arange(h)) / h)
    fw = np.exp(-2j * np.pi * np.outer(np.arange(w), np.arange(w)) / w)
    return fh @ x @ fw.T
