"""Real-to-complex forward and complex-to-real inverse 3D FFT over (D, H, W).

The 1D kernel is an iterative radix-2 Cooley-Tukey transform, vectorized
over every other axis; lengths that are not powers of two fall back to the
Bluestein chirp-z algorithm (whose internal convolutions are again radix-2).
Desk-scale extents make correctness and zero dependencies worth more than
peak throughput here.

Conventions:

* forward transforms are unnormalized, the inverse carries the full
  ``1/(D*H*W)`` factor, so ``irfft3(rfft3(x), W) == x``;
* the half spectrum keeps ``W//2 + 1`` bins along the innermost spatial
  axis.  ``W`` must be even (odd widths are rejected rather than silently
  padded, because the dropped-bin reconstruction assumes an even width).
  ``W == 1`` is the one odd width accepted: nothing is dropped there and
  the width transform degenerates to the identity, which the stride
  cascades of small encoder inputs rely on;
* gradients follow the real-pair convention of :mod:`afnoseg.tensor`; the
  adjoint of ``rfft3`` is a zero-padded unnormalized inverse transform and
  the adjoint of ``irfft3`` folds the dropped-bin cotangents back onto
  their Hermitian partners.

Both ``rfft3`` and ``irfft3`` accept either ndarrays or :class:`Tensor`
nodes; Tensor inputs produce tape nodes with the adjoints wired in.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import ConfigError
from .tensor import Tensor, complex_dtype


@lru_cache(maxsize=None)
def _bit_reversal(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def _fft_pow2_last(x: np.ndarray, sign: int) -> np.ndarray:
    """Unnormalized DFT along the last axis; length must be a power of two."""
    n = x.shape[-1]
    if n == 1:
        return x.copy()
    y = x[..., _bit_reversal(n)]
    half = 1
    while half < n:
        m = 2 * half
        tw = np.exp(sign * 2j * np.pi * np.arange(half) / m).astype(x.dtype)
        yy = y.reshape(y.shape[:-1] + (n // m, m))
        even = yy[..., :half]
        odd = yy[..., half:] * tw
        y = np.concatenate([even + odd, even - odd], axis=-1).reshape(x.shape)
        half = m
    return y


def _next_pow2(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


def _bluestein_last(x: np.ndarray, sign: int) -> np.ndarray:
    """Arbitrary-length DFT along the last axis via the chirp-z transform."""
    n = x.shape[-1]
    j = np.arange(n)
    # j*j mod 2n keeps the chirp angle principal for large n
    chirp = np.exp(sign * 1j * np.pi * ((j * j) % (2 * n)) / n).astype(x.dtype)
    m = _next_pow2(2 * n - 1)
    a = np.zeros(x.shape[:-1] + (m,), dtype=x.dtype)
    a[..., :n] = x * chirp
    b = np.zeros(m, dtype=x.dtype)
    b[:n] = np.conjugate(chirp)
    if n > 1:
        b[m - (n - 1):] = np.conjugate(chirp[1:])[::-1]
    conv = _fft_pow2_last(_fft_pow2_last(a, -1) * _fft_pow2_last(b, -1), +1) / m
    return (conv[..., :n] * chirp).astype(x.dtype)


def fft_axis(x: np.ndarray, axis: int, sign: int) -> np.ndarray:
    """Unnormalized complex DFT along ``axis``; sign -1 forward, +1 backward."""
    x = np.asarray(x)
    if not np.iscomplexobj(x):
        x = x.astype(complex_dtype(x.dtype))
    n = x.shape[axis]
    xm = np.moveaxis(x, axis, -1)
    ym = _fft_pow2_last(xm, sign) if n & (n - 1) == 0 else _bluestein_last(xm, sign)
    return np.moveaxis(ym, -1, axis)


def check_even_width(width: int):
    if width < 1:
        raise ConfigError(f"spatial width must be >= 1, got {width}")
    if width != 1 and width % 2 != 0:
        raise ConfigError(
            f"spatial width {width} is odd: the half spectrum assumes an even "
            "width; pad width to even"
        )


def _rfft3_data(x: np.ndarray) -> np.ndarray:
    if x.ndim != 5:
        raise ConfigError(f"rfft3 expects a (B, D, H, W, C) volume, got ndim={x.ndim}")
    width = x.shape[3]
    check_even_width(width)
    z = fft_axis(x, 3, -1)[:, :, :, : width // 2 + 1, :]
    z = fft_axis(z, 2, -1)
    z = fft_axis(z, 1, -1)
    return z


def _extend_width(u: np.ndarray, width: int) -> np.ndarray:
    """Rebuild the dropped bins of the innermost spatial axis by conjugation."""
    wf = width // 2 + 1
    if u.shape[3] != wf:
        raise ConfigError(
            f"half spectrum has {u.shape[3]} width bins, expected {wf} for width {width}"
        )
    if width - wf == 0:
        return u
    mirrored = np.conjugate(u[:, :, :, width - wf:0:-1, :])
    return np.concatenate([u, mirrored], axis=3)


def _irfft3_data(z: np.ndarray, width: int) -> np.ndarray:
    if z.ndim != 5:
        raise ConfigError(f"irfft3 expects a (B, D, H, Wf, C) spectrum, got ndim={z.ndim}")
    check_even_width(width)
    d, h = z.shape[1], z.shape[2]
    u = fft_axis(z, 1, +1) / d
    u = fft_axis(u, 2, +1) / h
    full = _extend_width(u, width)
    return np.ascontiguousarray((fft_axis(full, 3, +1) / width).real)


def rfft3_adjoint(g: np.ndarray, width: int) -> np.ndarray:
    """Cotangent of rfft3: real array from a half-spectrum cotangent."""
    u = fft_axis(g, 1, +1)
    u = fft_axis(u, 2, +1)
    wf = width // 2 + 1
    full = np.zeros(u.shape[:3] + (width,) + u.shape[4:], dtype=u.dtype)
    full[:, :, :, :wf, :] = u
    return np.ascontiguousarray(fft_axis(full, 3, +1).real)


def irfft3_adjoint(g: np.ndarray, width: int) -> np.ndarray:
    """Cotangent of irfft3: fold dropped-bin terms onto their Hermitian partners."""
    d, h = g.shape[1], g.shape[2]
    wf = width // 2 + 1
    t = fft_axis(g, 3, -1) / width
    folded = t[:, :, :, :wf, :].copy()
    if width - wf > 0:
        folded[:, :, :, 1: width // 2, :] += np.conjugate(t[:, :, :, :wf - 1:-1, :])
    folded = fft_axis(folded, 2, -1) / h
    folded = fft_axis(folded, 1, -1) / d
    return folded


def rfft3(x):
    """Forward real 3D FFT of a (B, D, H, W, C) volume; keeps W//2+1 width bins."""
    if isinstance(x, Tensor):
        width = x.data.shape[3]
        data = _rfft3_data(x.data)

        def vjp(g):
            return (rfft3_adjoint(g, width),)

        return Tensor.from_op(data, (x,), vjp)
    return _rfft3_data(np.asarray(x))


def irfft3(z, width: int):
    """Inverse of :func:`rfft3`, normalized by 1/(D*H*W); returns a real volume."""
    if isinstance(z, Tensor):
        data = _irfft3_data(z.data, width)

        def vjp(g):
            return (irfft3_adjoint(g, width),)

        return Tensor.from_op(data, (z,), vjp)
    return _irfft3_data(np.asarray(z), width)
