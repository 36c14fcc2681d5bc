"""Pointwise activations, normalization layers, and the sparsifying shrink.

Every function accepts ndarrays or Tensors and returns a Tensor with the
hand-derived backward wired in (fused, rather than composed from
primitives, to keep tapes short).
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr

from .errors import ConfigError
from .tensor import Tensor, as_tensor

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def vjp(g):
        return (g * mask,)

    return Tensor.from_op(np.where(mask, x.data, 0), (x,), vjp)


def relu_split(z) -> Tensor:
    """ReLU applied independently to the real and imaginary parts."""
    z = as_tensor(z)
    mre = z.data.real > 0
    mim = z.data.imag > 0
    data = np.where(mre, z.data.real, 0) + 1j * np.where(mim, z.data.imag, 0)

    def vjp(g):
        return ((g.real * mre + 1j * (g.imag * mim)).astype(z.data.dtype),)

    return Tensor.from_op(data.astype(z.data.dtype), (z,), vjp)


def gelu(x) -> Tensor:
    """Exact-CDF GELU, x * Phi(x); no tanh approximation."""
    x = as_tensor(x)
    cdf = ndtr(x.data)
    pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI

    def vjp(g):
        return (g * (cdf + x.data * pdf),)

    return Tensor.from_op(x.data * cdf, (x,), vjp)


def log(x) -> Tensor:
    x = as_tensor(x)

    def vjp(g):
        return (g / x.data,)

    return Tensor.from_op(np.log(x.data), (x,), vjp)


def softmax_channels(x) -> Tensor:
    """Softmax over the last axis; sums to 1 per position."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - inner),)

    return Tensor.from_op(y, (x,), vjp)


def soft_shrink(z, lam: float) -> Tensor:
    """sign(v) * max(|v| - lam, 0), applied per real/imaginary component.

    The subgradient at |v| == lam is taken as 0.
    """
    if lam < 0:
        raise ConfigError(f"shrink threshold must be >= 0, got {lam}")
    z = as_tensor(z)
    d = z.data
    if np.iscomplexobj(d):
        mre = np.abs(d.real) > lam
        mim = np.abs(d.imag) > lam
        data = (np.sign(d.real) * np.maximum(np.abs(d.real) - lam, 0)
                + 1j * (np.sign(d.imag) * np.maximum(np.abs(d.imag) - lam, 0)))

        def vjp(g):
            return ((g.real * mre + 1j * (g.imag * mim)).astype(d.dtype),)

        return Tensor.from_op(data.astype(d.dtype), (z,), vjp)

    mask = np.abs(d) > lam
    data = np.sign(d) * np.maximum(np.abs(d) - lam, 0)

    def vjp(g):
        return (g * mask,)

    return Tensor.from_op(data, (z,), vjp)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the channel (last) axis per position, then affine."""
    x = as_tensor(x)
    gamma = as_tensor(gamma)
    beta = as_tensor(beta)
    c = x.data.shape[-1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ConfigError(
            f"layer_norm affine parameters must have shape ({c},), got "
            f"{gamma.data.shape} and {beta.data.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xm = x.data - mu
    var = (xm * xm).mean(axis=-1, keepdims=True)
    ivar = 1.0 / np.sqrt(var + eps)
    xhat = xm * ivar
    out = gamma.data * xhat + beta.data

    def vjp(g):
        dxhat = g * gamma.data
        dx = ivar * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                     - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        axes = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return Tensor.from_op(out, (x, gamma, beta), vjp)


def batch_norm3d(x, gamma, beta, running_mean, running_var, eps: float = 1e-5,
                 training: bool = False, momentum: float = 0.1) -> Tensor:
    """Normalize per channel over (B, D, H, W).

    In training mode the batch statistics normalize and the running buffers
    (plain ndarrays) are updated in place; the output does not read them, so
    repeated evaluation stays a pure function of the inputs.  In eval mode
    the running buffers normalize.
    """
    x = as_tensor(x)
    gamma = as_tensor(gamma)
    beta = as_tensor(beta)
    c = x.data.shape[-1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ConfigError(
            f"batch_norm3d affine parameters must have shape ({c},), got "
            f"{gamma.data.shape} and {beta.data.shape}"
        )
    axes = (0, 1, 2, 3)
    if training:
        mu = x.data.mean(axis=axes)
        xm = x.data - mu
        var = (xm * xm).mean(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
        ivar = 1.0 / np.sqrt(var + eps)
        xhat = xm * ivar
        out = gamma.data * xhat + beta.data

        def vjp(g):
            dxhat = g * gamma.data
            dx = ivar * (dxhat - dxhat.mean(axis=axes)
                         - xhat * (dxhat * xhat).mean(axis=axes))
            return dx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

        return Tensor.from_op(out, (x, gamma, beta), vjp)

    ivar = 1.0 / np.sqrt(running_var + eps)
    xhat = (x.data - running_mean) * ivar
    out = gamma.data * xhat + beta.data

    def vjp(g):
        return g * (gamma.data * ivar), (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return Tensor.from_op(out, (x, gamma, beta), vjp)
