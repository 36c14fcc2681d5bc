"""Seeded weight initialization.

Every tensor draws from its own generator keyed on (master seed, tensor
name), so two models built from the same seed share bit-identical tensors
wherever their architectures overlap (the ablation switch changes only the
mixing tensors).
"""

from __future__ import annotations

import zlib

import numpy as np

from .tensor import Tensor, complex_dtype


def rng_for(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float32):
    """Normal(0, std) resampled until every draw lies within two deviations."""
    out = rng.normal(0.0, std, size=shape)
    for _ in range(16):
        bad = np.abs(out) > 2 * std
        if not bad.any():
            break
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
    return np.clip(out, -2 * std, 2 * std).astype(dtype)


def param(seed: int, name: str, shape, dtype, kind: str = "trunc_normal",
          std: float = 0.02, fan_in: int | None = None) -> Tensor:
    """Build one named leaf parameter."""
    rng = rng_for(seed, name)
    rdtype = np.dtype(dtype)
    if kind == "zeros":
        data = np.zeros(shape, dtype=rdtype)
    elif kind == "ones":
        data = np.ones(shape, dtype=rdtype)
    elif kind == "trunc_normal":
        data = trunc_normal(rng, shape, std, rdtype)
    elif kind == "kaiming":
        scale = np.sqrt(2.0 / fan_in)
        data = rng.normal(0.0, scale, size=shape).astype(rdtype)
    elif kind == "complex_trunc_normal":
        re = trunc_normal(rng, shape, std, np.float64)
        im = trunc_normal(rng, shape, std, np.float64)
        data = (re + 1j * im).astype(complex_dtype(rdtype))
    else:
        raise ValueError(f"unknown init kind {kind!r}")
    return Tensor(data, requires_grad=True, name=name)
