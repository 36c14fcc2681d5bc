"""Frequency-domain token mixing and the attention baseline it replaces.

The mixing block transforms a volume to its half spectrum, splits channels
into K blocks, pushes every frequency position of every block through a
complex two-layer MLP (shared across positions), soft-shrinks, transforms
back and adds the input residual.  With K blocks the mixing weights are a
factor K smaller than a dense CxC complex MLP.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fft, ops
from .errors import ConfigError
from .ops import soft_shrink  # noqa: F401  (re-exported: part of the mixing API)
from .tensor import Tensor, as_tensor, matmul


@dataclass(frozen=True)
class AfnoConfig:
    """Mixing-block hyperparameters for one channel width."""

    channels: int
    num_blocks: int = 8
    shrink: float = 0.01
    hidden_mult: int = 1
    kept_modes: int | None = None  # low-frequency cap per axis; None keeps all

    def __post_init__(self):
        if self.channels < 1:
            raise ConfigError(f"channels must be >= 1, got {self.channels}")
        if self.num_blocks < 1 or self.channels % self.num_blocks:
            raise ConfigError(
                f"num_blocks={self.num_blocks} must divide channels={self.channels}"
            )
        if self.shrink < 0:
            raise ConfigError(f"shrink threshold must be >= 0, got {self.shrink}")
        if self.hidden_mult < 1:
            raise ConfigError(f"hidden_mult must be >= 1, got {self.hidden_mult}")
        if self.kept_modes is not None and self.kept_modes < 1:
            raise ConfigError(f"kept_modes must be >= 1 or None, got {self.kept_modes}")

    @property
    def block_width(self) -> int:
        return self.channels // self.num_blocks

    @property
    def hidden_width(self) -> int:
        return self.hidden_mult * self.block_width


@dataclass
class AfnoWeights:
    """Per-block complex MLP weights: w1 (K, c, h), b1 (K, h), w2 (K, h, c), b2 (K, c)."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def named(self, prefix: str):
        yield f"{prefix}.w1", self.w1
        yield f"{prefix}.b1", self.b1
        yield f"{prefix}.w2", self.w2
        yield f"{prefix}.b2", self.b2

    def check(self, cfg: AfnoConfig):
        k, c, h = cfg.num_blocks, cfg.block_width, cfg.hidden_width
        shapes = {"w1": (k, c, h), "b1": (k, h), "w2": (k, h, c), "b2": (k, c)}
        for name, expected in shapes.items():
            t = getattr(self, name)
            if t.data.shape != expected:
                raise ConfigError(f"afno weight {name} shape {t.data.shape} != {expected}")


def partition_blocks(spectrum, num_blocks: int) -> Tensor:
    """Reshape (B, D, H, Wf, C) into (B, D, H, Wf, K, C/K) channel blocks."""
    spectrum = as_tensor(spectrum)
    c = spectrum.data.shape[-1]
    if c % num_blocks:
        raise ConfigError(f"channels {c} not divisible into {num_blocks} blocks")
    lead = spectrum.data.shape[:-1]
    return spectrum.reshape(lead + (num_blocks, c // num_blocks))


def merge_blocks(blocked) -> Tensor:
    """Inverse of :func:`partition_blocks`."""
    blocked = as_tensor(blocked)
    lead = blocked.data.shape[:-2]
    k, w = blocked.data.shape[-2:]
    return blocked.reshape(lead + (k * w,))


def block_mlp(blocked, weights: AfnoWeights, activation: str = "relu") -> Tensor:
    """Complex two-layer MLP applied at every frequency position of every block.

    The nonlinearity is ReLU on the real and imaginary parts independently;
    ``activation="identity"`` degenerates the block to its C-linear part,
    which is the configuration whose spatial shift equivariance is exact.
    """
    blocked = as_tensor(blocked)
    k, c = blocked.data.shape[-2:]
    if weights.w1.data.shape[:2] != (k, c):
        raise ConfigError(
            f"block width mismatch: spectrum blocks are {(k, c)}, weights expect "
            f"{weights.w1.data.shape[:2]}"
        )
    if activation not in ("relu", "identity"):
        raise ConfigError(f"activation must be 'relu' or 'identity', got {activation!r}")
    lead = blocked.data.shape[:-1]
    x = blocked.reshape(lead + (1, c))
    h = matmul(x, weights.w1).reshape(lead + (weights.w1.data.shape[2],)) + weights.b1
    if activation == "relu":
        h = ops.relu_split(h)
    y = matmul(h.reshape(lead + (1, h.data.shape[-1])), weights.w2)
    return y.reshape(lead + (c,)) + weights.b2


def _mode_mask(shape, kept: int, dtype) -> np.ndarray:
    """1/0 mask keeping the lowest ``kept`` modes per spatial-frequency axis."""
    _, d, h, wf, _ = shape
    kd = np.minimum(np.arange(d), d - np.arange(d))
    kh = np.minimum(np.arange(h), h - np.arange(h))
    kw = np.arange(wf)
    keep = ((kd < kept)[:, None, None]
            & (kh < kept)[None, :, None]
            & (kw < kept)[None, None, :])
    return keep.astype(dtype)[None, :, :, :, None]


def afno3d_forward(x, cfg: AfnoConfig, weights: AfnoWeights,
                   activation: str = "relu") -> Tensor:
    """Spectral mixing block: irfft3(shrink(mlp(rfft3(x)))) + x."""
    x = as_tensor(x)
    if x.data.shape[-1] != cfg.channels:
        raise ConfigError(
            f"afno input has {x.data.shape[-1]} channels, config expects {cfg.channels}"
        )
    weights.check(cfg)
    width = x.data.shape[3]
    spectrum = fft.rfft3(x)
    blocked = partition_blocks(spectrum, cfg.num_blocks)
    mixed = merge_blocks(block_mlp(blocked, weights, activation))
    shrunk = soft_shrink(mixed, cfg.shrink)
    if cfg.kept_modes is not None:
        shrunk = shrunk * _mode_mask(shrunk.data.shape, cfg.kept_modes, shrunk.data.dtype)
    return fft.irfft3(shrunk, width) + x


@dataclass
class MhsaWeights:
    """Fused QKV projection plus output projection."""

    wqkv: Tensor
    bqkv: Tensor
    wo: Tensor
    bo: Tensor

    def named(self, prefix: str):
        yield f"{prefix}.wqkv", self.wqkv
        yield f"{prefix}.bqkv", self.bqkv
        yield f"{prefix}.wo", self.wo
        yield f"{prefix}.bo", self.bo


def mhsa_forward(x, heads: int, weights: MhsaWeights, max_tokens: int = 32768) -> Tensor:
    """Standard scaled dot-product attention over the flattened D*H*W tokens."""
    x = as_tensor(x)
    b, d, h, w, c = x.data.shape
    tokens = d * h * w
    if tokens > max_tokens:
        raise ConfigError(
            f"token count {tokens} exceeds the configured cap {max_tokens} "
            "(quadratic memory guard)"
        )
    if heads < 1 or c % heads:
        raise ConfigError(f"heads={heads} must divide channels={c}")
    if weights.wqkv.data.shape != (c, 3 * c):
        raise ConfigError(
            f"qkv weight shape {weights.wqkv.data.shape} != ({c}, {3 * c})"
        )
    dh = c // heads
    t = x.reshape(b, tokens, c)
    qkv = matmul(t, weights.wqkv) + weights.bqkv
    qkv = qkv.reshape(b, tokens, 3, heads, dh).transpose((2, 0, 3, 1, 4))
    q, k, v = qkv[0], qkv[1], qkv[2]  # each (B, heads, L, dh)
    scores = matmul(q, k.transpose((0, 1, 3, 2))) * (1.0 / np.sqrt(dh))
    attn = ops.softmax_channels(scores)
    out = matmul(attn, v)  # (B, heads, L, dh)
    out = out.transpose((0, 2, 1, 3)).reshape(b, tokens, c)
    out = matmul(out, weights.wo) + weights.bo
    return out.reshape(b, d, h, w, c)


def afno_param_count(cfg: AfnoConfig) -> int:
    """Real scalars stored by one mixing block (factor 2 per complex entry)."""
    k, c, h = cfg.num_blocks, cfg.block_width, cfg.hidden_width
    return 2 * (k * c * h + k * h + k * h * c + k * c)


def mhsa_param_count(channels: int) -> int:
    """QKV and output projections with biases: 4*C^2 + 4*C."""
    return 4 * channels * channels + 4 * channels
