"""Lightweight all-MLP decoder.

Stage features are projected to a common width, trilinearly upsampled to
the finest encoder grid, concatenated and fused (1x1x1 conv, ReLU, 3D batch
norm).  A transposed convolution sized to the first stage's stride lifts
the fused volume back to the native voxel grid with one channel per class,
and a final 1x1x1 convolution sharpens the logits.  One auxiliary 1x1x1
head per projected stage feature provides deep-supervision taps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import init, ops
from .conv import ConvSpec, conv3d, conv3d_transposed, upsample_trilinear
from .errors import ConfigError
from .tensor import Tensor, concat, matmul


@dataclass(frozen=True)
class DecoderConfig:
    in_dims: tuple[int, int, int, int]
    common_dim: int = 128
    num_classes: int = 2
    up_stride: int = 2  # first-stage cumulative stride; 1 degenerates to a pointwise lift

    def __post_init__(self):
        if self.common_dim < 1:
            raise ConfigError(f"decoder common_dim must be >= 1, got {self.common_dim}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.up_stride < 1:
            raise ConfigError(f"up_stride must be >= 1, got {self.up_stride}")

    @property
    def fuse_spec(self) -> ConvSpec:
        d = self.common_dim
        return ConvSpec(kernel=1, in_channels=4 * d, out_channels=d)

    @property
    def up_spec(self) -> ConvSpec:
        s = self.up_stride
        return ConvSpec(kernel=s, in_channels=self.common_dim,
                        out_channels=self.num_classes, stride=s, padding=0)

    @property
    def sharpen_spec(self) -> ConvSpec:
        n = self.num_classes
        return ConvSpec(kernel=1, in_channels=n, out_channels=n)


@dataclass
class DecoderWeights:
    config: DecoderConfig
    proj_w: list[Tensor]
    proj_b: list[Tensor]
    fuse_w: Tensor
    fuse_b: Tensor
    bn_g: Tensor
    bn_b: Tensor
    bn_mean: np.ndarray
    bn_var: np.ndarray
    up_w: Tensor
    up_b: Tensor
    sharpen_w: Tensor
    sharpen_b: Tensor
    aux_w: list[Tensor]
    aux_b: list[Tensor]

    def named(self, prefix):
        for i in range(4):
            yield f"{prefix}.proj{i}.w", self.proj_w[i]
            yield f"{prefix}.proj{i}.b", self.proj_b[i]
        yield f"{prefix}.fuse.w", self.fuse_w
        yield f"{prefix}.fuse.b", self.fuse_b
        yield f"{prefix}.bn.g", self.bn_g
        yield f"{prefix}.bn.b", self.bn_b
        yield f"{prefix}.up.w", self.up_w
        yield f"{prefix}.up.b", self.up_b
        yield f"{prefix}.sharpen.w", self.sharpen_w
        yield f"{prefix}.sharpen.b", self.sharpen_b
        for i in range(4):
            yield f"{prefix}.aux{i}.w", self.aux_w[i]
            yield f"{prefix}.aux{i}.b", self.aux_b[i]

    def named_buffers(self, prefix):
        yield f"{prefix}.bn.running_mean", self.bn_mean
        yield f"{prefix}.bn.running_var", self.bn_var


def build_decoder(cfg: DecoderConfig, seed: int, dtype, prefix: str = "dec") -> DecoderWeights:
    d, n = cfg.common_dim, cfg.num_classes
    s = cfg.up_stride
    return DecoderWeights(
        config=cfg,
        proj_w=[init.param(seed, f"{prefix}.proj{i}.w", (cin, d), dtype)
                for i, cin in enumerate(cfg.in_dims)],
        proj_b=[init.param(seed, f"{prefix}.proj{i}.b", (d,), dtype, kind="zeros")
                for i in range(4)],
        fuse_w=init.param(seed, f"{prefix}.fuse.w", (1, 1, 1, 4 * d, d), dtype,
                          kind="kaiming", fan_in=4 * d),
        fuse_b=init.param(seed, f"{prefix}.fuse.b", (d,), dtype, kind="zeros"),
        bn_g=init.param(seed, f"{prefix}.bn.g", (d,), dtype, kind="ones"),
        bn_b=init.param(seed, f"{prefix}.bn.b", (d,), dtype, kind="zeros"),
        bn_mean=np.zeros(d, dtype=dtype),
        bn_var=np.ones(d, dtype=dtype),
        up_w=init.param(seed, f"{prefix}.up.w", (s, s, s, n, d), dtype,
                        kind="kaiming", fan_in=s ** 3 * d),
        up_b=init.param(seed, f"{prefix}.up.b", (n,), dtype, kind="zeros"),
        sharpen_w=init.param(seed, f"{prefix}.sharpen.w", (1, 1, 1, n, n), dtype),
        sharpen_b=init.param(seed, f"{prefix}.sharpen.b", (n,), dtype, kind="zeros"),
        aux_w=[init.param(seed, f"{prefix}.aux{i}.w", (d, n), dtype) for i in range(4)],
        aux_b=[init.param(seed, f"{prefix}.aux{i}.b", (n,), dtype, kind="zeros")
               for i in range(4)],
    )


def _check_ladder(features, cfg: DecoderConfig):
    if len(features) != 4:
        raise ConfigError(f"decoder expects 4 stage features, got {len(features)}")
    prev = None
    for i, f in enumerate(features):
        spatial = f.data.shape[1:4]
        if f.data.shape[-1] != cfg.in_dims[i]:
            raise ConfigError(
                f"stage {i} feature has {f.data.shape[-1]} channels, decoder "
                f"expects {cfg.in_dims[i]}"
            )
        if prev is not None and not all(a <= b for a, b in zip(spatial, prev)):
            raise ConfigError(
                f"stage {i} spatial extents {spatial} do not descend the scale "
                f"ladder from {prev}"
            )
        prev = spatial


def decode(features, w: DecoderWeights, training: bool = False):
    """Full decoder pass: (native-resolution logits, per-stage auxiliary logits)."""
    cfg = w.config
    _check_ladder(features, cfg)
    projected = [matmul(f, w.proj_w[i]) + w.proj_b[i] for i, f in enumerate(features)]
    aux = [matmul(p, w.aux_w[i]) + w.aux_b[i] for i, p in enumerate(projected)]
    finest = projected[0].data.shape[1:4]
    lifted = [projected[0]]
    for p in projected[1:]:
        lifted.append(upsample_trilinear(p, finest))
    fused = concat(lifted, axis=-1)
    fused = conv3d(fused, w.fuse_w, w.fuse_b, cfg.fuse_spec)
    fused = ops.relu(fused)
    fused = ops.batch_norm3d(fused, w.bn_g, w.bn_b, w.bn_mean, w.bn_var,
                             training=training)
    logits = conv3d_transposed(fused, w.up_w, w.up_b, cfg.up_spec)
    logits = conv3d(logits, w.sharpen_w, w.sharpen_b, cfg.sharpen_spec)
    return logits, aux


def decoder_forward(features, w: DecoderWeights, training: bool = False) -> Tensor:
    """Native-resolution class logits."""
    return decode(features, w, training)[0]


def aux_heads(features, w: DecoderWeights) -> list[Tensor]:
    """Low-resolution logits from the per-stage projected features."""
    return decode(features, w, training=False)[1]
