"""Four-stage hierarchical encoder.

Each stage lowers resolution with an overlapped patch merge (strided 3x3x3
convolution followed by layer norm), then runs ``depth`` blocks of
pre-norm spectral (or attention) mixing and a Mix-FFN.  Stage channel
widths strictly increase while spatial extents strictly decrease, yielding
one multi-scale feature volume per stage.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import init, ops
from .afno import (AfnoConfig, AfnoWeights, MhsaWeights, afno3d_forward,
                   mhsa_forward)
from .conv import ConvSpec, conv3d
from .errors import ConfigError
from .tensor import Tensor, as_tensor, matmul


@dataclass(frozen=True)
class StageConfig:
    embed_dim: int
    depth: int
    merge: ConvSpec
    mixing: str = "afno"  # "afno" | "mhsa"
    afno: AfnoConfig | None = None
    heads: int = 1
    max_tokens: int = 32768
    ffn_expansion: int = 4

    def __post_init__(self):
        if self.mixing not in ("afno", "mhsa"):
            raise ConfigError(f"mixing must be 'afno' or 'mhsa', got {self.mixing!r}")
        if self.mixing == "afno":
            if self.afno is None or self.afno.channels != self.embed_dim:
                raise ConfigError("afno config must match the stage embed_dim")
        elif self.embed_dim % self.heads:
            raise ConfigError(
                f"heads={self.heads} must divide embed_dim={self.embed_dim}"
            )
        if self.merge.out_channels != self.embed_dim:
            raise ConfigError("patch merge out_channels must equal embed_dim")
        if self.depth < 1:
            raise ConfigError(f"stage depth must be >= 1, got {self.depth}")
        if self.ffn_expansion < 1:
            raise ConfigError(f"ffn_expansion must be >= 1, got {self.ffn_expansion}")


@dataclass
class FfnWeights:
    fc1_w: Tensor
    fc1_b: Tensor
    dw_w: Tensor
    dw_b: Tensor
    fc2_w: Tensor
    fc2_b: Tensor

    def named(self, prefix):
        for n in ("fc1_w", "fc1_b", "dw_w", "dw_b", "fc2_w", "fc2_b"):
            yield f"{prefix}.{n}", getattr(self, n)


@dataclass
class BlockWeights:
    ln1_g: Tensor
    ln1_b: Tensor
    mixing: AfnoWeights | MhsaWeights
    ln2_g: Tensor
    ln2_b: Tensor
    ffn: FfnWeights

    def named(self, prefix):
        yield f"{prefix}.ln1.g", self.ln1_g
        yield f"{prefix}.ln1.b", self.ln1_b
        yield from self.mixing.named(f"{prefix}.mixing")
        yield f"{prefix}.ln2.g", self.ln2_g
        yield f"{prefix}.ln2.b", self.ln2_b
        yield from self.ffn.named(f"{prefix}.ffn")


@dataclass
class Stage:
    config: StageConfig
    merge_w: Tensor
    merge_b: Tensor
    merge_ln_g: Tensor
    merge_ln_b: Tensor
    blocks: list[BlockWeights] = field(default_factory=list)

    def named(self, prefix):
        yield f"{prefix}.merge.w", self.merge_w
        yield f"{prefix}.merge.b", self.merge_b
        yield f"{prefix}.merge.ln.g", self.merge_ln_g
        yield f"{prefix}.merge.ln.b", self.merge_ln_b
        for j, blk in enumerate(self.blocks):
            yield from blk.named(f"{prefix}.b{j}")


def build_stage(cfg: StageConfig, seed: int, dtype, prefix: str) -> Stage:
    c = cfg.embed_dim
    merge = cfg.merge
    fan_in = int(np.prod(merge.kernel)) * merge.in_channels // merge.groups
    stage = Stage(
        config=cfg,
        merge_w=init.param(seed, f"{prefix}.merge.w",
                           merge.kernel + (merge.in_channels // merge.groups, c),
                           dtype, kind="kaiming", fan_in=fan_in),
        merge_b=init.param(seed, f"{prefix}.merge.b", (c,), dtype, kind="zeros"),
        merge_ln_g=init.param(seed, f"{prefix}.merge.ln.g", (c,), dtype, kind="ones"),
        merge_ln_b=init.param(seed, f"{prefix}.merge.ln.b", (c,), dtype, kind="zeros"),
    )
    e = cfg.ffn_expansion
    for j in range(cfg.depth):
        p = f"{prefix}.b{j}"
        if cfg.mixing == "afno":
            a = cfg.afno
            mix = AfnoWeights(
                w1=init.param(seed, f"{p}.mixing.w1",
                              (a.num_blocks, a.block_width, a.hidden_width),
                              dtype, kind="complex_trunc_normal"),
                b1=init.param(seed, f"{p}.mixing.b1", (a.num_blocks, a.hidden_width),
                              dtype, kind="complex_trunc_normal"),
                w2=init.param(seed, f"{p}.mixing.w2",
                              (a.num_blocks, a.hidden_width, a.block_width),
                              dtype, kind="complex_trunc_normal"),
                b2=init.param(seed, f"{p}.mixing.b2", (a.num_blocks, a.block_width),
                              dtype, kind="complex_trunc_normal"),
            )
        else:
            mix = MhsaWeights(
                wqkv=init.param(seed, f"{p}.mixing.wqkv", (c, 3 * c), dtype),
                bqkv=init.param(seed, f"{p}.mixing.bqkv", (3 * c,), dtype, kind="zeros"),
                wo=init.param(seed, f"{p}.mixing.wo", (c, c), dtype),
                bo=init.param(seed, f"{p}.mixing.bo", (c,), dtype, kind="zeros"),
            )
        stage.blocks.append(BlockWeights(
            ln1_g=init.param(seed, f"{p}.ln1.g", (c,), dtype, kind="ones"),
            ln1_b=init.param(seed, f"{p}.ln1.b", (c,), dtype, kind="zeros"),
            mixing=mix,
            ln2_g=init.param(seed, f"{p}.ln2.g", (c,), dtype, kind="ones"),
            ln2_b=init.param(seed, f"{p}.ln2.b", (c,), dtype, kind="zeros"),
            ffn=FfnWeights(
                fc1_w=init.param(seed, f"{p}.ffn.fc1_w", (c, e * c), dtype),
                fc1_b=init.param(seed, f"{p}.ffn.fc1_b", (e * c,), dtype, kind="zeros"),
                dw_w=init.param(seed, f"{p}.ffn.dw_w", (3, 3, 3, 1, e * c), dtype,
                                kind="kaiming", fan_in=27),
                dw_b=init.param(seed, f"{p}.ffn.dw_b", (e * c,), dtype, kind="zeros"),
                fc2_w=init.param(seed, f"{p}.ffn.fc2_w", (e * c, c), dtype),
                fc2_b=init.param(seed, f"{p}.ffn.fc2_b", (c,), dtype, kind="zeros"),
            ),
        ))
    return stage


def patch_merge(x, spec: ConvSpec, w, b, ln_g, ln_b) -> Tensor:
    """Overlapped patch merging: strided conv then channel layer norm."""
    return ops.layer_norm(conv3d(x, w, b, spec), ln_g, ln_b)


def mix_ffn(x, ffn: FfnWeights) -> Tensor:
    """MLP -> depthwise 3x3x3 conv -> GELU -> MLP, with input residual."""
    x = as_tensor(x)
    c = x.data.shape[-1]
    ec = ffn.fc1_w.data.shape[1]
    if ffn.fc1_w.data.shape[0] != c:
        raise ConfigError(f"mix_ffn expects {ffn.fc1_w.data.shape[0]} channels, got {c}")
    t = matmul(x, ffn.fc1_w) + ffn.fc1_b
    dw_spec = ConvSpec(kernel=3, in_channels=ec, out_channels=ec,
                       stride=1, padding=1, groups=ec)
    t = conv3d(t, ffn.dw_w, ffn.dw_b, dw_spec)
    t = ops.gelu(t)
    t = matmul(t, ffn.fc2_w) + ffn.fc2_b
    return t + x


def block_forward(x, cfg: StageConfig, blk: BlockWeights) -> Tensor:
    h = ops.layer_norm(x, blk.ln1_g, blk.ln1_b)
    if cfg.mixing == "afno":
        h = afno3d_forward(h, cfg.afno, blk.mixing)
    else:
        h = mhsa_forward(h, cfg.heads, blk.mixing, cfg.max_tokens)
    h = ops.layer_norm(h, blk.ln2_g, blk.ln2_b)
    return mix_ffn(h, blk.ffn)


def stage_forward(x, stage: Stage) -> Tensor:
    cfg = stage.config
    x = patch_merge(x, cfg.merge, stage.merge_w, stage.merge_b,
                    stage.merge_ln_g, stage.merge_ln_b)
    for blk in stage.blocks:
        x = block_forward(x, cfg, blk)
    return x


def encoder_forward(x, stages: list[Stage]) -> list[Tensor]:
    """Run all stages, returning one feature volume per stage."""
    feats = []
    for stage in stages:
        x = stage_forward(x, stage)
        feats.append(x)
    return feats
