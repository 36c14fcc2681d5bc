"""Model assembly: configuration, construction, and the full forward pass."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import decoder as dec
from . import encoder as enc
from .afno import AfnoConfig
from .conv import ConvSpec
from .errors import ConfigError
from .fft import check_even_width
from .tensor import Tensor, real_dtype


@dataclass(frozen=True)
class ModelConfig:
    """Declarative architecture description."""

    stage_dims: tuple[int, int, int, int] = (8, 16, 32, 64)
    depths: tuple[int, int, int, int] = (2, 2, 2, 2)
    strides: tuple[int, int, int, int] = (2, 2, 2, 2)
    merge_kernel: int = 3
    mixing: str = "afno"
    afno_blocks: tuple[int, int, int, int] = (1, 8, 8, 8)
    shrink: float = 0.01
    hidden_mult: int = 1
    kept_modes: int | None = None
    heads: tuple[int, int, int, int] = (1, 4, 4, 4)
    max_tokens: int = 32768
    ffn_expansion: int = 4
    decoder_dim: int = 128
    num_classes: int = 2
    in_channels: int = 1

    @classmethod
    def light(cls, mixing: str = "afno") -> "ModelConfig":
        return cls(stage_dims=(23, 64, 128, 256), depths=(2, 2, 2, 2),
                   afno_blocks=(1, 8, 8, 8), heads=(1, 4, 4, 4), mixing=mixing)

    @classmethod
    def tiny(cls, mixing: str = "afno") -> "ModelConfig":
        return cls(stage_dims=(4, 8, 12, 16), depths=(1, 1, 1, 1),
                   afno_blocks=(1, 2, 2, 2), heads=(1, 2, 2, 2),
                   decoder_dim=8, mixing=mixing)

    def with_mixing(self, mixing: str) -> "ModelConfig":
        return replace(self, mixing=mixing)


def validate_model_config(cfg: ModelConfig, field_prefix: str = "model"):
    def err(name, msg):
        raise ConfigError(f"{field_prefix}.{name}: {msg}")

    for name in ("stage_dims", "depths", "strides", "afno_blocks", "heads"):
        v = getattr(cfg, name)
        if len(v) != 4 or any(not isinstance(x, int) or x < 1 for x in v):
            err(name, f"must be 4 positive integers, got {v!r}")
    if any(b <= a for a, b in zip(cfg.stage_dims, cfg.stage_dims[1:])):
        err("stage_dims", f"must strictly increase across stages, got {cfg.stage_dims}")
    if any(s not in (1, 2) for s in cfg.strides):
        err("strides", f"stage strides must be 1 or 2, got {cfg.strides}")
    if cfg.merge_kernel < 1:
        err("merge_kernel", f"must be >= 1, got {cfg.merge_kernel}")
    if cfg.mixing not in ("afno", "mhsa"):
        err("mixing", f"must be 'afno' or 'mhsa', got {cfg.mixing!r}")
    if cfg.mixing == "afno":
        for c, k in zip(cfg.stage_dims, cfg.afno_blocks):
            if c % k:
                err("afno_blocks", f"{k} does not divide stage width {c}")
    else:
        for c, h in zip(cfg.stage_dims, cfg.heads):
            if c % h:
                err("heads", f"{h} does not divide stage width {c}")
    if cfg.shrink < 0:
        err("shrink", f"must be >= 0, got {cfg.shrink}")
    if cfg.hidden_mult < 1:
        err("hidden_mult", f"must be >= 1, got {cfg.hidden_mult}")
    if cfg.kept_modes is not None and cfg.kept_modes < 1:
        err("kept_modes", f"must be >= 1 or null, got {cfg.kept_modes}")
    if cfg.max_tokens < 1:
        err("max_tokens", f"must be >= 1, got {cfg.max_tokens}")
    if cfg.ffn_expansion < 1:
        err("ffn_expansion", f"must be >= 1, got {cfg.ffn_expansion}")
    if cfg.decoder_dim < 1:
        err("decoder_dim", f"must be >= 1, got {cfg.decoder_dim}")
    if cfg.num_classes < 2:
        err("num_classes", f"must be >= 2, got {cfg.num_classes}")
    if cfg.in_channels < 1:
        err("in_channels", f"must be >= 1, got {cfg.in_channels}")


def stage_extents(cfg: ModelConfig, spatial) -> list[tuple[int, int, int]]:
    """Spatial extents after each stage's patch merge (raises on underflow)."""
    out = []
    current = tuple(spatial)
    for i in range(4):
        spec = merge_spec(cfg, i)
        current = spec.out_shape(current)
        out.append(current)
    return out


def validate_model_for_shape(cfg: ModelConfig, spatial, field_prefix: str = "model"):
    """Build-time checks that depend on the input grid."""
    validate_model_config(cfg, field_prefix)
    s0 = cfg.strides[0]
    if s0 > 1:
        from .conv import AXIS_NAMES
        for i, ext in enumerate(spatial):
            if ext % s0:
                raise ConfigError(
                    f"{field_prefix}: input {AXIS_NAMES[i]} extent {ext} is not "
                    f"divisible by the first-stage stride {s0}, so the decoder "
                    "cannot recover the native grid"
                )
    extents = stage_extents(cfg, spatial)
    for i, ext in enumerate(extents):
        if cfg.mixing == "afno":
            try:
                check_even_width(ext[2])
            except ConfigError as e:
                raise ConfigError(
                    f"{field_prefix}: stage {i} produces width {ext[2]} from input "
                    f"{tuple(spatial)}; {e}"
                ) from e
        else:
            tokens = int(np.prod(ext))
            if tokens > cfg.max_tokens:
                raise ConfigError(
                    f"{field_prefix}.max_tokens: stage {i} has {tokens} tokens, "
                    f"over the cap {cfg.max_tokens}"
                )
    return extents


def merge_spec(cfg: ModelConfig, stage: int) -> ConvSpec:
    cin = cfg.in_channels if stage == 0 else cfg.stage_dims[stage - 1]
    k = cfg.merge_kernel
    return ConvSpec(kernel=k, in_channels=cin, out_channels=cfg.stage_dims[stage],
                    stride=cfg.strides[stage], padding=(k - 1) // 2)


def stage_config(cfg: ModelConfig, stage: int) -> enc.StageConfig:
    c = cfg.stage_dims[stage]
    afno_cfg = None
    if cfg.mixing == "afno":
        afno_cfg = AfnoConfig(channels=c, num_blocks=cfg.afno_blocks[stage],
                              shrink=cfg.shrink, hidden_mult=cfg.hidden_mult,
                              kept_modes=cfg.kept_modes)
    return enc.StageConfig(embed_dim=c, depth=cfg.depths[stage],
                           merge=merge_spec(cfg, stage), mixing=cfg.mixing,
                           afno=afno_cfg, heads=cfg.heads[stage],
                           max_tokens=cfg.max_tokens,
                           ffn_expansion=cfg.ffn_expansion)


def decoder_config(cfg: ModelConfig) -> dec.DecoderConfig:
    return dec.DecoderConfig(in_dims=tuple(cfg.stage_dims),
                             common_dim=cfg.decoder_dim,
                             num_classes=cfg.num_classes,
                             up_stride=cfg.strides[0])


@dataclass
class SegModel:
    config: ModelConfig
    dtype: np.dtype
    stages: list[enc.Stage] = field(default_factory=list)
    decoder: dec.DecoderWeights | None = None

    @classmethod
    def build(cls, config: ModelConfig, seed: int = 0, precision: int = 32) -> "SegModel":
        validate_model_config(config)
        dtype = real_dtype(precision)
        model = cls(config=config, dtype=dtype)
        for i in range(4):
            model.stages.append(enc.build_stage(stage_config(config, i), seed,
                                                dtype, f"enc.s{i}"))
        model.decoder = dec.build_decoder(decoder_config(config), seed, dtype)
        return model

    def named_parameters(self):
        for i, stage in enumerate(self.stages):
            yield from stage.named(f"enc.s{i}")
        yield from self.decoder.named("dec")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def named_buffers(self):
        yield from self.decoder.named_buffers("dec")

    def forward(self, x, training: bool = False):
        """(B, D, H, W, Cin) volume -> (native logits, 4 auxiliary logit volumes)."""
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        if x.data.ndim != 5:
            raise ConfigError(f"model input must be (B, D, H, W, C), got ndim={x.data.ndim}")
        if x.data.shape[-1] != self.config.in_channels:
            raise ConfigError(
                f"model input has {x.data.shape[-1]} channels, config expects "
                f"{self.config.in_channels}"
            )
        validate_model_for_shape(self.config, x.data.shape[1:4])
        feats = enc.encoder_forward(x, self.stages)
        return dec.decode(feats, self.decoder, training=training)

    def load_state(self, params: dict[str, np.ndarray], buffers: dict[str, np.ndarray]):
        own = self.parameters()
        if set(own) != set(params):
            missing = sorted(set(own) - set(params))
            extra = sorted(set(params) - set(own))
            raise ConfigError(
                f"checkpoint/model mismatch: missing={missing[:4]} extra={extra[:4]}"
            )
        for name, tensor in own.items():
            arr = params[name]
            if tuple(arr.shape) != tensor.data.shape:
                raise ConfigError(
                    f"checkpoint tensor {name} has shape {tuple(arr.shape)}, model "
                    f"expects {tensor.data.shape}"
                )
            tensor.data = arr.astype(tensor.data.dtype)
        for name, buf in self.named_buffers():
            if name in buffers:
                buf[...] = buffers[name].astype(buf.dtype)
