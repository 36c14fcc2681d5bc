"""Exact parameter counting and analytic FLOP accounting.

Parameter counts enumerate stored scalars (a complex entry counts as two
real scalars) and are cross-checked against closed-form per-layer formulas.

FLOP conventions (documented so totals are comparable internally; they are
an accounting model, not a measurement):

* one multiply-accumulate = 2 flops;
* a complex multiply-accumulate = 8 flops (4 multiplies + 4 adds);
* a complex FFT line of length N costs 5*N*log2(N); a real-input 3D
  transform over V = D*H*W voxels is counted as half a complex 3D
  transform, 0.5 * 5 * V * log2(V) per channel, with the Hermitian fold
  absorbed into the constant;
* pointwise ops on the half spectrum are counted over V/2 positions;
* attention scores and weighted values cost 2*L^2*C flops each; the
  projections are ordinary matrix products at 2*Cin*Cout per token;
* small pointwise entries use fixed per-element costs (layer/batch norm 8,
  GELU 10, ReLU 1, softmax 5, trilinear sample 16, soft-shrink 8 per
  complex element).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .afno import afno_param_count, mhsa_param_count
from .model import (ModelConfig, SegModel, decoder_config, merge_spec,
                    stage_extents, validate_model_config)

LN_FLOPS = 8
BN_FLOPS = 8
GELU_FLOPS = 10
RELU_FLOPS = 1
SOFTMAX_FLOPS = 5
TRILINEAR_FLOPS = 16
SHRINK_FLOPS = 8


@dataclass
class CostEntry:
    name: str
    params: int = 0
    flops: int = 0


@dataclass
class CostBreakdown:
    entries: list[CostEntry] = field(default_factory=list)

    def add(self, name: str, params: int = 0, flops: int = 0):
        self.entries.append(CostEntry(name, int(params), int(flops)))

    @property
    def total_params(self) -> int:
        return sum(e.params for e in self.entries)

    @property
    def total_flops(self) -> int:
        return sum(e.flops for e in self.entries)

    def filtered(self, substring: str) -> "CostBreakdown":
        out = CostBreakdown()
        out.entries = [e for e in self.entries if substring in e.name]
        return out

    def to_dict(self) -> dict:
        return {
            "entries": [{"name": e.name, "params": e.params, "flops": e.flops}
                        for e in self.entries],
            "total_params": self.total_params,
            "total_flops": self.total_flops,
        }

    def table(self) -> str:
        width = max([len(e.name) for e in self.entries] + [len("total")])
        lines = [f"{'layer':<{width}}  {'params':>12}  {'flops':>16}"]
        for e in self.entries:
            lines.append(f"{e.name:<{width}}  {e.params:>12}  {e.flops:>16}")
        lines.append(f"{'total':<{width}}  {self.total_params:>12}  {self.total_flops:>16}")
        return "\n".join(lines)


def count_params(model) -> CostBreakdown:
    """Enumerate every stored parameter scalar (complex entries count twice)."""
    out = CostBreakdown()
    for name, tensor in model.named_parameters():
        scale = 2 if np.iscomplexobj(tensor.data) else 1
        out.add(name, params=scale * tensor.data.size)
    return out


def conv_param_count(kernel, cin: int, cout: int, groups: int = 1) -> int:
    k3 = int(np.prod(kernel)) if not isinstance(kernel, int) else kernel ** 3
    return k3 * (cin // groups) * cout + cout


def count_params_formula(cfg: ModelConfig) -> CostBreakdown:
    """Closed-form per-layer parameter counts; must match enumeration exactly."""
    validate_model_config(cfg)
    out = CostBreakdown()
    e = cfg.ffn_expansion
    for i in range(4):
        c = cfg.stage_dims[i]
        merge = merge_spec(cfg, i)
        out.add(f"enc.s{i}.merge",
                conv_param_count(merge.kernel, merge.in_channels, c) + 2 * c)
        for j in range(cfg.depths[i]):
            p = f"enc.s{i}.b{j}"
            out.add(f"{p}.ln", 4 * c)
            if cfg.mixing == "afno":
                from .afno import AfnoConfig
                out.add(f"{p}.mixing", afno_param_count(AfnoConfig(
                    channels=c, num_blocks=cfg.afno_blocks[i],
                    shrink=cfg.shrink, hidden_mult=cfg.hidden_mult)))
            else:
                out.add(f"{p}.mixing", mhsa_param_count(c))
            ffn = (c * e * c + e * c) + (27 * e * c + e * c) + (e * c * c + c)
            out.add(f"{p}.ffn", ffn)
    d, n = cfg.decoder_dim, cfg.num_classes
    s = cfg.strides[0]
    out.add("dec.proj", sum(cin * d + d for cin in cfg.stage_dims))
    out.add("dec.fuse", 4 * d * d + d)
    out.add("dec.bn", 2 * d)
    out.add("dec.up", s ** 3 * n * d + n)
    out.add("dec.sharpen", n * n + n)
    out.add("dec.aux", 4 * (d * n + n))
    return out


def _fft3_half_flops(voxels: int, channels: int, batch: int) -> int:
    if voxels <= 1:
        return 0
    return int(round(0.5 * 5.0 * voxels * math.log2(voxels))) * channels * batch


def afno_mixing_flops(spatial, channels: int, num_blocks: int, hidden_mult: int,
                      batch: int = 1) -> dict[str, int]:
    """Per-component flops of one spectral mixing block at one input shape."""
    v = int(np.prod(spatial))
    half_positions = batch * v // 2 if v > 1 else batch
    fft = _fft3_half_flops(v, channels, batch)
    mlp = 16 * hidden_mult * channels * channels // num_blocks * half_positions
    shrink = SHRINK_FLOPS * half_positions * channels
    return {"rfft3": fft, "block_mlp": mlp, "soft_shrink": shrink, "irfft3": fft,
            "residual": batch * v * channels}


def mhsa_mixing_flops(spatial, channels: int, heads: int,
                      batch: int = 1) -> dict[str, int]:
    """Per-component flops of one attention block at one input shape."""
    tokens = int(np.prod(spatial))
    proj_in = 2 * tokens * channels * 3 * channels * batch
    scores = 2 * tokens * tokens * channels * batch
    softmax = SOFTMAX_FLOPS * heads * tokens * tokens * batch
    apply_v = 2 * tokens * tokens * channels * batch
    proj_out = 2 * tokens * channels * channels * batch
    return {"qkv": proj_in, "scores": scores, "softmax": softmax,
            "apply": apply_v, "out": proj_out}


def count_flops(cfg: ModelConfig, input_spatial, batch: int = 1) -> CostBreakdown:
    """Analytic per-layer flops for one forward pass at the given input shape."""
    validate_model_config(cfg)
    extents = stage_extents(cfg, input_spatial)
    out = CostBreakdown()
    e = cfg.ffn_expansion
    for i in range(4):
        c = cfg.stage_dims[i]
        merge = merge_spec(cfg, i)
        vox = int(np.prod(extents[i]))
        k3 = int(np.prod(merge.kernel))
        out.add(f"enc.s{i}.merge",
                flops=2 * k3 * merge.in_channels * c * vox * batch
                + LN_FLOPS * vox * c * batch)
        for j in range(cfg.depths[i]):
            p = f"enc.s{i}.b{j}"
            out.add(f"{p}.ln", flops=2 * LN_FLOPS * vox * c * batch)
            if cfg.mixing == "afno":
                parts = afno_mixing_flops(extents[i], c, cfg.afno_blocks[i],
                                          cfg.hidden_mult, batch)
            else:
                parts = mhsa_mixing_flops(extents[i], c, cfg.heads[i], batch)
            for part, flops in parts.items():
                out.add(f"{p}.mixing.{part}", flops=flops)
            ffn = (2 * c * e * c * vox            # fc1
                   + 2 * 27 * e * c * vox         # depthwise conv
                   + GELU_FLOPS * e * c * vox     # gelu
                   + 2 * e * c * c * vox          # fc2
                   + c * vox)                     # residual
            out.add(f"{p}.ffn", flops=ffn * batch)
    d, n = cfg.decoder_dim, cfg.num_classes
    finest = extents[0]
    finest_vox = int(np.prod(finest))
    dcfg = decoder_config(cfg)
    for i in range(4):
        vox = int(np.prod(extents[i]))
        out.add(f"dec.proj{i}", flops=2 * cfg.stage_dims[i] * d * vox * batch)
        out.add(f"dec.aux{i}", flops=2 * d * n * vox * batch)
        if i > 0:
            out.add(f"dec.upsample{i}", flops=TRILINEAR_FLOPS * finest_vox * d * batch)
    out.add("dec.fuse", flops=(2 * 4 * d * d + RELU_FLOPS + BN_FLOPS) * finest_vox * batch)
    s = dcfg.up_stride
    native_vox = finest_vox * s ** 3
    out.add("dec.up", flops=2 * s ** 3 * d * n * finest_vox * batch)
    out.add("dec.sharpen", flops=2 * n * n * native_vox * batch)
    return out


def mixing_flop_sweep(channels: int, shapes, num_blocks: int = 8,
                      hidden_mult: int = 1, heads: int = 4) -> list[dict]:
    """Compare one AFNO block against one MHSA block across token counts.

    ``afno_spectral`` isolates the forward+inverse transforms (the
    N log N part); ``mhsa_interaction`` isolates scores plus weighted
    values (the quadratic part); the ``*_total`` columns include the
    linear-in-tokens terms as well.
    """
    rows = []
    for spatial in shapes:
        tokens = int(np.prod(spatial))
        a = afno_mixing_flops(spatial, channels, num_blocks, hidden_mult)
        m = mhsa_mixing_flops(spatial, channels, heads)
        rows.append({
            "spatial": tuple(spatial),
            "tokens": tokens,
            "afno_spectral": a["rfft3"] + a["irfft3"],
            "afno_total": sum(a.values()),
            "mhsa_interaction": m["scores"] + m["apply"],
            "mhsa_total": sum(m.values()),
        })
    return rows


def crossover_tokens(channels: int, num_blocks: int = 8, hidden_mult: int = 1,
                     heads: int = 4, max_side: int = 64) -> int | None:
    """Smallest cubic token count where the MHSA block out-costs the AFNO block."""
    side = 2
    while side <= max_side:
        shape = (side, side, side)
        a = sum(afno_mixing_flops(shape, channels, num_blocks, hidden_mult).values())
        m = sum(mhsa_mixing_flops(shape, channels, heads).values())
        if m > a:
            return side ** 3
        side *= 2
    return None


def param_report(cfg: ModelConfig, seed: int = 0) -> dict:
    """Enumerated and closed-form totals for one configuration."""
    model = SegModel.build(cfg, seed=seed, precision=32)
    enum = count_params(model)
    formula = count_params_formula(cfg)
    return {
        "enumerated_total": enum.total_params,
        "formula_total": formula.total_params,
        "mixing_params": enum.filtered(".mixing.").total_params,
    }
