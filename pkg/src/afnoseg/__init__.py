"""Spectral token-mixing 3D segmentation, built from scratch on numpy.

A four-stage hierarchical encoder whose token mixing happens in the
frequency domain (per-block complex MLPs on the real-FFT half spectrum,
soft-shrinkage, inverse transform, residual), a lightweight all-MLP
decoder, tape-based reverse-mode autodiff, a Dice+CE deep-supervision
training loop, volumetric metrics, and analytic parameter/FLOP accounting
with a multi-head self-attention ablation baseline.
"""

from .afno import (AfnoConfig, AfnoWeights, MhsaWeights, afno3d_forward,
                   block_mlp, merge_blocks, mhsa_forward, partition_blocks,
                   soft_shrink)
from .conv import ConvSpec, conv3d, conv3d_transposed, upsample_trilinear
from .decoder import DecoderConfig, aux_heads, decoder_forward
from .encoder import StageConfig, encoder_forward, mix_ffn, patch_merge
from .errors import ConfigError, DivergenceError, FormatError, InputError
from .fft import irfft3, rfft3
from .metrics import MetricReport, dsc, evaluate, hd95
from .model import ModelConfig, SegModel
from .model_stats import CostBreakdown, count_flops, count_params
from .ops import (batch_norm3d, gelu, layer_norm, relu, softmax_channels)
from .tensor import Tensor, no_grad
from .training import (TrainConfig, deep_supervised_loss, hybrid_loss,
                       sgd_step, train)

__all__ = [
    "AfnoConfig", "AfnoWeights", "MhsaWeights", "afno3d_forward", "block_mlp",
    "merge_blocks", "mhsa_forward", "partition_blocks", "soft_shrink",
    "ConvSpec", "conv3d", "conv3d_transposed", "upsample_trilinear",
    "DecoderConfig", "aux_heads", "decoder_forward",
    "StageConfig", "encoder_forward", "mix_ffn", "patch_merge",
    "ConfigError", "DivergenceError", "FormatError", "InputError",
    "irfft3", "rfft3",
    "MetricReport", "dsc", "evaluate", "hd95",
    "ModelConfig", "SegModel",
    "CostBreakdown", "count_flops", "count_params",
    "batch_norm3d", "gelu", "layer_norm", "relu", "softmax_channels",
    "Tensor", "no_grad",
    "TrainConfig", "deep_supervised_loss", "hybrid_loss", "sgd_step", "train",
]

__version__ = "0.1.0"
