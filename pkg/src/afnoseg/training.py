"""Hybrid Dice + cross-entropy loss with deep supervision, and momentum SGD.

The loss on probabilities P against one-hot targets G is

    L = 1 - (2/J) * sum_j [ sum_i G_ij P_ij / (sum_i G_ij^2 + sum_i P_ij^2 + eps) ]
        - (1/I) * sum_ij G_ij * log(P_ij + eps)

per sample, averaged over the batch.  Deep supervision adds the same loss
on each auxiliary head against nearest-neighbor-downsampled targets.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError, InputError
from .metrics import evaluate
from .model import SegModel
from .ops import log, softmax_channels
from .tensor import Tensor, as_tensor, no_grad

DEFAULT_SUPERVISION = tuple(w / 31.0 for w in (16.0, 8.0, 4.0, 2.0, 1.0))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    weight_decay: float = 3e-5
    momentum: float = 0.9
    epochs: int = 25
    batch_size: int = 2
    max_steps: int | None = None
    supervision_weights: tuple[float, ...] = DEFAULT_SUPERVISION
    epsilon: float = 1e-5
    seed: int = 0


def validate_train_config(cfg: TrainConfig, field_prefix: str = "train"):
    def err(name, msg):
        raise ConfigError(f"{field_prefix}.{name}: {msg}")

    # learning_rate 0 is allowed: a frozen smoke run with a constant loss
    if cfg.learning_rate < 0:
        err("learning_rate", f"must be >= 0, got {cfg.learning_rate}")
    if cfg.weight_decay < 0:
        err("weight_decay", f"must be >= 0, got {cfg.weight_decay}")
    if not 0 <= cfg.momentum < 1:
        err("momentum", f"must be in [0, 1), got {cfg.momentum}")
    if cfg.epochs < 1:
        err("epochs", f"must be >= 1, got {cfg.epochs}")
    if cfg.batch_size < 1:
        err("batch_size", f"must be >= 1, got {cfg.batch_size}")
    if cfg.max_steps is not None and cfg.max_steps < 1:
        err("max_steps", f"must be >= 1 or null, got {cfg.max_steps}")
    if len(cfg.supervision_weights) != 5 or any(w < 0 for w in cfg.supervision_weights):
        err("supervision_weights",
            f"must be 5 non-negative weights, got {cfg.supervision_weights!r}")
    if abs(sum(cfg.supervision_weights) - 1.0) > 1e-9:
        err("supervision_weights",
            f"must sum to 1, got sum={sum(cfg.supervision_weights)!r}")
    if not cfg.epsilon > 0:
        err("epsilon", f"must be > 0, got {cfg.epsilon}")


def one_hot(mask: np.ndarray, num_classes: int, dtype=np.float64) -> np.ndarray:
    """(B, D, H, W) integer labels -> (B, D, H, W, J) one-hot."""
    if mask.min() < 0 or mask.max() >= num_classes:
        raise InputError(
            f"labels must lie in [0, {num_classes}), got range "
            f"[{mask.min()}, {mask.max()}]"
        )
    out = np.zeros(mask.shape + (num_classes,), dtype=dtype)
    np.put_along_axis(out, mask[..., None].astype(np.int64), 1.0, axis=-1)
    return out


def nearest_downsample(mask: np.ndarray, target) -> np.ndarray:
    """Nearest-neighbor downsample of integer labels (preserves the label set)."""
    out = mask
    for axis, tgt in enumerate(target):
        src = out.shape[axis + 1]
        if tgt > src:
            raise ConfigError(f"nearest_downsample cannot grow axis {axis}: {src} -> {tgt}")
        idx = np.floor((np.arange(tgt) + 0.5) * (src / tgt)).astype(np.int64)
        idx = np.minimum(idx, src - 1)
        out = np.take(out, idx, axis=axis + 1)
    return out


def _check_loss_inputs(p: np.ndarray, g: np.ndarray):
    if p.shape != g.shape:
        raise InputError(f"P shape {p.shape} != G shape {g.shape}")
    if (p < 0).any():
        raise InputError("negative probabilities in P")
    sums = p.sum(axis=-1)
    if not np.allclose(sums, 1.0, atol=1e-4):
        raise InputError("per-voxel probabilities must sum to 1")
    if not ((g == 0) | (g == 1)).all() or not (g.sum(axis=-1) == 1).all():
        raise InputError("G must be one-hot with exactly one 1 per voxel")


def hybrid_loss(p, g: np.ndarray, eps: float = 1e-5, check: bool = True) -> Tensor:
    """Dice + cross-entropy on probabilities; 0 at a perfect prediction."""
    p = as_tensor(p)
    g = np.asarray(g, dtype=p.data.dtype)
    if check:
        _check_loss_inputs(p.data, g)
    batch, *spatial, j = p.data.shape
    voxels = int(np.prod(spatial))
    gt = Tensor(g)
    axes = (1, 2, 3)
    inter = (gt * p).sum(axis=axes)                     # (B, J)
    denom = (gt * gt).sum(axis=axes) + (p * p).sum(axis=axes) + eps
    dice = (inter / denom).sum(axis=1)                  # (B,)
    ce = (gt * log(p + eps)).sum(axis=(1, 2, 3, 4))     # (B,)
    per_sample = 1.0 - dice * (2.0 / j) - ce * (1.0 / voxels)
    return per_sample.mean()


def deep_supervised_loss(main_logits, aux_logits, mask: np.ndarray,
                         weights=DEFAULT_SUPERVISION, eps: float = 1e-5) -> Tensor:
    """Weighted hybrid loss over the main head and each auxiliary head."""
    heads = [main_logits] + list(aux_logits)
    if len(weights) != len(heads):
        raise ConfigError(
            f"{len(weights)} supervision weights for {len(heads)} heads"
        )
    if abs(sum(weights) - 1.0) > 1e-9:
        raise ConfigError(f"supervision weights must sum to 1, got {sum(weights)!r}")
    num_classes = heads[0].data.shape[-1]
    total = None
    for w, logits in zip(weights, heads):
        if w == 0:
            continue
        target = nearest_downsample(mask, logits.data.shape[1:4])
        g = one_hot(target, num_classes, dtype=logits.data.dtype)
        term = hybrid_loss(softmax_channels(logits), g, eps, check=False) * w
        total = term if total is None else total + term
    return total


def backward(model: SegModel, x: np.ndarray, mask: np.ndarray,
             weights=DEFAULT_SUPERVISION, eps: float = 1e-5):
    """Forward + reverse pass; returns (loss value, {name: gradient})."""
    for p in model.parameters().values():
        p.grad = None
    logits, aux = model.forward(x, training=True)
    loss = deep_supervised_loss(logits, aux, mask, weights, eps)
    loss.backward()
    grads = {name: t.grad for name, t in model.named_parameters()}
    return float(loss.data), grads


def sgd_step(params: dict[str, Tensor], velocities: dict[str, np.ndarray],
             cfg: TrainConfig):
    """v <- mu*v + g;  p <- p - lr*(v + wd*p).  Gradients are left cleared."""
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        v = velocities.get(name)
        if v is None:
            v = np.zeros_like(p.data)
        v = cfg.momentum * v + g
        velocities[name] = v
        p.data = p.data - cfg.learning_rate * (v + cfg.weight_decay * p.data)
        p.grad = None


@dataclass
class TrainReport:
    epochs: list[dict] = field(default_factory=list)
    steps: list[dict] = field(default_factory=list)
    final: dict = field(default_factory=dict)

    def loss_trajectory(self) -> list[float]:
        return [s["loss"] for s in self.steps]


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i: i + batch_size]


def predicted_mask(model: SegModel, volume: np.ndarray) -> np.ndarray:
    """Argmax class labels for one (D, H, W) or (D, H, W, C) volume."""
    if volume.ndim == 3:
        volume = volume[..., None]
    with no_grad():
        logits, _ = model.forward(volume[None], training=False)
    return np.argmax(logits.data[0], axis=-1).astype(np.uint8)


def mean_foreground_dsc(model: SegModel, samples) -> float:
    """Mean of per-sample mean foreground DSC over (volume, mask) pairs."""
    scores = []
    for vol, mask in samples:
        report = evaluate(predicted_mask(model, vol), mask,
                          model.config.num_classes, (1.0, 1.0, 1.0))
        scores.append(report.mean_dsc)
    return float(np.mean(scores))


def train(model: SegModel, train_samples, val_samples, cfg: TrainConfig,
          log_every_step: bool = True) -> TrainReport:
    """Deterministic training loop over in-memory (volume, mask) samples.

    Aborts with :class:`DivergenceError` the first time the loss is
    non-finite.  With a fixed seed the loss trajectory is bit-reproducible.
    """
    validate_train_config(cfg)
    if not train_samples:
        raise ConfigError("train: dataset is empty")
    rng = np.random.default_rng([cfg.seed, 0x7261696E])
    params = model.parameters()
    velocities: dict[str, np.ndarray] = {}
    report = TrainReport()
    step = 0
    done = False
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        losses = []
        for batch_idx in _batches(len(train_samples), cfg.batch_size, rng):
            x = np.stack([np.asarray(train_samples[i][0], dtype=model.dtype)
                          for i in batch_idx])
            if x.ndim == 4:
                x = x[..., None]
            mask = np.stack([train_samples[i][1] for i in batch_idx])
            loss_value, _ = backward(model, x, mask, cfg.supervision_weights,
                                     cfg.epsilon)
            if not np.isfinite(loss_value):
                raise DivergenceError(step, loss_value)
            sgd_step(params, velocities, cfg)
            losses.append(loss_value)
            if log_every_step:
                report.steps.append({"step": step, "epoch": epoch, "loss": loss_value})
            step += 1
            if cfg.max_steps is not None and step >= cfg.max_steps:
                done = True
                break
        record = {
            "epoch": epoch,
            "steps": step,
            "mean_loss": float(np.mean(losses)) if losses else None,
            "seconds": time.perf_counter() - t0,
        }
        if val_samples:
            record["val_dsc"] = mean_foreground_dsc(model, val_samples)
        report.epochs.append(record)
        if done:
            break
    report.final = {
        "steps": step,
        "train_loss": report.epochs[-1]["mean_loss"] if report.epochs else None,
        "val_dsc": report.epochs[-1].get("val_dsc") if report.epochs else None,
    }
    return report
