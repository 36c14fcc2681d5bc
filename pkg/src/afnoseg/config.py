"""Declarative run configuration: one JSON file with model/train/data sections.

Every unspecified hyperparameter of the architecture lives here with its
default, so a run is fully auditable from its config echo.  Validation
rejects a bad config before any compute starts and names the offending
field in the error message.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .data_io import PhantomSpec, validate_phantom_spec
from .errors import ConfigError
from .model import ModelConfig, validate_model_config, validate_model_for_shape
from .training import TrainConfig, validate_train_config


@dataclass(frozen=True)
class DataConfig:
    phantom: PhantomSpec = field(default_factory=PhantomSpec)
    n_samples: int = 20
    train_fraction: float = 0.8
    dataset_dir: str | None = None


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    precision: int = 32
    seed: int = 0


_TUPLE_FIELDS = {
    "stage_dims", "depths", "strides", "afno_blocks", "heads",
    "supervision_weights", "grid", "count_range", "radius_range", "kinds",
    "class_means", "spacing",
}


def _build(cls, data: dict, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix}: expected a table, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{prefix}.{sorted(unknown)[0]}: unknown field")
    kwargs = {}
    for name, value in data.items():
        if name in _TUPLE_FIELDS and isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"{prefix}: {e}") from e


def run_config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(data) - {"model", "train", "data"} - {"precision", "seed"}
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown config section")
    phantom = None
    data_section = dict(data.get("data", {}))
    if "phantom" in data_section:
        phantom = _build(PhantomSpec, data_section.pop("phantom"), "data.phantom")
    dc = _build(DataConfig, data_section, "data")
    if phantom is not None:
        dc = DataConfig(phantom=phantom, n_samples=dc.n_samples,
                        train_fraction=dc.train_fraction, dataset_dir=dc.dataset_dir)
    cfg = RunConfig(
        model=_build(ModelConfig, data.get("model", {}), "model"),
        train=_build(TrainConfig, data.get("train", {}), "train"),
        data=dc,
        precision=data.get("precision", 32),
        seed=data.get("seed", 0),
    )
    validate_run_config(cfg)
    return cfg


def run_config_to_dict(cfg: RunConfig) -> dict:
    # canonical JSON form: tuples become lists
    return json.loads(json.dumps(asdict(cfg)))


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    return run_config_from_dict(data)


def save_run_config(cfg: RunConfig, path):
    Path(path).write_text(json.dumps(run_config_to_dict(cfg), indent=1) + "\n")


def validate_run_config(cfg: RunConfig):
    """Cross-checked validation of every section, before any compute."""
    if cfg.precision not in (32, 64):
        raise ConfigError(f"precision: must be 32 or 64, got {cfg.precision!r}")
    if not isinstance(cfg.seed, int):
        raise ConfigError(f"seed: must be an integer, got {cfg.seed!r}")
    validate_model_config(cfg.model, "model")
    validate_train_config(cfg.train, "train")
    if not isinstance(cfg.data.n_samples, int) or cfg.data.n_samples < 2:
        raise ConfigError(f"data.n_samples: must be an integer >= 2, got "
                          f"{cfg.data.n_samples!r}")
    if not 0 < cfg.data.train_fraction < 1:
        raise ConfigError(
            f"data.train_fraction: must lie in (0, 1), got {cfg.data.train_fraction!r}"
        )
    if cfg.data.dataset_dir is None:
        validate_phantom_spec(cfg.data.phantom, "data.phantom")
        if cfg.data.phantom.num_classes != cfg.model.num_classes:
            raise ConfigError(
                f"data.phantom.num_classes: {cfg.data.phantom.num_classes} does not "
                f"match model.num_classes {cfg.model.num_classes}"
            )
        validate_model_for_shape(cfg.model, cfg.data.phantom.grid, "model")
