"""Configuration containers and the structured config file format.

All constants live here so that a single YAML/JSON file can describe a run::

    model:
      profile: micro
      disg: {a: 1.0, b: 1.5, beta: 2.2}
      trg: {alpha: 0.001, soft_k: 50}
    train:
      epochs: 10
      lr: 0.01
    train_stride: 1

Dotted overrides such as ``disg.b=2.0`` address the same tree.
"""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

import yaml

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class ConfigError(ValueError):
    pass


@dataclass
class OFEConfig:
    backbone: str = "tiny"
    use_spatial: bool = True
    use_temporal: bool = True
    # appends normalized x/y planes to the tiny backbone input
    coord_channels: bool = True
    spatial_residual: bool = False
    bias: bool = True


@dataclass
class DISGConfig:
    a: float = 1.0
    b: float = 1.5
    beta: float = 2.2
    use_semantics: bool = True
    use_intention: bool = True
    # absolute-position encodings on cross-attention queries/keys
    position_encoding: bool = True

    @property
    def enabled(self) -> bool:
        return self.use_semantics or self.use_intention


@dataclass
class TRGConfig:
    alpha: float = 0.001
    soft_k: float = 50.0
    use_interaction: bool = True
    use_weighting: bool = True
    # gate used while module.training is True; evaluation is always hard
    train_gate: str = "soft"

    @property
    def enabled(self) -> bool:
        return self.use_interaction or self.use_weighting


@dataclass
class ModelConfig:
    image_size: int = 320
    clip_len: int = 16
    channels: int = 512
    hidden: int = 256
    roi_size: int = 10
    heads: int = 8
    lstm_layers: int = 2
    head_hidden: int = 128
    lane_slots: int = 20
    # lane coordinates are pixels; scaled to ~[0, 1] before the lane encoder
    lane_scale: float = 1.0 / 320
    mean: tuple[float, float, float] = IMAGENET_MEAN
    std: tuple[float, float, float] = IMAGENET_STD
    ofe: OFEConfig = field(default_factory=OFEConfig)
    disg: DISGConfig = field(default_factory=DISGConfig)
    trg: TRGConfig = field(default_factory=TRGConfig)

    def validate(self) -> None:
        if self.ofe.backbone not in ("tiny", "resnet18"):
            raise ConfigError(f"ofe.backbone must be 'tiny' or 'resnet18', got {self.ofe.backbone!r}")
        if not self.disg.b > self.disg.a > 0:
            raise ConfigError(f"intention masks need b > a > 0, got a={self.disg.a}, b={self.disg.b}")
        if not self.disg.beta > 0:
            raise ConfigError(f"disg.beta must be positive, got {self.disg.beta}")
        if not 0 < self.trg.alpha < 1:
            raise ConfigError(f"trg.alpha must lie in (0, 1), got {self.trg.alpha}")
        if self.trg.train_gate not in ("soft", "hard"):
            raise ConfigError(f"trg.train_gate must be 'soft' or 'hard', got {self.trg.train_gate!r}")
        for name in ("channels", "hidden"):
            dim = getattr(self, name) * (2 if name == "channels" else 1)
            if dim % self.heads:
                raise ConfigError(f"{name} width {dim} is not divisible by {self.heads} heads")
        if self.clip_len < 1 or self.roi_size < 1:
            raise ConfigError("clip_len and roi_size must be positive")


@dataclass
class TrainConfig:
    # "sgd" (momentum) or "adam"; adam uses lr and weight_decay, ignores momentum
    optimizer: str = "sgd"
    lr: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 8
    epochs: int | None = None
    seed: int = 0
    precision: str = "float32"
    schedule: str = "cosine"

    def validate(self) -> None:
        if self.epochs is None or self.epochs < 1:
            raise ConfigError("train.epochs must be set to a positive integer")
        if self.lr < 0 or self.batch_size < 1 or not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ConfigError("invalid optimizer settings")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"train.optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision!r}")
        if self.schedule not in ("cosine", "constant"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    # evaluation cadence in frames, mirrors the annotation cadence
    eval_stride: int = 10
    # spacing of training clip end frames; 1 uses every annotated frame
    train_stride: int = 10
    # add a left-right mirrored copy of every training clip (ego velocity negated)
    hflip: bool = False
    # SyntheticConfig fields for make-synthetic
    synthetic: dict = field(default_factory=dict)


PROFILES: dict[str, dict[str, Any]] = {
    "default": {},
    "micro": {
        "image_size": 64,
        "clip_len": 4,
        "channels": 64,
        "hidden": 32,
        "roi_size": 4,
        "head_hidden": 16,
        "lane_scale": 1.0 / 64,
    },
}

# Ablation rows: bottom-up/top-down framework, DISG parts, TRG parts, OFE branches,
# and the mask/alpha grid.
PRESETS: dict[str, dict[str, Any]] = {
    "full": {},
    "bu": {
        "disg.use_semantics": False, "disg.use_intention": False,
        "trg.use_interaction": False, "trg.use_weighting": False,
    },
    "bu+trg": {"disg.use_semantics": False, "disg.use_intention": False},
    "bu+disg": {"trg.use_interaction": False, "trg.use_weighting": False},
    "disg-none": {"disg.use_semantics": False, "disg.use_intention": False},
    "disg-semantics": {"disg.use_intention": False},
    "disg-intention": {"disg.use_semantics": False},
    "trg-none": {"trg.use_interaction": False, "trg.use_weighting": False},
    "trg-interaction": {"trg.use_weighting": False},
    "ofe-spatial": {"ofe.use_temporal": False},
    "ofe-temporal": {"ofe.use_spatial": False},
    "mask-1-2.5": {"disg.a": 1.0, "disg.b": 2.5},
    "mask-1-2": {"disg.a": 1.0, "disg.b": 2.0},
    "mask-1-1.5": {"disg.a": 1.0, "disg.b": 1.5},
    # a == b makes every mask constant, which is the same as dropping the mask
    "mask-1-1": {"disg.use_intention": False},
    "alpha-0.1": {"trg.alpha": 0.1},
    "alpha-0.01": {"trg.alpha": 0.01},
    "alpha-0.001": {"trg.alpha": 0.001},
}


def _coerce(value: Any, current: Any) -> Any:
    if isinstance(current, bool):
        if isinstance(value, str):
            return value.strip().lower() in ("1", "true", "yes", "on")
        return bool(value)
    if isinstance(current, tuple):
        return tuple(float(v) for v in value)
    if isinstance(current, int) and not isinstance(current, bool) and isinstance(value, str):
        return int(value)
    if isinstance(current, float) and isinstance(value, (str, int)):
        return float(value)
    return value


def apply_overrides(obj: Any, overrides: dict[str, Any]) -> None:
    """Set dotted keys (``disg.b``, ``trg.alpha``...) on a config tree in place."""
    for key, value in overrides.items():
        target = obj
        parts = key.split(".")
        for part in parts[:-1]:
            if isinstance(target, dict) or not hasattr(target, part):
                raise ConfigError(f"unknown config key {key!r}")
            target = getattr(target, part)
        leaf = parts[-1]
        if isinstance(target, dict):
            # free-form sections (``synthetic.*``) take YAML scalars
            target[leaf] = yaml.safe_load(value) if isinstance(value, str) else value
            continue
        if not is_dataclass(target) or leaf not in {f.name for f in fields(target)}:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(target, leaf, _coerce(value, getattr(target, leaf)))


def _update_from_dict(obj: Any, data: dict[str, Any], prefix: str = "") -> None:
    names = {f.name for f in fields(obj)}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"unknown config key {prefix + key!r}")
        current = getattr(obj, key)
        if is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"{prefix + key!r} must be a mapping")
            _update_from_dict(current, value, prefix + key + ".")
        else:
            setattr(obj, key, _coerce(value, current) if value is not None else None)


def model_config(profile: str = "default", preset: str = "full", **overrides: Any) -> ModelConfig:
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    cfg = ModelConfig()
    apply_overrides(cfg, PROFILES[profile])
    apply_overrides(cfg, PRESETS[preset])
    apply_overrides(cfg, overrides)
    cfg.validate()
    return cfg


def run_config_from_dict(data: dict[str, Any]) -> RunConfig:
    data = copy.deepcopy(data)
    model_data = data.pop("model", {}) or {}
    profile = model_data.pop("profile", "default")
    preset = model_data.pop("preset", "full")
    run = RunConfig(model=model_config(profile, preset))
    _update_from_dict(run.model, model_data, "model.")
    _update_from_dict(run, data)
    run.model.validate()
    return run


def load_run_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    text = Path(path).read_text()
    data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    return run_config_from_dict(data or {})


def to_dict(cfg: Any) -> dict[str, Any]:
    out = asdict(cfg)
    return json.loads(json.dumps(out))


def model_config_from_dict(data: dict[str, Any]) -> ModelConfig:
    cfg = ModelConfig()
    _update_from_dict(cfg, data)
    cfg.validate()
    return cfg


def train_config_from_dict(data: dict[str, Any]) -> TrainConfig:
    cfg = TrainConfig()
    _update_from_dict(cfg, data)
    return cfg
