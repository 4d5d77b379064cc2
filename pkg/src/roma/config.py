"""Experiment configuration: JSON document with sections
``data``, ``encoder``, ``loss``, ``random``, ``train``, ``eval``.

Every key has a default; unknown keys raise ``ConfigError`` naming the key.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .data import AugmentConfig
from .errors import ConfigError
from .losses import LOSS_KINDS, LossParams
from .rngmap import DISTRIBUTIONS, POLICIES, RegenSchedule


@dataclass
class DataConfig:
    source: str = "synthetic"          # synthetic | rmds | cifar_binary
    path: Optional[str] = None
    test_path: Optional[str] = None
    k_classes: int = 10
    per_class: int = 200
    test_per_class: int = 100
    dim: int = 32
    spread: float = 0.15
    seed: Optional[int] = None         # defaults to the root seed
    augment: AugmentConfig = field(default_factory=AugmentConfig)


@dataclass
class EncoderConfig:
    backbone_widths: list = field(default_factory=lambda: [512, 512])
    projector_dim: int = 512
    predictor: bool = False


@dataclass
class LossConfig:
    kind: str = "triplet_ce"
    gamma: float = 1.0
    lambda_: float = 8.0
    tau: float = 0.5
    faithful_eq1: bool = False
    parts: str = "triplet_ce"

    def params(self) -> LossParams:
        return LossParams(self.gamma, self.lambda_, self.tau, self.faithful_eq1, self.parts)


@dataclass
class RandomConfig:
    distribution: str = "normal"
    dim_out: Optional[int] = None      # defaults to projector_dim // 2
    frequency: str = "per_epoch"
    k: int = 10
    renormalize: bool = True
    scaled: bool = False
    seed: Optional[int] = None

    def schedule(self) -> RegenSchedule:
        return RegenSchedule(self.frequency, self.k)


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    base_lr: float = 0.4
    weight_decay: float = 5e-4
    momentum: float = 0.9
    seed: int = 0
    precision: str = "float32"
    symmetrize: bool = False
    checkpoint_every: int = 0
    diag_samples: int = 256

    @property
    def effective_lr(self) -> float:
        return self.base_lr * self.batch_size / 256


@dataclass
class EvalConfig:
    probe_epochs: int = 100
    probe_base_lr: float = 30.0
    probe_batch_size: int = 128
    probe_momentum: float = 0.9
    probe_weight_decay: float = 0.0
    standardize: bool = True
    knn_k: int = 20


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    random: RandomConfig = field(default_factory=RandomConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @property
    def random_dim_out(self) -> int:
        return self.random.dim_out or max(1, self.encoder.projector_dim // 2)

    def to_dict(self) -> dict:
        return to_dict(self)

    def replace(self, **dotted) -> "ExperimentConfig":
        """Copy with dotted-key overrides, e.g. ``replace(**{"train.epochs": 1})``."""
        d = self.to_dict()
        for key, value in dotted.items():
            section, _, name = key.partition(".")
            target = d.setdefault(section, {})
            *path, leaf = name.split(".")
            for p in path:
                target = target.setdefault(p, {})
            target[leaf] = value
        return from_dict(d)


# JSON key -> dataclass field, where they differ
_RENAMES = {"lambda": "lambda_"}
_SECTIONS = {"data": DataConfig, "encoder": EncoderConfig, "loss": LossConfig,
             "random": RandomConfig, "train": TrainConfig, "eval": EvalConfig}


def _build(cls, raw: Any, prefix: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{prefix} must be an object", key=prefix)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        name = _RENAMES.get(key, key)
        if name not in fields:
            raise ConfigError(f"unknown config key {prefix}.{key}", key=f"{prefix}.{key}")
        default = getattr(cls(), name)
        if dataclasses.is_dataclass(default):
            value = _build(type(default), value, f"{prefix}.{key}")
        elif isinstance(default, tuple):
            value = tuple(value)
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{prefix}.{key} must be true/false", key=f"{prefix}.{key}")
        elif isinstance(default, (int, float)) and not isinstance(default, bool):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{prefix}.{key} must be a number", key=f"{prefix}.{key}")
            if isinstance(default, int) and not isinstance(value, int):
                raise ConfigError(f"{prefix}.{key} must be an integer", key=f"{prefix}.{key}")
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        if exc.key is None:
            exc.key = prefix
        raise


def from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config document must be a JSON object")
    for key in raw:
        if key not in _SECTIONS:
            raise ConfigError(f"unknown config section {key}", key=key)
    cfg = ExperimentConfig(**{k: _build(_SECTIONS[k], v, k) for k, v in raw.items()})
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    if cfg.data.source not in ("synthetic", "rmds", "cifar_binary"):
        raise ConfigError(f"unknown data.source {cfg.data.source!r}", key="data.source")
    if cfg.data.source != "synthetic" and not cfg.data.path:
        raise ConfigError("data.path is required for file-backed sources", key="data.path")
    if cfg.data.k_classes < 2:
        raise ConfigError("data.k_classes must be >= 2", key="data.k_classes")
    if not cfg.encoder.backbone_widths or any(int(w) < 1 for w in cfg.encoder.backbone_widths):
        raise ConfigError("encoder.backbone_widths must be a non-empty list of positive ints",
                          key="encoder.backbone_widths")
    if cfg.encoder.projector_dim < 1:
        raise ConfigError("encoder.projector_dim must be positive", key="encoder.projector_dim")
    if cfg.loss.kind not in LOSS_KINDS:
        raise ConfigError(f"unknown loss.kind {cfg.loss.kind!r}", key="loss.kind")
    if cfg.loss.kind == "simsiam" and not cfg.encoder.predictor:
        raise ConfigError("loss.kind simsiam needs encoder.predictor = true", key="encoder.predictor")
    cfg.loss.params()
    if cfg.random.distribution not in DISTRIBUTIONS:
        raise ConfigError(f"unknown random.distribution {cfg.random.distribution!r}", key="random.distribution")
    if cfg.random.frequency not in POLICIES:
        raise ConfigError(f"unknown random.frequency {cfg.random.frequency!r}", key="random.frequency")
    if cfg.random.k < 1:
        raise ConfigError("random.k must be >= 1", key="random.k")
    if cfg.random.dim_out is not None and cfg.random.dim_out < 1:
        raise ConfigError("random.dim_out must be positive", key="random.dim_out")
    t = cfg.train
    if t.epochs < 0:
        raise ConfigError("train.epochs must be >= 0", key="train.epochs")
    if t.batch_size < 2:
        raise ConfigError("train.batch_size must be >= 2", key="train.batch_size")
    if t.base_lr < 0 or t.weight_decay < 0 or not 0 <= t.momentum < 1:
        raise ConfigError("train.base_lr/weight_decay must be >= 0 and momentum in [0, 1)", key="train")
    if t.precision not in ("float32", "float64"):
        raise ConfigError(f"unknown train.precision {t.precision!r}", key="train.precision")
    if cfg.eval.knn_k < 1:
        raise ConfigError("eval.knn_k must be >= 1", key="eval.knn_k")


def to_dict(obj) -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        key = {v: k for k, v in _RENAMES.items()}.get(f.name, f.name)
        if dataclasses.is_dataclass(value):
            value = to_dict(value)
        elif isinstance(value, tuple):
            value = list(value)
        out[key] = value
    return out


def load(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc.msg} at line {exc.lineno})") from exc
    return from_dict(raw)


def dumps(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"
