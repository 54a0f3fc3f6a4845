"""Run configuration: a closed YAML tree with command-line overrides."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .data import ABLATIONS, SceneConfig
from .errors import ConfigError
from .experiment import ModelConfig
from .flow import FlowConfig


@dataclass
class LossSection:
    lambda1: float = 1.0
    lambda2: float = 100.0


@dataclass
class OptimizerSection:
    lr: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainSection:
    epochs: int = 300
    batch_size: int = 8
    checkpoint_every: int = 10
    ablate: str = "combined"


@dataclass
class InferSection:
    split: str = "test"  # train | test | all
    frames: str = "night"  # day | night | all
    limit: int = 0  # 0 = every selected frame


@dataclass
class EvaluateSection:
    quadrant: str = "bottom_right"
    flow: FlowConfig = field(default_factory=FlowConfig)


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "runs/out"
    data: str = "data"
    checkpoint: str = ""
    synthetic: SceneConfig = field(default_factory=SceneConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossSection = field(default_factory=LossSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    train: TrainSection = field(default_factory=TrainSection)
    infer: InferSection = field(default_factory=InferSection)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)

    def validate(self) -> "RunConfig":
        if self.train.epochs < 0:
            raise ConfigError("train.epochs must be non-negative")
        if self.train.batch_size < 1:
            raise ConfigError("train.batch_size must be positive")
        if self.train.checkpoint_every < 0:
            raise ConfigError("train.checkpoint_every must be non-negative")
        if self.train.ablate not in ABLATIONS:
            raise ConfigError(f"train.ablate must be one of {sorted(ABLATIONS)}, got {self.train.ablate!r}")
        if self.optimizer.lr <= 0:
            raise ConfigError("optimizer.lr must be positive")
        if self.infer.split not in ("train", "test", "all") or self.infer.frames not in ("day", "night", "all"):
            raise ConfigError("infer.split must be train|test|all and infer.frames day|night|all")
        if self.evaluate.quadrant not in ("top_left", "top_right", "bottom_left", "bottom_right"):
            raise ConfigError(f"unknown evaluate.quadrant {self.evaluate.quadrant!r}")
        try:
            self.evaluate.flow.validate()
        except ValueError as exc:
            raise ConfigError(f"evaluate.flow: {exc}") from None
        return self

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=None)


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def _merge(obj, tree: dict, where: str):
    if not isinstance(tree, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(obj)}
    for key, value in tree.items():
        path = f"{where}.{key}" if where else str(key)
        if key not in fields:
            raise ConfigError(f"unknown config key: {path}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            _merge(current, value, path)
        else:
            setattr(obj, key, _coerce(current, value, path))


def _coerce(current: Any, value: Any, path: str):
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path} expects true/false, got {value!r}")
        return value
    if isinstance(current, tuple):
        if not isinstance(value, (list, tuple)) or not value:
            raise ConfigError(f"{path} expects a non-empty list")
        return tuple(_coerce(current[0], v, path) for v in value) if current else tuple(value)
    if isinstance(current, int) and not isinstance(value, bool):
        if isinstance(value, int) or (isinstance(value, float) and value.is_integer()):
            return int(value)
        raise ConfigError(f"{path} expects an integer, got {value!r}")
    if isinstance(current, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ConfigError(f"{path} expects a number, got {value!r}")
    if isinstance(current, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path} expects a string, got {value!r}")
        return value
    return value


def load_config(path: str | os.PathLike | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the YAML file, then flag overrides (dotted keys)."""
    cfg = RunConfig()
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            tree = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {p}: {exc}") from None
        _merge(cfg, tree, "")
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        *parents, leaf = dotted.split(".")
        tree: dict = {leaf: value}
        for parent in reversed(parents):
            tree = {parent: tree}
        _merge(cfg, tree, "")
    return cfg.validate()
