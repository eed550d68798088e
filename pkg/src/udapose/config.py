"""Experiment configuration: YAML documents mapped onto nested dataclasses."""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .augment import AugmentConfig
from .heatmap import ConfigError
from .model import PoseNetConfig
from .style import StyleNetConfig, StyleTrainConfig
from .synth import SynthConfig

ABLATION_NAMES = {"mt": "mean_teacher", "norm": "normalize", "style": "style", "occ": "occlusion"}


@dataclass
class TrainConfig:
    epochs: int = 70
    iters_per_epoch: int = 500
    batch_size: int = 32
    base_lr: float = 1e-4
    lr_drop_epochs: tuple = (45, 60)
    lr_drop_factor: float = 0.1
    warmup_supervised_epochs: int = 40
    lambda_unsup: float = 1.0
    p: float = 0.5
    tau_occ: float = 0.9
    occlude_prob: float = 0.5
    occlusion_patch: int = 20
    eta: float = 0.999
    ema_buffers: str = "copy"
    stylize_prob: float = 0.5
    sigma: float = 2.0
    val_fraction: float = 0.2
    eval_alpha: float = 0.05
    seed: int = 0

    def problems(self):
        out = []
        if not self.warmup_supervised_epochs < self.epochs:
            out.append("warmup_supervised_epochs must be smaller than epochs")
        if not 0 < self.p <= 1:
            out.append("p must lie in (0, 1]")
        if not 0 <= self.eta <= 1:
            out.append("eta must lie in [0, 1]")
        if not 0 < self.tau_occ <= 1:
            out.append("tau_occ must lie in (0, 1]")
        if not 0 <= self.stylize_prob <= 1:
            out.append("stylize_prob must lie in [0, 1]")
        if self.ema_buffers not in ("copy", "ema"):
            out.append("ema_buffers must be 'copy' or 'ema'")
        if self.epochs < 1 or self.iters_per_epoch < 1 or self.batch_size < 1:
            out.append("epochs, iters_per_epoch and batch_size must be positive")
        if not 0 < self.val_fraction < 1:
            out.append("val_fraction must lie in (0, 1)")
        return out

    def lr_at(self, epoch: int) -> float:
        drops = sum(1 for e in self.lr_drop_epochs if epoch >= e)
        return self.base_lr * self.lr_drop_factor ** drops


@dataclass
class Ablation:
    mean_teacher: bool = True
    normalize: bool = True
    style: bool = True
    occlusion: bool = True

    def label(self) -> str:
        if not self.mean_teacher:
            return "Source only"
        parts = ["MT"] + [n for n, on in (("Norm", self.normalize), ("Style", self.style), ("Occ", self.occlusion)) if on]
        return " + ".join(parts)


@dataclass
class StyleSection:
    checkpoint: str = None
    net: StyleNetConfig = field(default_factory=StyleNetConfig)
    train: StyleTrainConfig = field(default_factory=StyleTrainConfig)


@dataclass
class DataSection:
    source: str = None
    target: str = None
    synth: SynthConfig = None
    synth_preset: str = "default"


@dataclass
class ExperimentConfig:
    data: DataSection = field(default_factory=DataSection)
    model: PoseNetConfig = field(default_factory=lambda: PoseNetConfig(num_keypoints=10))
    train: TrainConfig = field(default_factory=TrainConfig)
    style: StyleSection = field(default_factory=StyleSection)
    ablation: Ablation = field(default_factory=Ablation)
    augmentation: AugmentConfig = field(default_factory=AugmentConfig)
    output: str = "runs/experiment"

    def problems(self):
        out = list(self.train.problems())
        if self.data.synth is None and (self.data.source is None or self.data.target is None):
            out.append("data needs either source and target paths or a synth block")
        for name in ("source", "target"):
            path = getattr(self.data, name)
            if path is not None and not Path(path).exists():
                out.append(f"data.{name} path {path} does not exist")
        if self.style.checkpoint is not None and not Path(self.style.checkpoint).exists():
            out.append(f"style.checkpoint {self.style.checkpoint} does not exist")
        return out

    def validate(self):
        probs = self.problems()
        if probs:
            raise ConfigError("invalid configuration:\n  " + "\n  ".join(probs))

    def apply_ablation(self, spec: str):
        """Turn off comma-separated switches, e.g. ``"norm,occ"``."""
        for raw in filter(None, (s.strip() for s in spec.split(","))):
            if raw not in ABLATION_NAMES:
                raise ConfigError(f"unknown ablation switch {raw!r}; choose from {sorted(ABLATION_NAMES)}")
            setattr(self.ablation, ABLATION_NAMES[raw], False)


def _convert(tp, value, where):
    if dataclasses.is_dataclass(tp) and isinstance(value, dict):
        return from_dict(tp, value, where)
    origin = typing.get_origin(tp)
    if tp is tuple or origin is tuple:
        return tuple(_tuplify(v) for v in value)
    return value


def _tuplify(v):
    return tuple(_tuplify(x) for x in v) if isinstance(v, list) else v


def from_dict(cls, data: dict, where: str = ""):
    """Build dataclass ``cls`` from ``data``, rejecting unknown keys."""
    if data is None:
        return cls()
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown config keys under {where or 'top level'}: {unknown}")
    kwargs = {}
    for key, value in data.items():
        tp = hints[key]
        if typing.get_origin(tp) is typing.Union:
            tp = next(a for a in typing.get_args(tp) if a is not type(None))
        kwargs[key] = _convert(tp, value, f"{where}.{key}" if where else key) if value is not None else None
    return cls(**kwargs)


def _plain(obj):
    if isinstance(obj, tuple):
        return [_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_plain(v) for v in obj]
    return obj


def to_dict(cfg) -> dict:
    return _plain(asdict(cfg))


def load_experiment(path) -> ExperimentConfig:
    doc = yaml.safe_load(Path(path).read_text()) or {}
    cfg = from_dict(ExperimentConfig, doc)
    if cfg.model is None:
        cfg.model = PoseNetConfig(num_keypoints=10)
    return cfg


def dump_yaml(cfg) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)
