"""Experiment configuration: presets, strict YAML loading and round-tripping.

A config file is a YAML mapping. Any key it sets overrides the preset
selected by its ``profile`` and ``kind``; unknown keys are rejected.
``darec config --profile toy --kind voxel`` prints every default.
"""

from __future__ import annotations

import copy
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, get_type_hints

import yaml

from .darec_net import EncoderArch, LossSwitches, LossWeights
from .errors import ConfigError, InvalidInputError
from .geometry import EvalConfig
from .shape_prior import KINDS, POINTCLOUD, VOXEL, PriorArch, paper_arch, toy_arch
from .synthdata import DatasetSpec

PROFILES = ("toy", "paper")


@dataclass
class Stage1Config:
    epochs: int = 300
    batch_size: int = 32
    lr: float = 1e-4
    converge_window: int = 10
    converge_tol: float = 0.005
    min_epochs: int = 20
    checkpoint_every: int = 5


@dataclass
class Stage2Config:
    steps: int = 5000
    batch_size: int = 16
    lr: float = 1e-4
    eval_every: int = 500
    log_every: int = 50
    natural_in_shape: bool = False
    keep_eval_checkpoints: bool = True


@dataclass
class AblationConfig:
    seeds: tuple = (0, 1, 2)


@dataclass
class ExperimentConfig:
    kind: str = VOXEL
    profile: str = "toy"
    seed: int = 0
    data_path: Optional[str] = None
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    out_dir: str = "runs/default"
    prior: PriorArch = field(default_factory=PriorArch)
    encoder: EncoderArch = field(default_factory=EncoderArch)
    disc_width: int = 1024
    weights: LossWeights = field(default_factory=LossWeights)
    switches: LossSwitches = field(default_factory=LossSwitches)
    stage1: Stage1Config = field(default_factory=Stage1Config)
    stage2: Stage2Config = field(default_factory=Stage2Config)
    eval: EvalConfig = field(default_factory=EvalConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}")
        if self.profile not in PROFILES:
            raise ConfigError(f"profile must be one of {PROFILES}")
        if self.prior.kind != self.kind:
            raise ConfigError("prior.kind must equal kind")
        if not self.switches.use_rec:
            raise ConfigError("switches.use_rec must be true")
        if self.encoder.image_size != self.dataset.image_size and self.data_path is None:
            raise ConfigError("encoder.image_size must match dataset.image_size")
        if self.kind == VOXEL and self.prior.resolution != self.dataset.resolution and self.data_path is None:
            raise ConfigError("prior.resolution must match dataset.resolution")
        if self.stage2.steps < 0 or self.stage2.eval_every < 1:
            raise ConfigError("stage2.steps must be >= 0 and eval_every >= 1")
        self.dataset.validate()

    def to_dict(self) -> dict:
        return _to_plain(dataclasses.asdict(self))

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def copy(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(copy.deepcopy(self), **changes)


def _to_plain(x):
    if isinstance(x, dict):
        return {k: _to_plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_to_plain(v) for v in x]
    return x


def preset(profile: str = "toy", kind: str = VOXEL) -> ExperimentConfig:
    """Defaults for a profile. Toy values are desk-scale choices, not from the method."""
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}")
    if kind not in KINDS:
        raise ConfigError(f"unknown kind {kind!r}")
    weights = LossWeights.for_kind(kind)
    lr2 = 1e-4 if kind == VOXEL else 1e-5
    if profile == "paper":
        return ExperimentConfig(
            kind=kind,
            profile=profile,
            dataset=DatasetSpec(resolution=32, image_size=224),
            prior=paper_arch(kind),
            encoder=EncoderArch(backbone="resnet50", image_size=224),
            disc_width=1024,
            weights=weights,
            stage2=Stage2Config(lr=lr2),
        )
    return ExperimentConfig(
        kind=kind,
        profile=profile,
        dataset=DatasetSpec(resolution=16, image_size=64),
        prior=toy_arch(kind),
        encoder=EncoderArch(backbone="small", image_size=64),
        disc_width=512,
        weights=weights,
        stage1=Stage1Config(lr=1e-3, epochs=300, min_epochs=200),
        stage2=Stage2Config(lr=lr2),
        eval=EvalConfig(n_points=1000),
    )


def _build(cls, data, where: str):
    if not dataclasses.is_dataclass(cls):
        return data
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping")
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown keys {unknown}")
    kwargs = {}
    for name, value in data.items():
        typ = hints.get(name)
        if dataclasses.is_dataclass(typ):
            kwargs[name] = _build(typ, value, f"{where}.{name}".lstrip("."))
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, InvalidInputError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = dict(base)
    for k, v in override.items():
        if k not in base:
            raise ConfigError(f"{where or 'config'}: unknown key {k!r}")
        if isinstance(base[k], dict) and isinstance(v, dict):
            out[k] = _merge(base[k], v, f"{where}.{k}".lstrip("."))
        else:
            out[k] = v
    return out


def from_dict(d: dict) -> ExperimentConfig:
    d = d or {}
    if not isinstance(d, dict):
        raise ConfigError("config must be a mapping")
    base = preset(d.get("profile", "toy"), d.get("kind", VOXEL)).to_dict()
    cfg = _build(ExperimentConfig, _merge(base, d), "")
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return from_dict(data or {})


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(cfg.to_yaml())


def config_hash(cfg: ExperimentConfig) -> str:
    import hashlib

    return hashlib.sha256(json.dumps(cfg.to_dict(), sort_keys=True).encode()).hexdigest()


__all__ = [
    "AblationConfig",
    "ExperimentConfig",
    "POINTCLOUD",
    "PROFILES",
    "Stage1Config",
    "Stage2Config",
    "VOXEL",
    "config_hash",
    "from_dict",
    "load_config",
    "preset",
    "save_config",
]
