"""YAML run configuration with strict key checking."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .model import ModelConfig
from .pipeline import LocalizeParams
from .synthdata import ClassSpec, default_specs, split_sizes
from .trainer import TrainConfig

# architecture keys only; input size and class count come from the data section
MODEL_KEYS = ("num_blocks", "layers_per_block", "growth_rate", "stem_channels", "kernel_size", "feature_norm")


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    n: int = 2400
    image_size: tuple[int, int] = (64, 64)
    noise_sigma: float = 0.1
    fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)
    classes: list[ClassSpec] = field(default_factory=default_specs)

    def __post_init__(self):
        self.image_size = tuple(int(v) for v in self.image_size)
        self.fractions = tuple(float(v) for v in self.fractions)
        split_sizes(self.n, self.fractions)
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be nonnegative")


@dataclass
class RunConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    model: dict = field(default_factory=lambda: {k: getattr(ModelConfig(), k) for k in MODEL_KEYS})
    train: TrainConfig = field(default_factory=TrainConfig)
    localization: LocalizeParams = field(default_factory=LocalizeParams)

    def model_config(self) -> ModelConfig:
        return ModelConfig(input_size=self.data.image_size, num_classes=len(self.data.classes), **self.model)

    def train_config(self) -> TrainConfig:
        return dataclasses.replace(self.train, seed=self.seed)

    @property
    def class_names(self) -> list[str]:
        return [c.name for c in self.data.classes]

    def to_dict(self) -> dict:
        train = dataclasses.asdict(self.train)
        train["betas"] = list(train["betas"])
        train.pop("seed")
        loc = dataclasses.asdict(self.localization)
        loc["iou_thresholds"] = list(loc["iou_thresholds"])
        return {
            "seed": self.seed,
            "data": {
                "n": self.data.n,
                "image_size": list(self.data.image_size),
                "noise_sigma": self.data.noise_sigma,
                "fractions": list(self.data.fractions),
                "classes": [c.to_dict() for c in self.data.classes],
            },
            "model": dict(self.model),
            "train": train,
            "localization": loc,
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def _strict(section: str, given: dict, allowed) -> dict:
    if not isinstance(given, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {section!r}: {', '.join(unknown)}")
    return given


def _fields(cls) -> list[str]:
    return [f.name for f in dataclasses.fields(cls)]


def from_dict(d: dict[str, Any] | None) -> RunConfig:
    d = _strict("<root>", d or {}, ("seed", "data", "model", "train", "localization"))
    try:
        data_d = dict(_strict("data", d.get("data", {}), _fields(DataConfig)))
        if "classes" in data_d:
            data_d["classes"] = [ClassSpec(**_strict("data.classes[]", c, _fields(ClassSpec)))
                                 for c in data_d["classes"]]
        model = RunConfig().model
        model.update(_strict("model", d.get("model", {}), MODEL_KEYS))
        train_d = _strict("train", d.get("train", {}), [k for k in _fields(TrainConfig) if k != "seed"])
        loc_d = dict(_strict("localization", d.get("localization", {}), _fields(LocalizeParams)))
        if "iou_thresholds" in loc_d:
            loc_d["iou_thresholds"] = tuple(float(t) for t in loc_d["iou_thresholds"])
        cfg = RunConfig(
            seed=int(d.get("seed", 0)),
            data=DataConfig(**data_d),
            model=model,
            train=TrainConfig(**train_d),
            localization=LocalizeParams(**loc_d),
        )
        cfg.model_config()
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load(path) -> RunConfig:
    text = Path(path).read_text()
    try:
        d = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(d)
