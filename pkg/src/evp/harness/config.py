"""Run configuration: ablation toggles plus every hyperparameter of a run.

Serialized as nested JSON::

    {"seed": 0, "steps": 500, "batch_size": 4, "preset": "indoor",
     "std": true, "reg_strategy": "i",
     "imafr": {"enabled": true, "direction": "inverse", "kernel": 7, "reduction": 8},
     "head": {"bins_enabled": true, "num_bins": 64, "d_min": 0.001, "hidden": 32},
     "loss": {"lambda": 0.85, "alpha": 10.0},
     "backbone": {"channels": [128, 96, 64, 32], "seed": 0, "latent_channels": 4},
     "optim": {"lr": 0.0003, "beta1": 0.9, "beta2": 0.999, "eps": 1e-08},
     "data": {"image_size": 64, "train_size": 256, "eval_size": 32, ...}}
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Any

from ..depth_head import PRESETS
from ..errors import ConfigError
from ..imafr import DIRECTIONS
from ..text import STRATEGIES


@dataclass
class ImafrConfig:
    enabled: bool = True
    direction: str = "inverse"
    kernel: int = 7
    reduction: int = 8


@dataclass
class HeadConfig:
    bins_enabled: bool = True
    num_bins: int = 64
    d_min: float = 1e-3
    hidden: int = 32


@dataclass
class LossConfig:
    lam: float = 0.85
    alpha: float = 10.0


@dataclass
class BackboneConfig:
    channels: tuple[int, ...] = (128, 96, 64, 32)
    seed: int = 0
    latent_channels: int = 4


@dataclass
class OptimConfig:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class DataConfig:
    image_size: int = 64
    train_size: int = 256
    eval_size: int = 32
    embed_k: int = 40
    embed_dim: int = 768
    noise: float = 0.02
    grid: int = 4


@dataclass
class RunConfig:
    seed: int = 0
    steps: int = 500
    batch_size: int = 4
    preset: str = "indoor"
    std: bool = True
    reg_strategy: str = "i"
    imafr: ImafrConfig = field(default_factory=ImafrConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def __post_init__(self):
        self.validate()

    @property
    def d_max(self) -> float:
        return PRESETS[self.preset]

    @property
    def d_min(self) -> float:
        return self.head.d_min

    @property
    def toggles(self) -> tuple[bool, bool, bool, str]:
        """(IMAFR, Bins, STD, Reg), the switches an ablation row sets."""
        return (self.imafr.enabled, self.head.bins_enabled, self.std, self.reg_strategy)

    def validate(self) -> None:
        if self.preset not in PRESETS:
            raise ConfigError(f"preset must be one of {sorted(PRESETS)}, got {self.preset!r}")
        if self.reg_strategy not in STRATEGIES:
            raise ConfigError(f"reg_strategy must be one of {STRATEGIES}, got {self.reg_strategy!r}")
        if self.imafr.direction not in DIRECTIONS:
            raise ConfigError(f"imafr.direction must be one of {DIRECTIONS}")
        if self.imafr.kernel % 2 == 0 or self.imafr.kernel < 1:
            raise ConfigError("imafr.kernel must be odd")
        if self.data.image_size % 32 or self.data.image_size < 32:
            raise ConfigError("data.image_size must be a positive multiple of 32")
        if self.data.grid < 1 or self.data.image_size % self.data.grid:
            raise ConfigError("data.grid must divide data.image_size")
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("steps must be >= 0 and batch_size >= 1")
        if self.batch_size > self.data.train_size:
            raise ConfigError("batch_size exceeds data.train_size")
        if self.optim.lr <= 0:
            raise ConfigError("optim.lr must be positive")
        if self.head.num_bins < 2:
            raise ConfigError("head.num_bins must be >= 2")
        if not 0 < self.head.d_min < self.d_max:
            raise ConfigError("head.d_min must lie in (0, d_max)")
        if len(self.backbone.channels) != 4:
            raise ConfigError("backbone.channels needs four entries, coarsest first")

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["loss"]["lambda"] = out["loss"].pop("lam")
        out["backbone"]["channels"] = list(self.backbone.channels)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "RunConfig":
        raw = json.loads(json.dumps(raw))
        if "loss" in raw and "lambda" in raw["loss"]:
            raw["loss"]["lam"] = raw["loss"].pop("lambda")
        nested = {}
        for name, factory in _NESTED.items():
            sub = raw.pop(name, {})
            if not isinstance(sub, dict):
                raise ConfigError(f"{name} must be an object")
            nested[name] = _build(factory, sub, name)
        unknown = set(raw) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        nested["backbone"].channels = tuple(nested["backbone"].channels)
        try:
            return cls(**raw, **nested)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(raw)

    def replace(self, **changes) -> "RunConfig":
        return RunConfig.from_dict(_deep_update(self.to_dict(), changes))


_NESTED = {
    "imafr": ImafrConfig,
    "head": HeadConfig,
    "loss": LossConfig,
    "backbone": BackboneConfig,
    "optim": OptimConfig,
    "data": DataConfig,
}


def _build(factory, sub: dict, name: str):
    known = {f.name for f in dataclasses.fields(factory)}
    unknown = set(sub) - known
    if unknown:
        raise ConfigError(f"unknown keys in {name}: {sorted(unknown)}")
    return factory(**sub)


def _deep_update(base: dict, changes: dict) -> dict:
    for key, value in changes.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value
    return base


# Supported ablation rows: (IMAFR, Bins, STD, Reg).
ABLATION_ROWS: dict[int, tuple[bool, bool, bool, str]] = {
    1: (False, False, False, "v"),
    2: (True, False, False, "v"),
    4: (True, True, True, "v"),
    9: (True, False, True, "vd"),
    10: (True, True, True, "vd"),
    11: (True, True, True, "d"),
    12: (True, True, True, "i"),
}


def ablation_config(row: int, base: RunConfig | None = None) -> RunConfig:
    if row not in ABLATION_ROWS:
        raise ConfigError(f"ablation row {row} is not supported; choose from {sorted(ABLATION_ROWS)}")
    imafr, bins, std, reg = ABLATION_ROWS[row]
    base = base or RunConfig()
    return base.replace(
        imafr={"enabled": imafr}, head={"bins_enabled": bins}, std=std, reg_strategy=reg
    )
