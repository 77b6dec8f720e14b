"""Training run configuration, loadable from JSON or TOML."""

from __future__ import annotations

import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from ..model import PRESETS, ModelConfig, preset
from ..noise import get_pool
from .losses import STAGE_WEIGHTS, LossWeights

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

STAGES = tuple(STAGE_WEIGHTS)


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    stage: str = "noise_free"
    image_size: int = 128
    message_length: int = 30
    batch_size: int = 32
    steps: int = 1000
    lr: float = 1e-3
    pool: Optional[str] = None  # noise-free stage always uses Identity
    strength: float = 1.0
    seed: int = 0
    data_dir: Optional[str] = None
    warm_start: Optional[str] = None
    checkpoint: Optional[str] = None
    checkpoint_every: int = 0
    eval_every: int = 0
    log_every: int = 50
    preset: str = "full"
    model: dict = field(default_factory=dict)  # overrides on top of the preset
    niam_weight: float = 1.0
    nsm_weight: float = 0.1
    message_warmup: int = 0  # steps over which the message weight decays log-linearly from 1 to its stage value

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ConfigError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.stage != "noise_free" and not self.warm_start:
            raise ConfigError(f"the {self.stage} stage starts from a trained noise-free checkpoint; set warm_start")
        if self.stage != "noise_free" and not self.pool:
            raise ConfigError(f"the {self.stage} stage needs a noise pool")
        if self.pool:
            get_pool(self.pool)
        for name in ("image_size", "message_length", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.steps < 0 or self.lr <= 0:
            raise ConfigError("steps must be >= 0 and lr > 0")
        if self.strength < 0 or self.niam_weight < 0 or self.nsm_weight < 0:
            raise ConfigError("strength and loss weights must be non-negative")
        if self.message_warmup < 0:
            raise ConfigError(f"message_warmup must be >= 0, got {self.message_warmup}")
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; expected one of {sorted(PRESETS)}")

    @property
    def weights(self) -> LossWeights:
        return STAGE_WEIGHTS[self.stage]

    def weights_at(self, step: int) -> LossWeights:
        """Stage weights with the message weight warmed up: 1 at step 0, the stage value from ``message_warmup`` on."""
        w = self.weights
        if not self.message_warmup or w.rwm <= 0 or w.rwm >= 1:
            return w
        frac = min(1.0, step / self.message_warmup)
        return replace(w, rwm=w.rwm ** frac)

    def model_config(self) -> ModelConfig:
        return preset(self.preset, image_size=self.image_size, message_length=self.message_length, **self.model)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training settings: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        path = Path(path)
        text = path.read_text()
        if path.suffix.lower() == ".toml":
            data = tomllib.loads(text)
        else:
            data = json.loads(text)
        return cls.from_dict(data)
