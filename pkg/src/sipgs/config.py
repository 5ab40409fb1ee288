"""Run configuration: model shape, training hyperparameters, metric settings.

Configs round-trip through plain JSON. Parsing is strict: an unknown key
anywhere raises :class:`ConfigError` naming its dotted path, because a
silently ignored hyperparameter typo is the easiest way to lose a result.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any

VARIANTS = ("standard", "recurrent")
BASELINES = ("sipgs", "sipgs_r", "cgan")
BETA_SWEEP = (0.10, 0.25, 0.50, 0.75, 0.90)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 64
    d_z: int = 32
    channels: tuple[int, ...] = (32, 64, 128, 256)
    kernel: int = 4
    x_dim: int = 32
    lstm_hidden: int = 64
    mlp_hidden: int = 64
    variant: str = "standard"
    disc_conditioning: bool = True
    max_window: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        n = len(self.channels)
        if n < 3:
            raise ConfigError("model.channels needs at least 3 stages")
        if self.image_size % (2**n) != 0:
            raise ConfigError(f"model.image_size {self.image_size} not divisible by 2^{n}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"model.variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.kernel < 2 or self.kernel % 2:
            raise ConfigError("model.kernel must be an even size >= 2")
        for name in ("d_z", "x_dim", "lstm_hidden", "mlp_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} must be positive")
        if self.max_window is not None and self.max_window < 1:
            raise ConfigError("model.max_window must be positive or null")

    @property
    def seed_size(self) -> int:
        return self.image_size // 2 ** len(self.channels)


@dataclass(frozen=True)
class TrainConfig:
    beta: float = 0.75
    epochs: int = 70
    patience: int = 7
    batch_size: int = 16
    seed: int = 0
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    lambda_adv: float = 0.1
    baseline: str = "sipgs"
    checkpoint_every: int = 10
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"train.beta must lie in [0, 1], got {self.beta}")
        if self.baseline not in BASELINES:
            raise ConfigError(f"train.baseline must be one of {BASELINES}, got {self.baseline!r}")
        if self.epochs < 1:
            raise ConfigError("train.epochs must be positive")
        if not 1 <= self.patience <= self.epochs:
            raise ConfigError("train.patience must satisfy 1 <= patience <= epochs")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be positive")
        want = "recurrent" if self.baseline == "sipgs_r" else "standard"
        if self.model.variant != want:
            object.__setattr__(self, "model", replace(self.model, variant=want))


@dataclass(frozen=True)
class MetricConfig:
    decay: float = 1.9e-4
    scale_255: bool = False
    extractor: str = "random_conv"
    extractor_seed: int = 0
    split: str = "all"


@dataclass(frozen=True)
class RunConfig:
    dataset: str = ""
    out_dir: str = "run"
    train: TrainConfig = field(default_factory=TrainConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["train"]["model"]["channels"] = list(self.train.model.channels)
        return d

    def hash(self) -> str:
        return config_hash(self)


def _build(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key not in known:
            raise ConfigError(f"unknown config key: {where}")
        sub = _NESTED.get((cls, key))
        kwargs[key] = _build(sub, value, where) if sub else value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None


_NESTED = {
    (TrainConfig, "model"): ModelConfig,
    (RunConfig, "train"): TrainConfig,
    (RunConfig, "metrics"): MetricConfig,
}


def train_config_from_dict(data: dict) -> TrainConfig:
    return _build(TrainConfig, data, "train")


def run_config_from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "")


def load_run_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return run_config_from_dict(data)


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: RunConfig | TrainConfig) -> str:
    """sha1 of the canonical JSON form; ``out_dir`` is excluded."""
    if isinstance(cfg, RunConfig):
        d = cfg.to_dict()
        d.pop("out_dir")
    else:
        d = asdict(cfg)
        d["model"]["channels"] = list(cfg.model.channels)
    return hashlib.sha1(canonical_json(d).encode("utf-8")).hexdigest()
