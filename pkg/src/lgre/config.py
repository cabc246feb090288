"""Run configuration: one flat dataclass, parsed from key=value files,
LGRE_-prefixed environment variables and CLI flags (flags win)."""

import dataclasses
import os
from dataclasses import dataclass

from .errors import ConfigError

ENV_PREFIX = "LGRE_"


@dataclass
class TrainConfig:
    dim: int = 200
    channels: int = 2
    kernel: int = 3
    lr: float = 0.001
    batch_size: int = 256
    negatives: int = 1000
    dropout: float = 0.2
    input_dropout: bool = True
    alpha: float = 1e-5
    epochs: int = 100
    seed: int = 0
    no_ru: bool = False
    no_agb: bool = False
    no_tl: bool = False
    eval_filter: str = "time_aware"
    neg_weighting: str = "mean"
    temporal_mode: str = "smooth"
    precision: str = "f64"
    granularity: str = "day"
    val_every: int = 1
    patience: int = 20
    eval_workers: int = 1

    def validate(self):
        positive = ("dim", "channels", "kernel", "lr", "batch_size", "negatives",
                    "val_every", "eval_workers")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"config {name} must be positive, got {getattr(self, name)}")
        if self.kernel % 2 == 0:
            raise ConfigError(f"kernel size must be odd, got {self.kernel}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.epochs < 0 or self.patience < 0:
            raise ConfigError("epochs and patience must be >= 0")
        choices = {"eval_filter": ("raw", "static", "time_aware"),
                   "neg_weighting": ("mean", "literal"),
                   "temporal_mode": ("smooth", "literal"),
                   "precision": ("f64", "f32"),
                   "granularity": ("day", "year")}
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"config {name} must be one of {allowed}, "
                                  f"got {getattr(self, name)!r}")
        return self


FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


def _coerce(name, raw):
    kind = FIELDS[name].type
    if kind == "bool" or isinstance(FIELDS[name].default, bool):
        low = str(raw).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"config {name} expects a boolean, got {raw!r}")
    pytype = type(FIELDS[name].default)
    try:
        return pytype(raw)
    except ValueError as exc:
        raise ConfigError(f"config {name} expects {pytype.__name__}, got {raw!r}") from exc


def parse_config_file(path):
    """Flat key=value text; '#' starts a comment line; unknown keys fail."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, _, raw = line.partition("=")
            key = key.strip()
            if key not in FIELDS:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}; "
                                  f"valid keys: {', '.join(sorted(FIELDS))}")
            values[key] = _coerce(key, raw.strip())
    return values


def env_overrides(environ=None):
    environ = os.environ if environ is None else environ
    values = {}
    for key, raw in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        name = key[len(ENV_PREFIX):].lower()
        if name in FIELDS:
            values[name] = _coerce(name, raw)
    return values


def resolve_config(file_values=None, env_values=None, flag_values=None):
    """Materialize a TrainConfig: defaults < file < environment < flags."""
    merged = {}
    for layer in (file_values, env_values, flag_values):
        if layer:
            merged.update({k: v for k, v in layer.items() if v is not None})
    unknown = set(merged) - set(FIELDS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}; "
                          f"valid keys: {', '.join(sorted(FIELDS))}")
    return TrainConfig(**merged).validate()


def config_to_dict(cfg):
    return dataclasses.asdict(cfg)
