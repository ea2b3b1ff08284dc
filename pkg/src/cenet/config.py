"""Flat key-value run configuration.

The config file format is one ``key = value`` per line, with ``#``
comments and blank lines; unknown keys are errors so typos cannot pass
silently. The serialized text round-trips and is written alongside every
checkpoint for provenance.
"""

from dataclasses import dataclass, field
from pathlib import Path

from .blocks import NetworkConfig
from .dataset import AugmentSpec
from .optim import StepDecaySchedule


class ConfigError(ValueError):
    """Unknown key, bad value, or unusable combination in a run config."""


@dataclass
class RunConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    schedule: StepDecaySchedule = field(default_factory=StepDecaySchedule)
    augment: AugmentSpec = field(default_factory=AugmentSpec)
    batch_size: int = 1
    seed: int = 0
    workers: int = 0
    data_root: str = ""
    eval_data_root: str = ""
    output_dir: str = "run"
    checkpoint_every: int = 10_000
    log_every: int = 100

    def validate(self):
        self.network.validate()
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.workers < 0:
            raise ConfigError(f"workers must be non-negative, got {self.workers}")
        if self.schedule.total_iters < 1:
            raise ConfigError(f"iterations must be positive, got {self.schedule.total_iters}")
        if self.checkpoint_every < 1 or self.log_every < 1:
            raise ConfigError("checkpoint_every and log_every must be positive")
        if self.augment.crop_size < self.network.divisor:
            raise ConfigError(
                f"crop_size {self.augment.crop_size} is smaller than the "
                f"network's required divisor {self.network.divisor}")
        if self.augment.crop_size % self.network.divisor:
            raise ConfigError(
                f"crop_size {self.augment.crop_size} must be divisible by "
                f"{self.network.divisor} (2**stages)")


def _parse_bool(raw: str) -> bool:
    lowered = raw.lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


# key -> (section attribute or None for top level, field name, parser)
_KEYS = {
    "stages": ("network", "num_stages", int),
    "base_channels": ("network", "base_channels", int),
    "global_context": ("network", "use_global_context", _parse_bool),
    "local_context": ("network", "use_local_context", _parse_bool),
    "lr": ("schedule", "initial_lr", float),
    "lr_decay_factor": ("schedule", "decay_factor", float),
    "lr_decay_every": ("schedule", "decay_every", int),
    "iterations": ("schedule", "total_iters", int),
    "crop_size": ("augment", "crop_size", int),
    "flip": ("augment", "enable_flip", _parse_bool),
    "rotation": ("augment", "enable_rotation", _parse_bool),
    "batch_size": (None, "batch_size", int),
    "seed": (None, "seed", int),
    "workers": (None, "workers", int),
    "data_root": (None, "data_root", str),
    "eval_data_root": (None, "eval_data_root", str),
    "output_dir": (None, "output_dir", str),
    "checkpoint_every": (None, "checkpoint_every", int),
    "log_every": (None, "log_every", int),
}


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    config = base if base is not None else RunConfig()
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw_line!r}")
        key, _, raw_value = line.partition("=")
        key = key.strip()
        raw_value = raw_value.strip()
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        section, attr, parser = _KEYS[key]
        try:
            value = parser(raw_value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
        target = config if section is None else getattr(config, section)
        setattr(target, attr, value)
    return config


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def format_config(config: RunConfig) -> str:
    lines = []
    for key, (section, attr, parser) in _KEYS.items():
        target = config if section is None else getattr(config, section)
        value = getattr(target, attr)
        if parser is _parse_bool:
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def desk_preset() -> RunConfig:
    """Small configuration that trains in minutes on a laptop CPU."""
    config = RunConfig()
    config.network.num_stages = 2
    config.network.base_channels = 8
    config.augment.crop_size = 64
    config.schedule.initial_lr = 1e-3
    config.schedule.decay_every = 1000
    config.schedule.total_iters = 2000
    config.checkpoint_every = 1000
    config.log_every = 50
    return config
