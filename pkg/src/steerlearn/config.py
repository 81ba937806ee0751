"""``key = value`` run configuration files.

Blank lines and ``#`` comments are ignored. Unknown keys are rejected. Every
key has a default (see ``DEFAULTS``).
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


MODELS = ("nvidia", "conv3d_lstm", "transfer")
PRESETS = ("none", "minimal", "moderate", "heavy")


@dataclass
class RunConfig:
    model: str = "nvidia"
    dataset_root: str = "data"
    preset: str = "minimal"
    epochs: int = 32
    batch_size: int = 32
    lr: float = 0.001
    decay_mode: str = "per_epochs"
    seed: int = 0
    precision: str = "single"
    freeze_layers: int = 45
    angle_per_px: float = 0.004
    trunk_depth: str = "full"
    width: int = 64
    camera: str = "center"
    split_policy: str = "chronological"
    split_ratio: float = 0.8
    output_dir: str = "runs/default"
    timing: bool = True

    def validate(self) -> "RunConfig":
        checks = [
            (self.model in MODELS, f"model must be one of {MODELS}"),
            (self.preset in PRESETS, f"preset must be one of {PRESETS}"),
            (self.decay_mode in ("per_epochs", "per_batch", "none"), "decay_mode must be per_epochs, per_batch or none"),
            (self.precision in ("single", "double"), "precision must be single or double"),
            (self.epochs >= 1, "epochs must be >= 1"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.lr > 0, "lr must be positive"),
            (self.freeze_layers >= 0, "freeze_layers must be >= 0"),
            (self.trunk_depth == "full" or self.trunk_depth.isdigit(), "trunk_depth must be 'full' or a positive integer"),
            (self.width >= 1, "width must be >= 1"),
            (self.camera in ("left", "center", "right", "all"), "camera must be left, center, right or all"),
            (self.split_policy in ("chronological", "seeded-random"), "split_policy must be chronological or seeded-random"),
            (0 < self.split_ratio < 1, "split_ratio must be in (0, 1)"),
            (0 <= self.seed < 2**64, "seed must be a 64-bit unsigned integer"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        return self

    @property
    def trunk_depth_value(self) -> int | None:
        return None if self.trunk_depth == "full" else int(self.trunk_depth)


DEFAULTS = RunConfig()
_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key: str, raw: str):
    kind = _TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_config(text: str, overrides: dict[str, str] | None = None) -> RunConfig:
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"unknown key {key!r} (line {lineno})")
        values[key] = _convert(key, raw)
    for key, raw in (overrides or {}).items():
        if key not in _TYPES:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = _convert(key, raw)
    return RunConfig(**values).validate()


def load_config(path, overrides: dict[str, str] | None = None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, overrides)


def dump_config(cfg: RunConfig) -> str:
    return "".join(f"{f.name} = {str(getattr(cfg, f.name)).lower() if isinstance(getattr(cfg, f.name), bool) else getattr(cfg, f.name)}\n" for f in fields(RunConfig))
