"""Run configuration: one flat namespace, parsed from key=value files.

Lines are ``key = value``; blank lines and # comments are ignored.
Unknown keys and malformed values are config errors, so a typo cannot
silently fall back to a default.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, asdict
from pathlib import Path

from .errors import ConfigError


@dataclass
class Config:
    # video geometry
    frames: int = 12
    grid: int = 14
    channels: int = 64
    scales: tuple = (1, 3, 7, 14)
    conv_layers: int = 2

    # sequence learner
    aggregation: str = "spatial"
    block: str = "mamba"
    variant: str = "v2"
    layers: int = 4
    residual: bool = True
    d_state: int = 16
    expand: int = 2
    conv_kernel: int = 4

    # retrieval head
    pooling: str = "mean_all"
    temperature_init: float = 1.0
    symmetric_loss: bool = True

    # synthetic data
    patterns: int = 32
    pattern_size: int = 3
    pattern_channels: int = 8
    pattern_group: int = 4
    pattern_sites: int = 8
    amplitude: float = 20.0
    text_noise: float = 0.1
    train_pairs: int = 512
    test_pairs: int = 100

    # optimization
    batch: int = 4
    steps: int = 500
    lr: float = 0.5
    momentum: float = 0.9

    # benchmark
    bench_frames: tuple = (4, 8, 12, 16, 20)
    bench_budget: float = 2.5e10

    seed: int = 0


_FIELDS = {f.name: f for f in fields(Config)}


def _parse_value(name: str, text: str):
    text = text.strip()
    default = getattr(Config, name)
    try:
        if isinstance(default, bool):
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            if not text:
                return ()
            return tuple(int(p) for p in text.split(","))
        return text
    except ValueError as e:
        raise ConfigError(f"bad value for {name}: {text!r}") from e


def parse_overrides(pairs: dict[str, str]) -> dict:
    out = {}
    for k, v in pairs.items():
        if k not in _FIELDS:
            raise ConfigError(f"unknown config key {k!r}")
        out[k] = _parse_value(k, v)
    return out


def load_config(path=None, overrides: dict[str, str] | None = None) -> Config:
    raw: dict[str, str] = {}
    if path is not None:
        text = Path(path).read_text()
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            k, v = line.split("=", 1)
            raw[k.strip()] = v
    if overrides:
        raw.update(overrides)
    cfg = Config(**parse_overrides(raw))
    validate(cfg)
    return cfg


def validate(cfg: Config) -> None:
    if cfg.frames < 1:
        raise ConfigError(f"frames={cfg.frames}")
    if cfg.batch < 2:
        raise ConfigError("contrastive training needs batch >= 2")
    if cfg.batch > cfg.train_pairs:
        raise ConfigError(f"batch {cfg.batch} exceeds train_pairs {cfg.train_pairs}")
    if cfg.test_pairs < 1 or cfg.train_pairs < 1:
        raise ConfigError("need at least one pair on each split")
    if cfg.patterns < 2:
        raise ConfigError("need at least two distinct patterns")
    if not (0 < cfg.pattern_size <= cfg.grid):
        raise ConfigError(
            f"pattern_size {cfg.pattern_size} must fit the {cfg.grid} grid")
    if cfg.pattern_group < 1 or cfg.pattern_sites < 1:
        raise ConfigError(
            f"pattern_group={cfg.pattern_group} pattern_sites={cfg.pattern_sites}")
    if not (0 < cfg.pattern_channels <= cfg.channels):
        raise ConfigError(f"pattern_channels={cfg.pattern_channels}")
    if cfg.steps < 1 or cfg.lr < 0:
        raise ConfigError(f"steps={cfg.steps} lr={cfg.lr}")
    if not (0 <= cfg.momentum < 1):
        raise ConfigError(f"momentum={cfg.momentum}")
    if cfg.layers < 0:
        raise ConfigError(f"layers={cfg.layers}")
    if cfg.block not in ("mamba", "mambaout", "attention"):
        raise ConfigError(f"unknown block {cfg.block!r}")
    if cfg.variant not in ("none", "v1", "v2"):
        raise ConfigError(f"unknown scan variant {cfg.variant!r}")


def config_dict(cfg: Config) -> dict:
    d = asdict(cfg)
    d["scales"] = list(cfg.scales)
    d["bench_frames"] = list(cfg.bench_frames)
    return d
