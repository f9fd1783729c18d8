"""Model and training configuration, serialized as flat ``key=value`` text."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from typing import Any, Mapping


class ConfigError(ValueError):
    """Bad key or value; ``key`` names the offending entry when known."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


@dataclass(frozen=True)
class PapezConfig:
    n_memory: int = 16          # AWM slots M
    max_steps: int = 16         # recurrence depth N
    chunk_size: int = 150       # K
    heads: int = 8
    hidden: int = 256           # token size H
    ffn_hidden: int = 1024
    enc_kernel: int = 16
    enc_stride: int = 8
    enc_channels: int = 256     # E
    speakers: int = 2
    p_th: float = 0.9
    halting: str = "overshoot"  # overshoot | clamped
    pruning: bool = True
    embed_hidden: int = 0       # 0 -> hidden
    mask_hidden: int = 0        # 0 -> 2 * hidden
    halt_bias_init: float = 0.0

    def __post_init__(self):
        positive = ("max_steps", "chunk_size", "heads", "hidden", "ffn_hidden",
                    "enc_kernel", "enc_stride", "enc_channels", "speakers")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive", key=name)
        if self.n_memory < 0:
            raise ConfigError("n_memory must be >= 0", key="n_memory")
        if self.hidden % self.heads:
            raise ConfigError(f"hidden={self.hidden} not divisible by heads={self.heads}", key="heads")
        if self.halting not in ("overshoot", "clamped"):
            raise ConfigError(f"halting must be 'overshoot' or 'clamped', got {self.halting!r}", key="halting")
        if not 0.0 <= self.p_th <= 1.0:
            raise ConfigError("p_th must lie in [0, 1]", key="p_th")
        if self.embed_hidden < 0 or self.mask_hidden < 0:
            raise ConfigError("hidden widths must be >= 0")

    @property
    def embed_width(self) -> int:
        return self.embed_hidden or self.hidden

    @property
    def mask_width(self) -> int:
        return self.mask_hidden or 2 * self.hidden

    def replace(self, **changes) -> "PapezConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class TrainConfig:
    seed: int
    steps: int = 2000
    epoch_size: int = 100
    lr: float = 1e-4
    weight_decay: float = 1e-4
    lr_decay: float = 0.98
    clip_norm: float = 1.0
    duration: float = 0.5
    sample_rate: int = 8000
    eval_items: int = 100
    eval_seed_offset: int = 1_000_000
    precision: str = "f32"

    def __post_init__(self):
        if self.steps < 0 or self.epoch_size < 1:
            raise ConfigError("steps must be >= 0 and epoch_size >= 1", key="epoch_size")
        if self.lr <= 0:
            raise ConfigError("lr must be positive", key="lr")
        if self.duration <= 0:
            raise ConfigError("duration must be positive", key="duration")
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be f32 or f64, got {self.precision!r}", key="precision")


def _coerce(key: str, raw: str, target: type) -> Any:
    raw = raw.strip()
    try:
        if target is bool:
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if target is int:
            return int(raw)
        if target is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"invalid value for {key}: {raw!r}", key=key) from exc


_TYPES = {"int": int, "float": float, "bool": bool, "str": str}


def _field_types(cls) -> dict[str, type]:
    return {f.name: _TYPES[f.type] if isinstance(f.type, str) else f.type for f in fields(cls)}


def parse_kv(text: str) -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out


def split_config(values: Mapping[str, Any]) -> tuple[PapezConfig, TrainConfig | None]:
    """Route flat keys to the model and training configs; unknown keys are rejected.

    The training config is only built when ``seed`` is present.
    """
    model_types, train_types = _field_types(PapezConfig), _field_types(TrainConfig)
    model_kw, train_kw = {}, {}
    for key, raw in values.items():
        if key in model_types:
            model_kw[key] = _coerce(key, raw, model_types[key]) if isinstance(raw, str) else raw
        elif key in train_types:
            train_kw[key] = _coerce(key, raw, train_types[key]) if isinstance(raw, str) else raw
        else:
            raise ConfigError(f"unknown config key {key!r}", key=key)
    model = PapezConfig(**model_kw)
    train = TrainConfig(**train_kw) if "seed" in train_kw else None
    return model, train


def to_kv(*configs) -> str:
    lines = []
    for cfg in configs:
        if cfg is None:
            continue
        for f in fields(cfg):
            value = getattr(cfg, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name}={value}")
    return "\n".join(lines) + "\n"


def load_config_file(path) -> tuple[PapezConfig, TrainConfig | None]:
    with open(path, encoding="utf-8") as fh:
        return split_config(parse_kv(fh.read()))
