"""Flat ``key = value`` config files for :class:`~segen.trainer.TrainConfig`."""

from __future__ import annotations

import dataclasses
import math
import typing
from pathlib import Path

from ..trainer import TrainConfig


class ConfigError(ValueError):
    pass


def _coerce(raw: str, kind, key: str, lineno: int):
    text = raw.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind == (float | None):
            return None if text.lower() in ("none", "k", "") else float(text)
        return text
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value {raw.strip()!r} for {key}") from None


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Apply ``key = value`` lines (``#`` comments allowed) on top of ``base``."""
    base = base or TrainConfig()
    hints = typing.get_type_hints(TrainConfig)
    updates = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if key not in hints:
            raise ConfigError(f"line {lineno}: unknown option {key!r}")
        updates[key] = _coerce(value, hints[key], key, lineno)
    return dataclasses.replace(base, **updates)


def load_config(path: str | Path, base: TrainConfig | None = None) -> TrainConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), base)


def format_config(cfg: TrainConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, float) and math.isinf(v):
            v = "inf"
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
