"""``key=value`` config files layered over :class:`TrainConfig` defaults.

Precedence is command line > file > defaults. Besides the TrainConfig
fields a file may name the data paths ``low``, ``clean`` and ``out``.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Any, Mapping, Optional

from lowlight.training import TrainConfig

PATH_KEYS = ("low", "clean", "out")


class ConfigError(ValueError):
    pass


def _field_types() -> dict[str, type]:
    kinds = {}
    for f in dataclasses.fields(TrainConfig):
        default = f.default
        if isinstance(default, bool):
            kinds[f.name] = bool
        elif isinstance(default, int):
            kinds[f.name] = int
        elif isinstance(default, float):
            kinds[f.name] = float
        else:
            kinds[f.name] = str
    return kinds


FIELD_TYPES = _field_types()
KNOWN_KEYS = tuple(FIELD_TYPES) + PATH_KEYS


def convert_value(key: str, raw: str) -> Any:
    kind = FIELD_TYPES.get(key, str)
    if kind is bool:
        lowered = raw.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean for {key}, got {raw!r}")
    if kind is int:
        try:
            return int(raw)
        except ValueError:
            raise ValueError(f"expected an integer for {key}, got {raw!r}") from None
    if kind is float:
        try:
            return float(raw)
        except ValueError:
            raise ValueError(f"expected a number for {key}, got {raw!r}") from None
    return raw


def read_config_map(path: str | Path) -> dict[str, Any]:
    """Parse a config file into typed values, rejecting anything unrecognised."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: cannot read config ({exc})") from exc
    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line.strip()!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if not raw:
            raise ConfigError(f"{path}:{lineno}: empty value for {key}")
        try:
            values[key] = convert_value(key, raw)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from None
    return values


def parse_config(
    path: str | Path | None = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> tuple[TrainConfig, dict[str, Any]]:
    """Build a TrainConfig; returns it together with any path entries.

    ``overrides`` holds command-line values; ``None`` entries mean "not given".
    """
    merged: dict[str, Any] = read_config_map(path) if path is not None else {}
    for key, value in (overrides or {}).items():
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown override {key!r}")
        if value is not None:
            merged[key] = value
    paths = {k: merged.pop(k) for k in PATH_KEYS if k in merged}
    cfg = TrainConfig(**merged)
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg, paths
