"""Flat key/value config files with dotted paths; CLI flags override the file.

Example:

    # tracker
    tracker.iters = 40
    mapping.weights.lambda_r = 0.6
    enhancer.mode = classical
    mapping_iters = 60
    sp_rofusion = true
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .errors import ConfigurationError
from .pipeline import PipelineConfig


def parse_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file {path} does not exist")
    out = {}
    for ln, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{ln}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigurationError(f"{path}:{ln}: empty key")
        out[key] = value
    return out


def _coerce(value: str, current):
    if isinstance(current, bool):
        low = value.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigurationError(f"expected a boolean, got {value!r}")
    if isinstance(current, int) and not isinstance(current, bool):
        return int(value)
    if isinstance(current, float):
        return float(value)
    if current is None or isinstance(current, str):
        return value
    raise ConfigurationError(f"cannot override field of type {type(current).__name__}")


def apply_overrides(cfg: PipelineConfig, overrides: dict) -> PipelineConfig:
    """Set dotted-path keys on a (copied) pipeline config."""
    cfg = _deep_copy(cfg)
    for key, value in overrides.items():
        obj = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            if not hasattr(obj, p):
                raise ConfigurationError(f"unknown config section {key!r}")
            obj = getattr(obj, p)
        leaf = parts[-1]
        if not hasattr(obj, leaf):
            raise ConfigurationError(f"unknown config key {key!r}")
        setattr(obj, leaf, _coerce(str(value), getattr(obj, leaf)))
    return cfg


def _deep_copy(cfg):
    if dataclasses.is_dataclass(cfg) and not isinstance(cfg, type):
        fields = {f.name: _deep_copy(getattr(cfg, f.name))
                  for f in dataclasses.fields(cfg)}
        try:
            return type(cfg)(**fields)
        except TypeError:
            return dataclasses.replace(cfg)
    if isinstance(cfg, dict):
        return dict(cfg)
    return cfg
