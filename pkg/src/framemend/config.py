"""Flat ``key = value`` run-configuration files.

The format is deliberately minimal: one assignment per line, ``#`` starts a
comment, blank lines are ignored.  Loss-related keys live under a ``loss.``
prefix so the file stays a single flat namespace::

    pretrain_steps = 2000
    learning_rate = 1e-3
    schedule = bernoulli
    loss.lambda_perc = 0.001
    loss.layer_weights = 1.0,0.5,0.25
"""
from __future__ import annotations

import dataclasses
from dataclasses import replace
from pathlib import Path

from .losses import LossWeights
from .trainer import TrainConfig

_LOSS_PREFIX = "loss."
_BOOLS = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def parse_config_text(text: str) -> dict[str, str]:
    """Split config text into an ordered {key: raw value} mapping."""
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ValueError(f"config line {lineno}: empty key")
        if key in pairs:
            raise ValueError(f"config line {lineno}: duplicate key {key!r}")
        pairs[key] = value
    return pairs


def _coerce(key: str, value: str, default) -> object:
    # bool first: it subclasses int
    if isinstance(default, bool):
        flag = _BOOLS.get(value.lower())
        if flag is None:
            raise ValueError(f"config key {key!r}: expected a boolean, got {value!r}")
        return flag
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, str):
        return value
    raise ValueError(f"config key {key!r} cannot be set from a flat file")


def build_train_config(pairs: dict[str, str]) -> TrainConfig:
    """Turn parsed key/value strings into a validated TrainConfig."""
    cfg_fields = {f.name for f in dataclasses.fields(TrainConfig)} - {"loss"}
    loss_fields = {f.name for f in dataclasses.fields(LossWeights)}
    base_cfg = TrainConfig()
    base_loss = base_cfg.loss  # keep file defaults in sync with TrainConfig's
    cfg_kwargs: dict = {}
    loss_kwargs: dict = {}
    for key, value in pairs.items():
        if key.startswith(_LOSS_PREFIX):
            name = key[len(_LOSS_PREFIX) :]
            if name not in loss_fields:
                raise ValueError(f"unknown config key {key!r}")
            if name == "layer_weights":
                loss_kwargs[name] = (
                    None
                    if value.lower() in ("none", "")
                    else tuple(float(v) for v in value.split(","))
                )
            else:
                loss_kwargs[name] = _coerce(key, value, getattr(base_loss, name))
        elif key in cfg_fields:
            cfg_kwargs[key] = _coerce(key, value, getattr(base_cfg, key))
        else:
            raise ValueError(f"unknown config key {key!r}")
    loss = replace(base_loss, **loss_kwargs)
    return replace(base_cfg, loss=loss, **cfg_kwargs)


def format_train_config(cfg: TrainConfig) -> str:
    """Render a TrainConfig back into the flat file format (round-trips)."""
    lines = []
    for f in dataclasses.fields(TrainConfig):
        if f.name == "loss":
            continue
        lines.append(f"{f.name} = {getattr(cfg, f.name)}")
    for f in dataclasses.fields(LossWeights):
        val = getattr(cfg.loss, f.name)
        if f.name == "layer_weights":
            val = "none" if val is None else ",".join(repr(float(v)) for v in val)
        lines.append(f"{_LOSS_PREFIX}{f.name} = {val}")
    return "\n".join(lines) + "\n"


def load_train_config(path, overrides: dict[str, str] | None = None) -> TrainConfig:
    """Read a config file, apply string overrides, and validate."""
    pairs = parse_config_text(Path(path).read_text())
    if overrides:
        pairs.update(overrides)
    return build_train_config(pairs)
