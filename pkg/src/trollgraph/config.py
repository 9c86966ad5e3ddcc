"""Run configuration: JSON file + command-line overrides, validated per task."""

from __future__ import annotations

import dataclasses
import json
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .ingest import ConfigError, Platform

TASKS = ("ingest", "graph", "delta", "featurize", "embed", "detect", "forecast", "evaluate",
         "baseline", "ablate", "robustness", "synth", "worker")

# paths each task cannot run without
REQUIRED = {
    "ingest": ("records",),
    "graph": ("records",),
    "delta": ("records",),
    "featurize": ("records",),
    "embed": ("records",),
    "detect": ("records", "labels"),
    "forecast": ("records", "labels"),
    "evaluate": ("records", "labels", "checkpoint"),
    "baseline": ("records", "labels"),
    "ablate": ("records", "labels"),
    "robustness": ("records", "labels"),
}


@dataclass
class RunConfig:
    task: str = "detect"
    records: str | None = None
    labels: str | None = None
    embeddings: str | None = None
    checkpoint: str | None = None
    out: str = "out"
    platform: str = "X"
    seed: int = 0
    # graph construction
    delta: int | str = "auto"
    min_edges: int = 16
    mentions: bool | None = None   # None: on for forecasting, off for detection
    # detection
    epochs: int = 100
    lr: float = 1e-3
    hidden: int = 64
    folds: int = 10
    classifier: str = "head"
    n_trees: int = 100
    embedding_scale: float | None = None
    method: str = "both"           # baseline: tabular, pagerank or both
    groups: list[str] | None = None
    noise_levels: list[float] = field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])
    # forecasting
    variant: str = "recurrent"
    max_epochs: int = 200
    patience: int = 10
    workers: int = 1
    transport: str = "inproc"
    eval_seed: int = 12345
    # embeddings
    provider: str = "hashing"
    embed_dim: int = 384
    provider_url: str | None = None
    # synthetic campaigns
    preset: str = "forecast"
    synth: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_HINTS = typing.get_type_hints(RunConfig)


def _accepts(hint, value) -> bool:
    origin = typing.get_origin(hint)
    if origin in (typing.Union, getattr(__import__("types"), "UnionType", None)):
        return any(_accepts(h, value) for h in typing.get_args(hint))
    if hint is type(None):
        return value is None
    if origin is list:
        (inner,) = typing.get_args(hint)
        return isinstance(value, list) and all(_accepts(inner, v) for v in value)
    if origin is dict or hint is dict:
        return isinstance(value, dict)
    if hint is bool:
        return isinstance(value, bool)
    if hint is int:
        return isinstance(value, int) and not isinstance(value, bool)
    if hint is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if hint is str:
        return isinstance(value, str)
    return True


def _type_name(hint) -> str:
    args = typing.get_args(hint)
    if args and typing.get_origin(hint) is not list:
        return " or ".join(_type_name(a) for a in args)
    return "None" if hint is type(None) else getattr(hint, "__name__", str(hint))


def schema() -> dict:
    """JSON-schema style description of the config file."""
    def describe(hint):
        names = {int: "integer", float: "number", str: "string", bool: "boolean", dict: "object",
                 type(None): "null"}
        if typing.get_origin(hint) is list:
            return "array"
        args = typing.get_args(hint)
        if args and typing.get_origin(hint) is not list:
            return [describe(a) for a in args]
        return names.get(hint, "any")

    return {"type": "object", "additionalProperties": False,
            "properties": {k: {"type": describe(h)} for k, h in _HINTS.items()}}


def _check_values(cfg: RunConfig) -> None:
    if cfg.task not in TASKS:
        raise ConfigError(f"task: unknown task {cfg.task!r}")
    Platform.parse(cfg.platform)
    if cfg.delta != "auto" and (not isinstance(cfg.delta, int) or cfg.delta <= 0):
        raise ConfigError("delta: must be a positive number of seconds or 'auto'")
    positive = ("min_edges", "epochs", "hidden", "folds", "n_trees", "max_epochs", "patience", "workers", "embed_dim")
    for name in positive:
        if getattr(cfg, name) < 1:
            raise ConfigError(f"{name}: must be >= 1")
    if cfg.lr <= 0:
        raise ConfigError("lr: must be positive")
    choices = {"classifier": ("head", "rf"), "method": ("tabular", "pagerank", "both"),
               "variant": ("recurrent", "static"), "provider": ("hashing", "random", "http"),
               "transport": ("inproc", "tcp"), "preset": ("forecast", "detect")}
    for name, allowed in choices.items():
        if getattr(cfg, name) not in allowed:
            raise ConfigError(f"{name}: must be one of {list(allowed)}, got {getattr(cfg, name)!r}")
    if cfg.provider == "http" and not cfg.provider_url:
        raise ConfigError("provider_url: required when provider is http")


def load_config(path: str | os.PathLike | None = None, overrides: dict | None = None) -> RunConfig:
    """File values, then non-None ``overrides`` on top. Unknown keys and
    type mismatches are fatal; required input paths must exist."""
    raw: dict = {}
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        if text.strip():
            try:
                raw = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config {path}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path}: top level must be an object")
    merged = dict(raw)
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    for key, value in merged.items():
        if key not in _HINTS:
            raise ConfigError(f"unknown config key {key!r}")
        if not _accepts(_HINTS[key], value):
            raise ConfigError(f"{key}: expected {_type_name(_HINTS[key])}, got {type(value).__name__}")
    if isinstance(merged.get("noise_levels"), list):
        merged["noise_levels"] = [float(x) for x in merged["noise_levels"]]
    for key in ("lr",):
        if key in merged:
            merged[key] = float(merged[key])
    cfg = RunConfig(**merged)
    _check_values(cfg)
    for name in REQUIRED.get(cfg.task, ()):
        value = getattr(cfg, name)
        if value is None:
            raise ConfigError(f"{name}: required for task {cfg.task}")
        if not Path(value).exists():
            raise ConfigError(f"{name}: no such file {value}")
    return cfg
