"""Experiment configuration: strict JSON parsing, dotted overrides, JSON schema."""

from __future__ import annotations

import copy
import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

METHODS = ("adr", "bare", "joint", "frozen_analytic")
GAMMA_GRID = (1e-3, 1e-2, 1e-1, 1.0)
ALPHA_GRID = (1, 2, 4, 8, 16, 32, 64)


class ConfigError(ValueError):
    """Bad key, bad type, or bad value in an experiment config."""


@dataclass
class SbmConfig:
    blocks: list[int] = field(default_factory=lambda: [100] * 6)
    p_intra: float = 0.05
    p_inter: float = 0.005
    feature_dim: int = 16
    feature_shift: float = 1.0
    seed: int = 0


@dataclass
class DatasetConfig:
    kind: str = "sbm"  # "sbm" | "files"
    path: Optional[str] = None
    sbm: SbmConfig = field(default_factory=SbmConfig)


@dataclass
class StreamConfig:
    base_classes: int = 2
    increment_classes: int = 2
    split_ratio: list[float] = field(default_factory=lambda: [0.6, 0.2, 0.2])
    shuffle_classes: bool = False


@dataclass
class ModelConfig:
    hidden_dims: list[int] = field(default_factory=lambda: [128, 128])
    dropout: float = 0.5


@dataclass
class TrainingConfig:
    lr_base: float = 1e-3
    lr_incremental: float = 1e-4
    epochs: int = 200
    batch_size: int = 2000


@dataclass
class SeedConfig:
    init: int = 0
    dropout: int = 0
    buffer: int = 0
    split: int = 0


@dataclass
class DebugConfig:
    audit: bool = False  # non-exemplar audit after every task
    track_drift: bool = False  # keeps task graphs to measure embedding drift


@dataclass
class SweepConfig:
    gammas: list[float] = field(default_factory=lambda: list(GAMMA_GRID))
    alphas: list[int] = field(default_factory=lambda: list(ALPHA_GRID))
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    workers: int = 1


@dataclass
class ExperimentConfig:
    method: str = "adr"
    gamma: float = 0.1
    alpha: int = 16
    eval_split: str = "test"  # "test" | "val"
    output_dir: Optional[str] = None
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    stream: StreamConfig = field(default_factory=StreamConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    seeds: SeedConfig = field(default_factory=SeedConfig)
    debug: DebugConfig = field(default_factory=DebugConfig)
    sweep: Optional[SweepConfig] = None

    def validate(self) -> ExperimentConfig:
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if not self.gamma >= 0:
            raise ConfigError(f"gamma must be nonnegative, got {self.gamma}")
        if self.alpha < 1:
            raise ConfigError(f"alpha must be >= 1, got {self.alpha}")
        if self.eval_split not in ("test", "val"):
            raise ConfigError(f"eval_split must be 'test' or 'val', got {self.eval_split!r}")
        if self.dataset.kind not in ("sbm", "files"):
            raise ConfigError(f"dataset.kind must be 'sbm' or 'files', got {self.dataset.kind!r}")
        if self.dataset.kind == "files" and not self.dataset.path:
            raise ConfigError("dataset.path is required when dataset.kind is 'files'")
        if not 0.0 <= self.model.dropout < 1.0:
            raise ConfigError("model.dropout must be in [0, 1)")
        if not self.model.hidden_dims or min(self.model.hidden_dims) < 1:
            raise ConfigError("model.hidden_dims must be a nonempty list of positive ints")
        if self.training.epochs < 0 or self.training.batch_size < 1:
            raise ConfigError("training.epochs must be >= 0 and training.batch_size >= 1")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def with_seed(self, seed: int) -> ExperimentConfig:
        """Copy with every named seed (and the SBM seed) set to ``seed``."""
        c = copy.deepcopy(self)
        c.seeds = SeedConfig(seed, seed, seed, seed)
        c.dataset.sbm.seed = seed
        return c


# ------------------------------------------------------------- parsing


def _unwrap_optional(tp):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1:
            return args[0], True
    return tp, False


def _coerce(value: Any, tp, where: str):
    tp, optional = _unwrap_optional(tp)
    if value is None:
        if optional:
            return None
        raise ConfigError(f"{where}: null is not allowed")
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected an object, got {type(value).__name__}")
        return _build(tp, value, where)
    origin = typing.get_origin(tp)
    if origin is list:
        (item,) = typing.get_args(tp)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {type(value).__name__}")
        return [_coerce(v, item, f"{where}[{i}]") for i, v in enumerate(value)]
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{where}: unsupported type {tp}")  # pragma: no cover


def _build(cls, data: dict, where: str = ""):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        prefix = f"{where}." if where else ""
        raise ConfigError(f"unknown config key(s): {', '.join(prefix + k for k in unknown)}")
    kwargs = {}
    for name, value in data.items():
        kwargs[name] = _coerce(value, hints[name], f"{where}.{name}" if where else name)
    return cls(**kwargs)


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    return _build(ExperimentConfig, data).validate()


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror or exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON: {exc}") from None
    return config_from_dict(data)


def _parse_override_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(config: ExperimentConfig, overrides: list[str]) -> ExperimentConfig:
    """Apply ``key=value`` overrides (dotted keys for nesting); values are JSON or bare strings."""
    data = config.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = data
        cls = ExperimentConfig
        for depth, part in enumerate(parts):
            hints = typing.get_type_hints(cls)
            if part not in hints:
                raise ConfigError(f"unknown config key: {'.'.join(parts[: depth + 1])}")
            if depth == len(parts) - 1:
                node[part] = _parse_override_value(raw)
                break
            sub, _ = _unwrap_optional(hints[part])
            if not dataclasses.is_dataclass(sub):
                raise ConfigError(f"{'.'.join(parts[: depth + 1])} is not a section")
            if node.get(part) is None:
                node[part] = dataclasses.asdict(sub())
            node = node[part]
            cls = sub
    return config_from_dict(data)


def dump_config(config: ExperimentConfig) -> str:
    return json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n"


# -------------------------------------------------------------- schema


def _schema_for(tp) -> dict:
    tp, optional = _unwrap_optional(tp)
    if dataclasses.is_dataclass(tp):
        hints = typing.get_type_hints(tp)
        s = {
            "type": "object",
            "additionalProperties": False,
            "properties": {f.name: _schema_for(hints[f.name]) for f in dataclasses.fields(tp)},
        }
    elif typing.get_origin(tp) is list:
        s = {"type": "array", "items": _schema_for(typing.get_args(tp)[0])}
    else:
        s = {"type": {bool: "boolean", int: "integer", float: "number", str: "string"}[tp]}
    if optional:
        s = {"anyOf": [s, {"type": "null"}]}
    return s


def config_schema() -> dict:
    s = _schema_for(ExperimentConfig)
    s["$schema"] = "https://json-schema.org/draft/2020-12/schema"
    s["title"] = "adrgraph experiment config"
    s["properties"]["method"]["enum"] = list(METHODS)
    s["properties"]["eval_split"]["enum"] = ["test", "val"]
    return s
