"""Run configuration: one YAML file drives every command, flags override keys."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml

from .model import ModelConfig
from .solvers import SolverSpec
from .train import TrainingConfig


class ConfigError(ValueError):
    """Unknown key, bad value or missing path."""


@dataclass
class DataConfig:
    raw: str | None = None  # canonical cascade file; unused with synthetic
    observation_time: float = 3600.0
    prediction_time: float = 86400.0
    min_size: int = 10
    max_triplets: int = 100
    split_seed: int = 0
    split: list[float] = field(default_factory=lambda: [0.70, 0.15, 0.15])
    time_scale: float = 3600.0
    synthetic: bool = False
    synthetic_cascades: int = 200
    synthetic_seed: int = 7
    synthetic_mean_size: float = 40.0

    def __post_init__(self):
        if not 0 < self.observation_time < self.prediction_time:
            raise ValueError("need 0 < observation_time < prediction_time")
        if self.time_scale <= 0 or self.min_size < 1 or self.max_triplets < 1:
            raise ValueError("time_scale, min_size and max_triplets out of range")
        if len(self.split) != 3 or min(self.split) < 0 or abs(sum(self.split) - 1) > 1e-9:
            raise ValueError(f"split must be three non-negative fractions summing to 1, got {self.split}")


@dataclass
class EmbeddingConfig:
    global_dim: int = 64
    seed: int = 0
    oversample: int = 10
    n_iter: int = 7
    sample_points: int = 25
    sample_max: float = 50.0
    chebyshev_order: int = 30


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    solver: SolverSpec = field(default_factory=SolverSpec)
    eval_solver: SolverSpec | None = None
    training: TrainingConfig = field(default_factory=TrainingConfig)
    output: str = "runs/default"
    jobs: int = 1

    def to_dict(self) -> dict:
        return asdict(self)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    @property
    def out(self) -> Path:
        return Path(self.output)

    @property
    def eval_spec(self) -> SolverSpec:
        return self.eval_solver or self.solver


_SECTIONS = {"data": DataConfig, "embedding": EmbeddingConfig, "model": ModelConfig,
             "solver": SolverSpec, "eval_solver": SolverSpec, "training": TrainingConfig}


def _build(cls, values: dict, where: str):
    if not isinstance(values, dict):
        raise ConfigError(f"section {where!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown keys in {where!r}: {unknown}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where!r}: {exc}") from exc


def from_dict(doc: dict | None) -> RunConfig:
    doc = dict(doc or {})
    unknown = sorted(set(doc) - {f.name for f in fields(RunConfig)})
    if unknown:
        raise ConfigError(f"unknown top-level keys: {unknown}")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        if name in doc and doc[name] is not None:
            kwargs[name] = _build(cls, doc[name], name)
    for name in ("output", "jobs"):
        if name in doc:
            kwargs[name] = doc[name]
    return RunConfig(**kwargs)


def parse_override(text: str) -> tuple[list[str], object]:
    """``a.b=value`` with the value read as YAML (so numbers and lists work)."""
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    return key.strip().split("."), yaml.safe_load(raw)


def apply_overrides(doc: dict, overrides) -> dict:
    doc = json.loads(json.dumps(doc))
    for path, value in overrides:
        node = doc
        for part in path[:-1]:
            if node.get(part) is None:
                node[part] = {}
            node = node[part]
            if not isinstance(node, dict):
                raise ConfigError(f"cannot set {'.'.join(path)}: {part!r} is not a section")
        node[path[-1]] = value
    return doc


def load_config(path=None, overrides=()) -> tuple[RunConfig, str]:
    """Return the resolved config and the raw file text (empty without a file)."""
    text = ""
    doc: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} does not exist")
        text = p.read_text(encoding="utf-8")
        try:
            doc = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {p}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{p} must hold a mapping")
    base = asdict(from_dict(doc))
    if doc.get("eval_solver") is None:
        base["eval_solver"] = None
    return from_dict(apply_overrides(base, overrides)), text


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(_plain(cfg.to_dict()), sort_keys=True)


def _plain(x):
    if is_dataclass(x):
        x = asdict(x)
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if hasattr(x, "item"):
        return x.item()
    return x
