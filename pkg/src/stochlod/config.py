"""Experiment configuration: nested dataclasses loaded from JSON with strict keys."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .mlp import DEFAULT_SCHEDULE


class ConfigError(ValueError):
    pass


@dataclass
class GridConfig:
    H: float = 2.0 ** -4
    eps: float = 2.0 ** -7
    h: float = 2.0 ** -9
    ell: int = 2
    d: int = 2
    f: float = 1.0


@dataclass
class FieldConfig:
    kind: str = "lognormal"  # or "hierarchical"
    sigma2: float = 0.5
    nu: float = 1.0
    kappa: float = 2.0 ** -6
    kappa_low: float = 2.0 ** -6
    kappa_high: float = 2.0 ** -3
    kappa_values: list = dataclasses.field(default_factory=lambda: [2.0 ** -3, 2.0 ** -4, 2.0 ** -5, 2.0 ** -6])


@dataclass
class DatasetConfig:
    n_realizations: int = 300  # per representative kappa for hierarchical fields
    split: list = dataclasses.field(default_factory=lambda: [0.8, 0.1, 0.1])


@dataclass
class TrainingConfig:
    epochs: int = 60
    batch_size: int = 100
    schedule: list = dataclasses.field(default_factory=lambda: [list(s) for s in DEFAULT_SCHEDULE])
    widths: list | None = None  # None: tapered widths derived from input/output size
    warm_start: str | None = None
    init_seed: int = 0


@dataclass
class PretrainConfig:
    n_realizations: int = 300
    alpha: float = 0.1
    beta: float = 10.0
    epochs: int = 60


@dataclass
class EvalConfig:
    n_fresh: int = 1
    power_tol: float = 1e-8
    power_maxiter: int = 10_000


@dataclass
class MonteCarloConfig:
    n_samples: int = 100
    solvers: list = dataclasses.field(default_factory=lambda: ["fem", "pglod", "nnlod"])


@dataclass
class ExperimentConfig:
    grid: GridConfig = dataclasses.field(default_factory=GridConfig)
    field: FieldConfig = dataclasses.field(default_factory=FieldConfig)
    dataset: DatasetConfig = dataclasses.field(default_factory=DatasetConfig)
    training: TrainingConfig = dataclasses.field(default_factory=TrainingConfig)
    pretrain: PretrainConfig = dataclasses.field(default_factory=PretrainConfig)
    evaluation: EvalConfig = dataclasses.field(default_factory=EvalConfig)
    mc: MonteCarloConfig = dataclasses.field(default_factory=MonteCarloConfig)
    seed: int = 0

    def validate(self) -> "ExperimentConfig":
        g = self.grid
        if g.d != 2:
            raise ConfigError(f"grid.d: unsupported dimension {g.d}")
        for a, b, name in ((g.H, g.eps, "grid.eps"), (g.eps, g.h, "grid.h")):
            ratio = a / b
            if ratio < 1 or abs(ratio - round(ratio)) > 1e-9 or int(round(ratio)) & (int(round(ratio)) - 1):
                raise ConfigError(f"{name}: must refine the coarser scale by a power of 2")
        if not g.H < 1 or g.eps >= g.H:
            raise ConfigError("grid.eps: need H > eps")
        if g.ell < 1:
            raise ConfigError("grid.ell: must be >= 1")
        if self.field.kind not in ("lognormal", "hierarchical"):
            raise ConfigError(f"field.kind: unknown coefficient class {self.field.kind!r}")
        if self.training.epochs < 1:
            raise ConfigError("training.epochs: must be >= 1")
        if abs(sum(self.dataset.split) - 1.0) > 1e-9 or len(self.dataset.split) != 3:
            raise ConfigError("dataset.split: need three fractions summing to 1")
        for s in self.mc.solvers:
            if s not in ("fem", "pglod", "nnlod"):
                raise ConfigError(f"mc.solvers: unknown solver {s!r}")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        return _build(cls, data, "").validate()

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _build(kind, data, prefix):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(kind)}
    kwargs = {}
    for key, value in data.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in fields:
            raise ConfigError(f"unknown config key {path!r}")
        sub = _nested_type(kind, key)
        kwargs[key] = _build(sub, value, path) if sub is not None else value
    return kind(**kwargs)


def _nested_type(kind, key):
    default = kind.__dataclass_fields__[key].default_factory
    if default is dataclasses.MISSING:
        return None
    probe = default()
    return type(probe) if dataclasses.is_dataclass(probe) else None


def apply_override(cfg: ExperimentConfig, dotted: str, raw: str) -> None:
    """Set ``section.key`` from a string, parsed as JSON when possible."""
    parts = dotted.split(".")
    target = cfg
    for p in parts[:-1]:
        if not hasattr(target, p) or not dataclasses.is_dataclass(getattr(target, p)):
            raise ConfigError(f"unknown config key {dotted!r}")
        target = getattr(target, p)
    if not dataclasses.is_dataclass(target) or parts[-1] not in {f.name for f in dataclasses.fields(target)}:
        raise ConfigError(f"unknown config key {dotted!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    setattr(target, parts[-1], value)


def desk_config() -> ExperimentConfig:
    """Reduced-scale setting used by the acceptance suite and quick runs."""
    cfg = ExperimentConfig()
    cfg.grid = GridConfig(H=2.0 ** -3, eps=2.0 ** -5, h=2.0 ** -7, ell=2)
    cfg.field = FieldConfig(sigma2=0.5, kappa=2.0 ** -5)
    cfg.dataset = DatasetConfig(n_realizations=40)
    cfg.pretrain = PretrainConfig(n_realizations=20)
    return cfg
