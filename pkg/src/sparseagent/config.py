"""Experiment configuration.

Configs are YAML (or JSON, which YAML accepts) with one section per concern::

    seed: 0
    epochs: 60
    batch_size: 128
    dataset:   {kind: blobs, n_train: 512, n_test: 512, n_classes: 4, dim: 8}
    model:     {hidden: [32], activation: relu}
    optimizer: {name: agent, lr: 0.1, momentum: 0.9, gamma: 0.1, alpha: 0.5}
    lr_schedule: {milestones: [50, 100], factor: 0.1}
    sparsity:  {target: 0.9, distribution: uniform, rule: SET}
    objective: {name: standard}

Every key is checked before anything runs; unknown keys are errors.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Optional

import yaml

from .adversarial import AttackConfig
from .sparsity import DECAYS, DISTRIBUTIONS, RULES, SparsitySchedule

OPTIMIZERS = ("sgd", "svrg", "agent", "adam", "mvr", "agent+mvr")
OBJECTIVES = ("standard", "at", "trades")
DATASETS = ("blobs", "csv", "digits")


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key path."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "blobs"
    n_train: int = 512
    n_test: int = 512
    n_classes: int = 4
    dim: int = 8
    separation: float = 2.0
    label_noise: float = 0.0
    seed: int = 0
    train: Optional[str] = None
    test: Optional[str] = None
    test_fraction: float = 0.2


@dataclass(frozen=True)
class ModelConfig:
    hidden: tuple = (32,)
    activation: str = "relu"


@dataclass(frozen=True)
class OptimizerConfig:
    name: str = "agent"
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    gamma: float = 0.1
    alpha: float = 0.5
    fixed_c: Optional[float] = None
    epoch_length: Optional[int] = None
    probe_size: int = 256
    full_grad_subsample: Optional[int] = None
    mvr_a: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class ScheduleConfig:
    milestones: tuple = (50, 100)
    factor: Any = 0.1  # one factor for every milestone, or one per milestone

    def lr_at(self, base_lr: float, epoch: int) -> float:
        factors = self.factor if isinstance(self.factor, (list, tuple)) else [self.factor] * len(self.milestones)
        lr = base_lr
        for milestone, f in zip(self.milestones, factors):
            if epoch >= milestone:
                lr *= f
        return lr


@dataclass(frozen=True)
class SparsityConfig:
    target: float = 0.0
    distribution: str = "uniform"
    rule: str = "SET"
    update_interval: int = 1
    drop_fraction: float = 0.3
    decay: str = "cosine"

    def schedule(self) -> SparsitySchedule:
        return SparsitySchedule(
            self.target, self.distribution, self.rule, self.update_interval, self.drop_fraction, self.decay
        )


@dataclass(frozen=True)
class AttackSection:
    epsilon: float = 8 / 255
    step_size: Optional[float] = None
    iterations: int = 10
    random_start: bool = True
    restarts: int = 1

    def build(self) -> AttackConfig:
        return AttackConfig(self.epsilon, self.step_size, self.iterations, self.random_start, self.restarts)


@dataclass(frozen=True)
class ObjectiveConfig:
    name: str = "standard"
    beta: float = 6.0
    attack: AttackSection = AttackSection()
    eval_attack: AttackSection = AttackSection(iterations=50, restarts=10, step_size=None)
    eval_every: int = 1


@dataclass(frozen=True)
class DiagnosticsConfig:
    trace_c: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    epochs: int = 60
    batch_size: int = 128
    dataset: DatasetConfig = DatasetConfig()
    model: ModelConfig = ModelConfig()
    optimizer: OptimizerConfig = OptimizerConfig()
    lr_schedule: ScheduleConfig = ScheduleConfig()
    sparsity: SparsityConfig = SparsityConfig()
    objective: ObjectiveConfig = ObjectiveConfig()
    diagnostics: DiagnosticsConfig = DiagnosticsConfig()

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def replace(self, **overrides) -> "ExperimentConfig":
        """Copy with dotted-path overrides, e.g. ``replace(**{"optimizer.name": "sgd"})``."""
        raw = self.to_dict()
        for path, value in overrides.items():
            node = raw
            *parents, leaf = path.replace("__", ".").split(".")
            for p in parents:
                node = node[p]
            node[leaf] = value
        return from_dict(raw)


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x



def _coerce(path: str, value, default):
    """Check ``value`` against the type of ``default`` (loosely, YAML-style)."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    return value


def _build(cls, raw, path: str):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(path or "<root>", "expected a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        where = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ConfigError(where, "unknown key")
    defaults = cls()
    kwargs = {}
    for name, value in raw.items():
        sub = f"{path}.{name}" if path else name
        default = getattr(defaults, name)
        annotation = str(known[name].type)
        if hasattr(default, "__dataclass_fields__"):
            kwargs[name] = _build(type(default), value, sub)
        elif annotation == "Any":
            kwargs[name] = value
        elif annotation.startswith("Optional["):
            inner = {"Optional[float]": 0.0, "Optional[int]": 0, "Optional[str]": ""}[annotation]
            kwargs[name] = None if value is None else _coerce(sub, value, inner)
        elif isinstance(default, tuple):
            if not isinstance(value, (list, tuple)):
                raise ConfigError(sub, f"expected a list, got {value!r}")
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = _coerce(sub, value, default)
    return cls(**kwargs)


def _check(cond: bool, field: str, message: str):
    if not cond:
        raise ConfigError(field, message)


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    _check(cfg.epochs >= 0, "epochs", "must be >= 0")
    _check(cfg.batch_size >= 1, "batch_size", "must be >= 1")
    _check(0 <= cfg.seed < 2**64, "seed", "must be an unsigned 64-bit integer")

    d = cfg.dataset
    _check(d.kind in DATASETS, "dataset.kind", f"must be one of {DATASETS}")
    if d.kind == "blobs":
        _check(d.n_train >= 2, "dataset.n_train", "must be >= 2")
        _check(d.n_test >= 0, "dataset.n_test", "must be >= 0")
        _check(d.n_classes >= 2, "dataset.n_classes", "must be >= 2")
        _check(d.dim >= 1, "dataset.dim", "must be >= 1")
        _check(0.0 <= d.label_noise < 1.0, "dataset.label_noise", "must be in [0, 1)")
    if d.kind == "csv":
        _check(bool(d.train), "dataset.train", "a CSV path is required")
        _check(d.test is not None or 0.0 < d.test_fraction < 1.0, "dataset.test_fraction", "must be in (0, 1)")

    m = cfg.model
    _check(all(isinstance(h, int) and h >= 1 for h in m.hidden), "model.hidden", "must be positive integers")
    _check(m.activation in ("relu", "identity"), "model.activation", "must be relu or identity")

    o = cfg.optimizer
    _check(o.name in OPTIMIZERS, "optimizer.name", f"must be one of {OPTIMIZERS}")
    _check(o.lr > 0, "optimizer.lr", "must be positive")
    _check(0.0 <= o.momentum < 1.0, "optimizer.momentum", "must be in [0, 1)")
    _check(o.weight_decay >= 0.0, "optimizer.weight_decay", "must be >= 0")
    _check(0.0 < o.gamma <= 1.0, "optimizer.gamma", "must be in (0, 1]")
    _check(0.0 < o.alpha <= 1.0, "optimizer.alpha", "must be in (0, 1]")
    _check(o.fixed_c is None or 0.0 <= o.fixed_c <= 1.0, "optimizer.fixed_c", "must be in [0, 1]")
    _check(o.epoch_length is None or o.epoch_length >= 1, "optimizer.epoch_length", "must be >= 1")
    _check(o.probe_size >= 2, "optimizer.probe_size", "must be >= 2")
    _check(o.full_grad_subsample is None or o.full_grad_subsample >= 1, "optimizer.full_grad_subsample", "must be >= 1")
    _check(0.0 < o.mvr_a <= 1.0, "optimizer.mvr_a", "must be in (0, 1]")
    _check(0.0 <= o.beta1 < 1.0 and 0.0 <= o.beta2 < 1.0, "optimizer.beta1", "Adam betas must be in [0, 1)")
    _check(o.eps > 0, "optimizer.eps", "must be positive")

    s = cfg.lr_schedule
    _check(all(isinstance(x, int) and x >= 0 for x in s.milestones), "lr_schedule.milestones", "must be epoch indices")
    _check(list(s.milestones) == sorted(s.milestones), "lr_schedule.milestones", "must be increasing")
    if isinstance(s.factor, (list, tuple)):
        _check(len(s.factor) == len(s.milestones), "lr_schedule.factor", "needs one factor per milestone")
        _check(all(isinstance(f, (int, float)) and f > 0 for f in s.factor), "lr_schedule.factor", "must be positive")
    else:
        _check(isinstance(s.factor, (int, float)) and s.factor > 0, "lr_schedule.factor", "must be positive")

    sp = cfg.sparsity
    _check(0.0 <= sp.target < 1.0, "sparsity.target", "must be in [0, 1)")
    _check(sp.distribution in DISTRIBUTIONS, "sparsity.distribution", f"must be one of {DISTRIBUTIONS}")
    _check(sp.rule in RULES, "sparsity.rule", f"must be one of {RULES}")
    _check(sp.decay in DECAYS, "sparsity.decay", f"must be one of {DECAYS}")
    _check(0.0 < sp.drop_fraction < 1.0, "sparsity.drop_fraction", "must be in (0, 1)")
    _check(sp.update_interval >= 1, "sparsity.update_interval", "must be >= 1")

    ob = cfg.objective
    _check(ob.name in OBJECTIVES, "objective.name", f"must be one of {OBJECTIVES}")
    _check(ob.beta >= 0, "objective.beta", "must be >= 0")
    _check(ob.eval_every >= 1, "objective.eval_every", "must be >= 1")
    for name in ("attack", "eval_attack"):
        try:
            getattr(ob, name).build()
        except ValueError as exc:
            raise ConfigError(f"objective.{name}", str(exc)) from None
    return cfg


def from_dict(raw: dict) -> ExperimentConfig:
    return validate(_build(ExperimentConfig, copy.deepcopy(raw), ""))


def load(path) -> ExperimentConfig:
    """Read a YAML or JSON config file."""
    text = Path(path).read_text()
    try:
        raw = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError("<file>", f"cannot parse {path}: {exc}") from None
    return from_dict(raw or {})


def dump(cfg: ExperimentConfig, path):
    path = Path(path)
    data = cfg.to_dict()
    if path.suffix == ".json":
        path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    else:
        path.write_text(yaml.safe_dump(data, sort_keys=False))
