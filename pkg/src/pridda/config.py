"""Experiment configuration files.

A config is a TOML document with the flat sections ``[problem]``,
``[schedule]``, ``[privacy]``, ``[topology]`` and ``[run]``. Unknown
sections or keys are rejected so a typo never silently falls back to a
default.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Tuple

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

SWEEP_AXES = ("epsilon", "iota", "k_edges")


@dataclass(frozen=True)
class ProblemSection:
    source: str = "synthetic"
    path: Optional[str] = None
    samples: int = 1000
    dimension: int = 20
    margin: float = 0.1
    data_seed: int = 1
    nodes: int = 20
    regularizer: str = "l2_half"
    reg_param: float = 0.05


@dataclass(frozen=True)
class ScheduleSection:
    kind: str = "strongly_convex"
    gamma: float = 0.0


@dataclass(frozen=True)
class PrivacySection:
    mode: str = "noiseless"
    epsilon: float = 1.0
    delta0: float = 0.01


@dataclass(frozen=True)
class TopologySection:
    strategy: str = "matching"
    k_edges: int = 1
    beta: Optional[float] = None


@dataclass(frozen=True)
class RunSection:
    horizon: int = 1000
    seeds: Tuple[int, ...] = (0,)
    trace_stride: int = 1
    out: str = "out"
    reference: Optional[str] = None
    reference_iterations: int = 200_000
    reference_gamma: float = 1.0
    sweep_axis: Optional[str] = None
    sweep_values: Tuple[float, ...] = ()


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemSection = field(default_factory=ProblemSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    privacy: PrivacySection = field(default_factory=PrivacySection)
    topology: TopologySection = field(default_factory=TopologySection)
    run: RunSection = field(default_factory=RunSection)
    base_dir: str = "."

    def resolve(self, path: Optional[str]) -> Optional[Path]:
        if path is None:
            return None
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def with_seeds(self, seeds) -> "ExperimentConfig":
        return replace(self, run=replace(self.run, seeds=tuple(seeds)))

    def with_run(self, **changes) -> "ExperimentConfig":
        return replace(self, run=replace(self.run, **changes))


_SECTIONS = {
    "problem": ProblemSection,
    "schedule": ScheduleSection,
    "privacy": PrivacySection,
    "topology": TopologySection,
    "run": RunSection,
}


def _coerce(section: str, name: str, default, value):
    where = f"[{section}] {name}"
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{where} must be a list")
        return tuple(value)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        if ok:
            value = float(value)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    else:  # Optional fields default to None
        ok = isinstance(value, (str, int, float)) and not isinstance(value, bool)
    if not ok:
        raise ConfigError(f"{where} has the wrong type: {value!r}")
    return value


def _section(name: str, raw) -> object:
    cls = _SECTIONS[name]
    if not isinstance(raw, dict):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name: f for f in fields(cls)}
    defaults = cls()
    values = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in [{name}]")
        values[key] = _coerce(name, key, getattr(defaults, key), value)
    return cls(**values)


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    p, s, pr, tp, r = cfg.problem, cfg.schedule, cfg.privacy, cfg.topology, cfg.run
    if p.source not in ("synthetic", "libsvm"):
        raise ConfigError(f"[problem] source must be synthetic or libsvm, got {p.source!r}")
    if p.source == "libsvm":
        if p.path is None:
            raise ConfigError("[problem] path is required for libsvm data")
        if not cfg.resolve(p.path).is_file():
            raise ConfigError(f"[problem] path {p.path!r} does not exist")
    if min(p.samples, p.dimension, p.nodes) < 1:
        raise ConfigError("[problem] samples, dimension and nodes must be positive")
    if pr.mode not in ("dp", "noiseless"):
        raise ConfigError(f"[privacy] mode must be dp or noiseless, got {pr.mode!r}")
    if tp.strategy not in ("matching", "full"):
        raise ConfigError(f"[topology] strategy must be matching or full, got {tp.strategy!r}")
    if not r.seeds:
        raise ConfigError("[run] seeds must not be empty")
    if any(not isinstance(x, int) or isinstance(x, bool) or x < 0 for x in r.seeds):
        raise ConfigError("[run] seeds must be nonnegative integers")
    if r.horizon < 1 or r.trace_stride < 1 or r.reference_iterations < 1:
        raise ConfigError("[run] horizon, trace_stride and reference_iterations must be positive")
    if r.sweep_axis is not None and r.sweep_axis not in SWEEP_AXES:
        raise ConfigError(f"[run] sweep_axis must be one of {', '.join(SWEEP_AXES)}")
    if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in r.sweep_values):
        raise ConfigError("[run] sweep_values must be numbers")
    if s.kind == "strongly_convex" and p.regularizer != "l2_half":
        raise ConfigError("strongly_convex schedule needs the l2_half regularizer")
    return cfg


def parse_config(text: str, base_dir: str = ".") -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from None
    for name in raw:
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
    sections = {name: _section(name, raw[name]) for name in raw}
    return validate(ExperimentConfig(**sections, base_dir=base_dir))


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, base_dir=str(path.parent))
