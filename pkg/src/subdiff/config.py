"""Experiment configuration files (TOML) and their validation.

Layout::

    experiment = "moments"      # optional; must match the CLI experiment
    seed = 42
    workers = 1

    [model]
    beta = 0.5

    [basis]                     # either eigenvalues = [...] or power + dim_J
    eigenvalues = [0.5, 0.3, 0.2]
    mu = [1.0, 2.0, 3.0]

    [grid]
    t_max = 1.0
    steps = 100
    d_tau = 0.01

    [mc]
    paths = 100000
    block = 1000

    [params]                    # experiment-specific settings, see docs/
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ConfigError, ParameterError, TraceClassError
from .spectral import SpectralBasis, make_basis

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["EXPERIMENTS", "ExperimentConfig", "load_config", "config_from_dict"]

EXPERIMENTS = (
    "moments",
    "qwiener-moments",
    "isometry",
    "change-of-var",
    "ito-formula",
    "duality",
    "mild",
    "fpk-residual",
    "subordination",
    "char-function",
    "walsh-triple",
)

_SECTIONS = {
    "model": {"beta"},
    "basis": {"eigenvalues", "power", "dim_J", "mu"},
    "grid": {"t_max", "steps", "d_tau"},
    "mc": {"paths", "block"},
}
_TOP = {"experiment", "seed", "workers", "out"} | set(_SECTIONS) | {"params"}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    beta: float = 0.5
    basis: dict = field(default_factory=lambda: {"eigenvalues": [0.5, 0.3, 0.2], "mu": [1.0, 2.0, 3.0]})
    t_max: float = 1.0
    steps: int = 100
    d_tau: float = 0.01
    mc: int = 10000
    block: int = 1000
    seed: int = 0
    workers: int = 1
    out: str = "subdiff-out"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        if not isinstance(self.beta, (int, float)) or not 0.0 < self.beta <= 1.0:
            raise ConfigError(f"model.beta must lie in (0, 1], got {self.beta!r}")
        for name in ("steps", "mc", "block", "workers"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be a 64-bit non-negative integer, got {self.seed!r}")
        for name in ("t_max", "d_tau"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not v > 0:
                raise ConfigError(f"grid.{name} must be positive, got {v!r}")
        if not isinstance(self.params, dict):
            raise ConfigError("params must be a table")
        self.make_basis()

    def make_basis(self) -> SpectralBasis:
        b = dict(self.basis)
        try:
            return make_basis(b.get("dim_J"), b.get("power"), b.get("eigenvalues"), b.get("mu"))
        except (ParameterError, TraceClassError) as exc:
            raise ConfigError(f"invalid [basis]: {exc}") from exc

    def param(self, name, default):
        return self.params.get(name, default)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)

    def echo(self) -> dict:
        return {
            "experiment": self.experiment,
            "beta": self.beta,
            "basis": dict(self.basis),
            "t_max": self.t_max,
            "steps": self.steps,
            "d_tau": self.d_tau,
            "mc": self.mc,
            "block": self.block,
            "seed": self.seed,
            "params": dict(self.params),
        }


def config_from_dict(data: dict, experiment: str | None = None) -> ExperimentConfig:
    """Build a config from a parsed TOML document."""
    unknown = set(data) - _TOP
    if unknown:
        raise ConfigError(f"unknown top-level keys: {', '.join(sorted(unknown))}")
    for sec, keys in _SECTIONS.items():
        table = data.get(sec, {})
        if not isinstance(table, dict):
            raise ConfigError(f"[{sec}] must be a table")
        bad = set(table) - keys
        if bad:
            raise ConfigError(f"unknown keys in [{sec}]: {', '.join(sorted(bad))}")
    name = data.get("experiment")
    if experiment is not None:
        if name is not None and name != experiment:
            raise ConfigError(f"config is for experiment {name!r}, not {experiment!r}")
        name = experiment
    if name is None:
        raise ConfigError("no experiment given")
    kw = {"experiment": name}
    for key in ("seed", "workers", "out"):
        if key in data:
            kw[key] = data[key]
    model = data.get("model", {})
    if "beta" in model:
        kw["beta"] = model["beta"]
    if "basis" in data:
        kw["basis"] = dict(data["basis"])
    grid = data.get("grid", {})
    for key in ("t_max", "steps", "d_tau"):
        if key in grid:
            kw[key] = grid[key]
    mc = data.get("mc", {})
    if "paths" in mc:
        kw["mc"] = mc["paths"]
    if "block" in mc:
        kw["block"] = mc["block"]
    if "params" in data:
        if not isinstance(data["params"], dict):
            raise ConfigError("[params] must be a table")
        kw["params"] = dict(data["params"])
    return ExperimentConfig(**kw)


def load_config(path, experiment: str | None = None) -> ExperimentConfig:
    p = Path(path)
    try:
        with p.open("rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {p}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from exc
    return config_from_dict(data, experiment)
