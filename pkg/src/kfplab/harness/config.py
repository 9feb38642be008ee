"""Experiment configuration: JSON in, validated dataclass out."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..errors import ConfigError, ParameterError
from ..kernel import ModelParams
from ..pathsim import COUPLING_KINDS

EXPERIMENTS = (
    "kernel-check",
    "mixture-decay",
    "coadapted-decay",
    "non-contraction",
    "sqrt-optimality",
    "stopping-time",
    "martingale-H",
)

_GRID_FORMS = ("linspace", "logspace", "geomspace")


def expand_grid(spec, name: str) -> list[float]:
    """A grid is either an explicit list or ``{"linspace"|"geomspace": [start, stop, num]}``."""
    if isinstance(spec, dict):
        if len(spec) != 1 or next(iter(spec)) not in _GRID_FORMS:
            raise ConfigError(f"{name}: expected a list or one of {_GRID_FORMS}")
        form, args = next(iter(spec.items()))
        try:
            start, stop, num = args
            num = int(num)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{name}: {form} needs [start, stop, num]") from exc
        if form == "linspace":
            grid = np.linspace(start, stop, num)
        elif form == "geomspace":
            grid = np.geomspace(start, stop, num)
        else:
            grid = np.logspace(start, stop, num)
        return [float(g) for g in grid]
    try:
        return [float(g) for g in spec]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: expected a list of numbers") from exc


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    params: ModelParams = field(default_factory=ModelParams)
    t_grid: tuple[float, ...] = (0.0, 1.0)
    n_samples: int = 1024
    n_trials: int = 10_000
    h: float | None = None
    seed: int = 0
    out_path: str | None = None
    # Dirac initial pair (x1, v1, x2, v2)
    initial: tuple[float, float, float, float] | None = None
    z_grid: tuple[float, ...] = ()
    m0_grid: tuple[float, ...] = ()
    coupling: str = "reflection"
    gammas: tuple[float, ...] = (0.1, 1.0, 10.0)
    fit_time: float = 1.0

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        t = np.asarray(self.t_grid, dtype=float)
        if t.size == 0 or np.any(~np.isfinite(t)) or np.any(t < 0) or np.any(np.diff(t) <= 0):
            raise ConfigError("t_grid must be nonempty, nonnegative and strictly increasing")
        if self.n_samples < 1 or self.n_trials < 1:
            raise ConfigError("n_samples and n_trials must be at least 1")
        if self.h is not None and not self.h > 0:
            raise ConfigError("h must be positive")
        if not 0 <= self.seed < 1 << 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.coupling not in COUPLING_KINDS:
            raise ConfigError(f"coupling must be one of {COUPLING_KINDS}")
        if self.initial is not None and len(self.initial) != 4:
            raise ConfigError("initial must be [x1, v1, x2, v2]")
        period = self.params.period
        if any(not 0 <= z <= period / 2 for z in self.z_grid):
            raise ConfigError("z_grid entries must lie in [0, pi L]")
        if any(not 0 <= m <= period for m in self.m0_grid):
            raise ConfigError("m0_grid entries must lie in [0, 2 pi L]")

    @property
    def dirac_pair(self) -> tuple[float, float, float, float]:
        if self.initial is not None:
            return tuple(float(c) for c in self.initial)
        return (0.0, 0.0, math.pi * self.params.L, 0.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["params"] = {"lambda": self.params.lam, "L": self.params.L}
        for k in ("t_grid", "z_grid", "m0_grid", "gammas"):
            d[k] = list(d[k])
        if self.initial is not None:
            d["initial"] = list(self.initial)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


_FIELDS = {f for f in ExperimentConfig.__dataclass_fields__}


def config_from_dict(raw: dict, experiment: str | None = None) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw = dict(raw)
    unknown = set(raw) - _FIELDS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if experiment is not None:
        if raw.get("experiment", experiment) != experiment:
            raise ConfigError(f"config is for {raw['experiment']!r}, not {experiment!r}")
        raw["experiment"] = experiment
    if "experiment" not in raw:
        raise ConfigError("config must name an experiment")
    params = raw.pop("params", {}) or {}
    if not isinstance(params, dict) or set(params) - {"lambda", "L"}:
        raise ConfigError("params must be an object with keys 'lambda' and 'L'")
    try:
        raw["params"] = ModelParams(float(params.get("lambda", 1.0)), float(params.get("L", 1.0)))
    except ParameterError as exc:
        raise ConfigError(str(exc)) from exc
    for k in ("t_grid", "z_grid", "m0_grid", "gammas"):
        if k in raw:
            raw[k] = tuple(expand_grid(raw[k], k))
    if raw.get("initial") is not None:
        raw["initial"] = tuple(expand_grid(raw["initial"], "initial"))
    for k in ("n_samples", "n_trials", "seed"):
        if k in raw:
            if isinstance(raw[k], bool) or not isinstance(raw[k], int):
                raise ConfigError(f"{k} must be an integer")
    for k in ("h", "fit_time"):
        if raw.get(k) is not None:
            raw[k] = float(raw[k])
    try:
        return ExperimentConfig(**raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, experiment: str | None = None, seed: int | None = None, out_path: str | None = None) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg = config_from_dict(raw, experiment)
    overrides = {}
    if seed is not None:
        overrides["seed"] = seed
    if out_path is not None:
        overrides["out_path"] = out_path
    return replace(cfg, **overrides) if overrides else cfg
