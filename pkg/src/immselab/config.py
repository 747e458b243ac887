"""Experiment configuration: one JSON file describes one run."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path as FsPath

import numpy as np

from .errors import ConfigError, InvalidModel
from .inputs import CATALOG_IDS, FiniteConstant, GaussConstant, TelegraphMarkov, build_entry
from .mmse import ESTIMATORS, EnsembleSpec
from .sde import TimeGrid

OVERRIDE_KEYS = ("sigma2", "beta", "gamma", "lam", "alphabet", "input")
TOP_KEYS = ("system_id", "overrides", "grid", "r_grid", "replicates", "master_seed", "common_noise", "outputs",
            "tolerances", "probe_budget", "workers", "estimator")


@dataclass
class ExperimentConfig:
    system_id: str
    grid: dict = field(default_factory=lambda: {"T": 1.0, "N": 100})
    r_grid: list = field(default_factory=lambda: [0.5, 1.0, 1.5])
    replicates: int = 1000
    master_seed: int = 0
    common_noise: bool = True
    outputs: str = "results"
    tolerances: dict = field(default_factory=lambda: {"absolute": 0.01, "se_multiplier": 3.0})
    overrides: dict = field(default_factory=dict)
    probe_budget: int = 1000
    workers: int = 1
    estimator: str = "conditional"

    def to_dict(self):
        return asdict(self)

    def time_grid(self) -> TimeGrid:
        return TimeGrid(float(self.grid["T"]), int(self.grid["N"]))

    def entry(self):
        kw = {k: v for k, v in self.overrides.items() if k in ("sigma2", "beta", "gamma", "lam")}
        if "alphabet" in self.overrides:
            a = self.overrides["alphabet"]
            kw["alphabet"] = {float(k): float(v) for k, v in a.items()} if isinstance(a, dict) else list(a)
        if "input" in self.overrides:
            kw["input_model"] = input_from_dict(self.overrides["input"])
        return build_entry(self.system_id, **kw)

    def ensemble_spec(self) -> EnsembleSpec:
        return EnsembleSpec(self.entry(), self.time_grid(), tuple(self.r_grid), self.replicates, self.master_seed,
                            self.common_noise, self.workers, estimator=self.estimator)


def input_from_dict(spec: dict):
    """{"kind": "gauss", "variance": v} | {"kind": "finite", "alphabet": {value: prob}}
    | {"kind": "telegraph", "alphabet": [a, b], "rate": lam}"""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ValueError("input override needs a 'kind' field")
    kind = spec["kind"]
    if kind == "gauss":
        return GaussConstant(float(spec.get("variance", 1.0)))
    if kind == "finite":
        return FiniteConstant.from_mapping({float(k): float(v) for k, v in spec["alphabet"].items()})
    if kind == "telegraph":
        return TelegraphMarkov(tuple(spec.get("alphabet", (1.0, -1.0))), float(spec.get("rate", 1.0)))
    raise ValueError(f"unknown input kind {kind!r}")


def _number(key, value, positive=False, nonneg=False, integer=False):
    ok_type = isinstance(value, int) if integer else isinstance(value, (int, float))
    if isinstance(value, bool) or not ok_type:
        raise ConfigError(key, f"expected {'an integer' if integer else 'a number'}, got {value!r}")
    if not np.isfinite(value):
        raise ConfigError(key, "must be finite")
    if positive and value <= 0:
        raise ConfigError(key, f"must be > 0, got {value}")
    if nonneg and value < 0:
        raise ConfigError(key, f"must be >= 0, got {value}")
    return value


def parse_config(data: dict) -> ExperimentConfig:
    """Validate a decoded config mapping; errors name the offending key."""
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    for key in data:
        if key not in TOP_KEYS:
            raise ConfigError(key, "unknown key")
    if "system_id" not in data:
        raise ConfigError("system_id", "missing")
    sid = data["system_id"]
    if sid not in CATALOG_IDS:
        raise ConfigError("system_id", f"unknown catalog id {sid!r}; known: {', '.join(CATALOG_IDS)}")
    cfg = ExperimentConfig(sid)

    grid = data.get("grid", cfg.grid)
    if not isinstance(grid, dict) or set(grid) - {"T", "N"}:
        raise ConfigError("grid", "expected an object with keys T and N")
    cfg.grid = {"T": float(_number("grid.T", grid.get("T", 1.0), positive=True)),
                "N": _number("grid.N", grid.get("N", 100), positive=True, integer=True)}

    r_grid = data.get("r_grid", cfg.r_grid)
    if not isinstance(r_grid, list) or not r_grid:
        raise ConfigError("r_grid", "expected a non-empty list of nonnegative numbers")
    cfg.r_grid = [float(_number("r_grid", v, nonneg=True)) for v in r_grid]
    if any(b <= a for a, b in zip(cfg.r_grid, cfg.r_grid[1:])):
        raise ConfigError("r_grid", "values must be strictly ascending")

    cfg.replicates = _number("replicates", data.get("replicates", cfg.replicates), integer=True)
    if cfg.replicates < 2:
        raise ConfigError("replicates", "must be >= 2")
    cfg.master_seed = _number("master_seed", data.get("master_seed", 0), nonneg=True, integer=True)
    if cfg.master_seed >= 2 ** 64:
        raise ConfigError("master_seed", "must fit in 64 bits")
    cfg.common_noise = data.get("common_noise", True)
    if not isinstance(cfg.common_noise, bool):
        raise ConfigError("common_noise", "expected true or false")
    cfg.outputs = data.get("outputs", cfg.outputs)
    if not isinstance(cfg.outputs, str) or not cfg.outputs:
        raise ConfigError("outputs", "expected a directory path")

    tol = data.get("tolerances", {})
    if not isinstance(tol, dict) or set(tol) - {"absolute", "se_multiplier"}:
        raise ConfigError("tolerances", "expected an object with keys absolute and se_multiplier")
    cfg.tolerances = {"absolute": float(_number("tolerances.absolute", tol.get("absolute", 0.01), nonneg=True)),
                      "se_multiplier": float(_number("tolerances.se_multiplier", tol.get("se_multiplier", 3.0),
                                                     nonneg=True))}

    cfg.probe_budget = _number("probe_budget", data.get("probe_budget", 1000), integer=True)
    if cfg.probe_budget < 1:
        raise ConfigError("probe_budget", "must be >= 1")
    cfg.workers = _number("workers", data.get("workers", 1), positive=True, integer=True)
    cfg.estimator = data.get("estimator", "conditional")
    if cfg.estimator not in ESTIMATORS:
        raise ConfigError("estimator", f"must be one of {', '.join(ESTIMATORS)}")

    overrides = data.get("overrides", {})
    if not isinstance(overrides, dict):
        raise ConfigError("overrides", "expected an object")
    for key, value in overrides.items():
        if key not in OVERRIDE_KEYS:
            raise ConfigError(f"overrides.{key}", "unknown override")
        if key not in ("alphabet", "input"):
            _number(f"overrides.{key}", value)
    cfg.overrides = dict(overrides)
    try:
        cfg.entry()
    except (InvalidModel, ValueError, TypeError, KeyError, AttributeError) as exc:
        bad = next(iter(overrides), "overrides")
        raise ConfigError(f"overrides.{bad}" if overrides else "system_id", str(exc)) from exc
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = FsPath(path).read_text()
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return parse_config(data)

