"""Run configuration: JSON config files merged with command-line overrides.

Config file layout (every key optional)::

    {
      "seed": 0,
      "split": {"train_end_x": 1983.99} | {"train_fraction": 0.6},
      "grid": {"min": 1958, "max": 2001, "count": 200},
      "prior": {
        "rules": {"p_sum": 0.2, "p_prod": 0.2, "p_base": {"Lin": 0.15, ...}},
        "max_leaves": 16,
        "param_priors": {"period": [0.0, 1.0], ...}
      },
      "sampler": {"particle_count": 64, "sweep_count": 100, "mode": "mh",
                  "hmc": {"leapfrog_steps": 10, ...}, "move_probabilities": {...}},
      "greedy": {"max_rounds": 5, "restarts_per_candidate": 4, "optimizer": {...}}
    }
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .dataio import SplitRule
from .errors import ConfigError
from .greedy import GreedyConfig, OptimizerConfig
from .kernels import BaseKind
from .prior import PriorConfig, RuleProbs
from .smc import HMCConfig, SamplerConfig


@dataclass(frozen=True)
class GridSpec:
    min: float | None = None
    max: float | None = None
    count: int = 200

    def __post_init__(self):
        if self.count < 2:
            raise ConfigError("prediction grid needs at least 2 points")
        if self.min is not None and self.max is not None and not self.max > self.min:
            raise ConfigError("grid max must exceed grid min")


@dataclass(frozen=True)
class RunConfig:
    data_path: str | None = None
    split: SplitRule = field(default_factory=SplitRule)
    prior: PriorConfig = field(default_factory=PriorConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    greedy: GreedyConfig = field(default_factory=GreedyConfig)
    grid: GridSpec = field(default_factory=GridSpec)
    out_prefix: str = "gpstruct"
    seed: int = 0


def _kind(name: str) -> BaseKind:
    for kind in BaseKind:
        if kind.value.lower() == str(name).lower():
            return kind
    raise ConfigError(f"unknown base kernel {name!r}")


def _build(cls, data: dict, nested: dict | None = None):
    if not isinstance(data, dict):
        raise ConfigError(f"expected an object for {cls.__name__}, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = dict(data)
    for key, sub in (nested or {}).items():
        if key in kwargs:
            kwargs[key] = sub(kwargs[key])
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def prior_from_json(data: dict) -> PriorConfig:
    def rules(d):
        d = dict(d)
        if "p_base" in d:
            d["p_base"] = {_kind(k): float(v) for k, v in d["p_base"].items()}
        return _build(RuleProbs, d)

    def param_priors(d):
        return {k: tuple(v) for k, v in d.items()}

    return _build(PriorConfig, data, {"rules": rules, "param_priors": param_priors})


def sampler_from_json(data: dict) -> SamplerConfig:
    return _build(SamplerConfig, data, {"hmc": lambda d: _build(HMCConfig, d)})


def greedy_from_json(data: dict) -> GreedyConfig:
    return _build(GreedyConfig, data, {"optimizer": lambda d: _build(OptimizerConfig, d)})


def load_config_file(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return data


def run_config_from_json(data: dict, **overrides) -> RunConfig:
    """Build a :class:`RunConfig`; non-None keyword overrides win over ``data``."""
    known = {"seed", "split", "grid", "prior", "sampler", "greedy", "data_path", "out_prefix"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    seed = overrides.get("seed")
    seed = int(data.get("seed", 0)) if seed is None else int(seed)

    sampler_data = dict(data.get("sampler", {}))
    for key, name in (("particles", "particle_count"), ("sweeps", "sweep_count"), ("mode", "mode")):
        if overrides.get(key) is not None:
            sampler_data[name] = overrides[key]
    sampler_data["seed"] = seed
    greedy_data = dict(data.get("greedy", {}))
    greedy_data["seed"] = seed

    split_data = dict(data.get("split", {}))
    if overrides.get("train_end_x") is not None or overrides.get("train_fraction") is not None:
        split_data = {"train_end_x": overrides.get("train_end_x"), "train_fraction": overrides.get("train_fraction")}
    grid_data = dict(data.get("grid", {}))
    for key in ("min", "max", "count"):
        if overrides.get(f"grid_{key}") is not None:
            grid_data[key] = overrides[f"grid_{key}"]

    return RunConfig(
        data_path=overrides.get("data_path") or data.get("data_path"),
        split=_build(SplitRule, split_data),
        prior=prior_from_json(data.get("prior", {})),
        sampler=sampler_from_json(sampler_data),
        greedy=greedy_from_json(greedy_data),
        grid=_build(GridSpec, grid_data),
        out_prefix=overrides.get("out_prefix") or data.get("out_prefix") or "gpstruct",
        seed=seed,
    )


def _jsonable(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {(k.value if isinstance(k, BaseKind) else k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def config_echo(config: RunConfig) -> dict:
    """JSON-safe dump of the configuration that produced a run.

    The output prefix is left out: where files go does not affect their content.
    """
    echo = _jsonable(config)
    del echo["out_prefix"]
    return echo
