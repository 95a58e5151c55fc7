"""Experiment orchestration behind the command-line verbs."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from .config import RunConfig, config_echo, prior_from_json
from .dataio import (
    SplitData,
    SplitRule,
    dumps_json,
    load_csv,
    load_posterior,
    population_from_document,
    posterior_document,
    predictions_csv,
    standardize,
)
from .errors import ConfigError, DataError
from .gp import Dataset
from .greedy import greedy_search
from .kernels import render
from .prior import log_prior_structure, sample_structure
from .smc import Population, PredictiveMixture, predictive_mixture, run_sampler

log = logging.getLogger(__name__)

QUANTILES = (0.1, 0.5, 0.9)


@dataclass(frozen=True, eq=False)
class RunOutputs:
    posterior_path: Path
    predictions_path: Path
    document: dict
    population: Population
    split: SplitData


def _load_split(config: RunConfig) -> tuple[SplitData, np.ndarray]:
    if not config.data_path:
        raise ConfigError("no data file given (--data)")
    x, y = load_csv(config.data_path)
    return standardize(x, y, config.split), x


def prediction_grid(config: RunConfig, x_all: np.ndarray) -> np.ndarray:
    lo = float(np.min(x_all)) if config.grid.min is None else config.grid.min
    hi = float(np.max(x_all)) if config.grid.max is None else config.grid.max
    if not hi > lo:
        raise ConfigError("prediction grid is empty: max must exceed min")
    return np.linspace(lo, hi, config.grid.count)


def quantile_bands(mixture: PredictiveMixture) -> dict[float, np.ndarray]:
    """Predictive quantiles in standardized units; exact for a single component."""
    if mixture.weights.size == 1:
        sd = np.sqrt(mixture.variances[0])
        return {q: mixture.means[0] + sd * ndtri(q) for q in QUANTILES}
    return {q: mixture.quantile(q) for q in QUANTILES}


def predict_raw(population: Population, data: Dataset, x_raw) -> dict[str, np.ndarray]:
    """Mixture mean and 10/50/90% quantiles at raw inputs, returned in raw units."""
    x_raw = np.asarray(x_raw, dtype=float)
    mixture = predictive_mixture(population, data, data.x_transform.forward(x_raw))
    bands = quantile_bands(mixture)
    inv = data.y_transform.inverse
    return {
        "x": x_raw,
        "mean": inv(mixture.mean()),
        "q10": inv(bands[0.1]),
        "q50": inv(bands[0.5]),
        "q90": inv(bands[0.9]),
    }


def heldout_summary(population: Population, split: SplitData) -> dict | None:
    """Coverage of the 10-90% band and RMSE of the median on held-out points."""
    if split.test_x.size == 0:
        return None
    pred = predict_raw(population, split.train, split.test_x)
    inside = (split.test_y >= pred["q10"]) & (split.test_y <= pred["q90"])
    return {
        "count": int(split.test_x.size),
        "coverage_10_90": float(np.mean(inside)),
        "rmse_median": float(np.sqrt(np.mean((pred["q50"] - split.test_y) ** 2))),
    }


def _write_outputs(config, engine, population, split, x_all, extra=None) -> RunOutputs:
    extra = dict(extra or {})
    heldout = heldout_summary(population, split)
    if heldout is not None:
        extra["heldout"] = heldout
    doc = posterior_document(population, split.train, engine, config.seed, config_echo(config), extra)
    pred = predict_raw(population, split.train, prediction_grid(config, x_all))
    prefix = Path(config.out_prefix)
    if prefix.parent != Path("."):
        prefix.parent.mkdir(parents=True, exist_ok=True)
    posterior_path = Path(f"{prefix}.posterior.json")
    predictions_path = Path(f"{prefix}.predictions.csv")
    posterior_path.write_text(dumps_json(doc))
    predictions_path.write_text(predictions_csv(pred["x"], pred["mean"], pred["q10"], pred["q50"], pred["q90"]))
    return RunOutputs(posterior_path, predictions_path, doc, population, split)


def run_fit(config: RunConfig, progress=None) -> RunOutputs:
    """Sample the structure posterior and write the posterior JSON and predictions CSV."""
    split, x_all = _load_split(config)

    def callback(t, population, stats):
        log.info(
            "sweep %d/%d: ess %.1f, structure moves %d, hmc %d/%d%s",
            t + 1,
            config.sampler.sweep_count,
            stats.ess,
            stats.structure_accepted,
            stats.hmc_accepted,
            stats.hmc_total,
            ", resampled" if stats.resampled else "",
        )
        if progress is not None:
            progress(t, population, stats)

    population = run_sampler(split.train, config.prior, config.sampler, callback)
    return _write_outputs(config, "smc", population, split, x_all)


def run_greedy(config: RunConfig) -> RunOutputs:
    split, x_all = _load_split(config)
    result = greedy_search(split.train, config.greedy, np.random.default_rng(config.seed), config.prior)
    from .smc import Particle

    particle = Particle(result.expr, result.params, result.log_marginal, 0.0)
    population = Population((particle,), np.zeros(1))
    trace = [
        {"round": e.round, "structure": e.structure, "log_marginal": e.log_marginal, "adopted": e.adopted}
        for e in result.trace
    ]
    # infeasible candidates carry -inf, which JSON cannot hold
    for entry in trace:
        if not np.isfinite(entry["log_marginal"]):
            entry["log_marginal"] = None
    return _write_outputs(config, "greedy", population, split, x_all, {"trace": trace})


def run_sample_prior(config: RunConfig, count: int) -> list[str]:
    """``count`` lines of ``structure<TAB>log prior`` drawn from the grammar."""
    if count < 1:
        raise ConfigError("count must be at least 1")
    rng = np.random.default_rng(config.seed)
    lines = []
    for _ in range(count):
        expr = sample_structure(rng, config.prior)
        lines.append(f"{render(expr)}\t{log_prior_structure(expr, config.prior)!r}")
    return lines


def describe_posterior(doc: dict) -> list[tuple[str, float, int, float]]:
    """(structure, total weight, particle count, best log marginal), heaviest first."""
    weight = defaultdict(float)
    count = defaultdict(int)
    best = defaultdict(lambda: -np.inf)
    for p in doc["particles"]:
        s = p["structure"]
        weight[s] += float(p["weight"])
        count[s] += 1
        best[s] = max(best[s], float(p["log_marginal"]))
    total = sum(weight.values())
    if not total > 0:
        raise DataError("posterior weights sum to zero")
    rows = [(s, weight[s] / total, count[s], best[s]) for s in weight]
    return sorted(rows, key=lambda r: (-r[1], r[0]))


def run_describe(path) -> str:
    rows = describe_posterior(load_posterior(path))
    lines = ["weight\tcount\tbest_log_marginal\tstructure"]
    lines += [f"{w:.6f}\t{c}\t{lml:.4f}\t{s}" for s, w, c, lml in rows]
    return "\n".join(lines) + "\n"


def run_predict(posterior_path, config: RunConfig) -> Path:
    """Re-evaluate a saved posterior on a new grid; writes ``<prefix>.predictions.csv``."""
    doc = load_posterior(posterior_path)
    echo = doc.get("config", {})
    split_rule = config.split
    if split_rule == SplitRule() and "split" in echo:
        split_rule = SplitRule(**echo["split"])
    data_path = config.data_path or echo.get("data_path")
    if not data_path:
        raise ConfigError("no data file given (--data)")
    x, y = load_csv(data_path)
    split = standardize(x, y, split_rule)
    stored = doc.get("transforms", {})
    for axis, tr in (("x", split.train.x_transform), ("y", split.train.y_transform)):
        if axis in stored and not np.allclose([stored[axis]["scale"], stored[axis]["shift"]], [tr.scale, tr.shift], rtol=1e-12):
            raise DataError(f"data does not reproduce the stored {axis} transform; wrong file or split?")
    prior = prior_from_json(echo["prior"]) if "prior" in echo else config.prior
    population = population_from_document(doc, split.train, prior)
    pred = predict_raw(population, split.train, prediction_grid(config, x))
    out = Path(f"{config.out_prefix}.predictions.csv")
    out.write_text(predictions_csv(pred["x"], pred["mean"], pred["q10"], pred["q50"], pred["q90"]))
    return out
