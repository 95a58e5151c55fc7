"""Greedy marginal-likelihood structure search (the ABCD-style baseline).

Starting from the best single base kernel, each round tries every one-edit
neighbour of the incumbent (root-level sum/product with a base kernel, swap
of one leaf, deletion of one leaf), fits each candidate's hyperparameters by
MAP gradient ascent and keeps the best one if it improves the optimized log
marginal likelihood.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import ConfigError, NumericalDegeneracyError
from .gp import Dataset, log_marginal_and_grad
from .kernels import (
    BaseKind,
    HyperParams,
    KernelExpr,
    Leaf,
    Product,
    Sum,
    delete_leaf,
    layout_of,
    leaf_count,
    render,
    replace_leaf,
)
from .prior import PriorConfig, grad_log_prior_params, log_prior_params, sample_leaf_params, sample_params

log = logging.getLogger(__name__)

IMPROVEMENT_THRESHOLD = 1e-6


# Box on unconstrained values during fitting; exp(+-12) spans any sane scale.
VALUE_BOUND = 12.0


@dataclass(frozen=True)
class OptimizerConfig:
    """``method`` is ``"lbfgs"`` (default) or ``"gradient"`` (plain ascent with backtracking)."""

    iteration_budget: int = 200
    initial_step: float = 0.05
    shrink: float = 0.5
    grow: float = 2.0
    gradient_tolerance: float = 1e-6
    method: str = "lbfgs"

    def __post_init__(self):
        if self.iteration_budget < 1 or not self.initial_step > 0:
            raise ConfigError("optimizer budget and initial step must be positive")
        if not 0 < self.shrink < 1 < self.grow:
            raise ConfigError("need 0 < shrink < 1 < grow")
        if self.method not in ("lbfgs", "gradient"):
            raise ConfigError(f"unknown optimizer method {self.method!r}")


@dataclass(frozen=True)
class GreedyConfig:
    max_rounds: int = 5
    restarts_per_candidate: int = 4
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 0
    # Also start each edited candidate from the incumbent's fitted values.
    warm_start: bool = True

    def __post_init__(self):
        if self.max_rounds < 1 or self.restarts_per_candidate < 1 or self.seed < 0:
            raise ConfigError("max_rounds and restarts_per_candidate must be positive, seed non-negative")


@dataclass(frozen=True)
class TraceEntry:
    round: int
    structure: str
    log_marginal: float
    adopted: bool = False


@dataclass(frozen=True, eq=False)
class GreedyResult:
    expr: KernelExpr
    params: HyperParams
    log_marginal: float
    trace: list[TraceEntry]


# ---------------------------------------------------------------------------
# Candidate generation
# ---------------------------------------------------------------------------


def _edits(expr: KernelExpr, max_leaves: int):
    """Yield ``(candidate, edit)`` for every one-edit neighbour; ``edit`` describes how it was made."""
    n = leaf_count(expr)
    if n + 1 <= max_leaves:
        for node in (Sum, Product):
            for kind in BaseKind:
                yield node(expr, Leaf(kind)), ("append", kind)
    for i, slot in enumerate(layout_of(expr)):
        for kind in BaseKind:
            if kind is not slot.kind:
                yield replace_leaf(expr, i, Leaf(kind)), ("swap", i, kind)
    if n > 1:
        for i in range(n):
            yield delete_leaf(expr, i), ("delete", i)


def expand_candidates(expr: KernelExpr, max_leaves: int = 16) -> list[KernelExpr]:
    """All distinct trees one edit away from ``expr`` and within ``max_leaves``."""
    seen = {}
    for cand, _ in _edits(expr, max_leaves):
        if leaf_count(cand) <= max_leaves:
            seen.setdefault(cand, None)
    return list(seen)


def _inherit(params: HyperParams, edit, rng, prior: PriorConfig) -> np.ndarray:
    v = params.values
    if edit[0] == "append":
        return np.concatenate([v[:-1], sample_leaf_params(rng, edit[1], prior), v[-1:]])
    slot = params.layout[edit[1]]
    if edit[0] == "swap":
        return np.concatenate([v[: slot.start], sample_leaf_params(rng, edit[2], prior), v[slot.stop :]])
    return np.concatenate([v[: slot.start], v[slot.stop :]])


# ---------------------------------------------------------------------------
# Hyperparameter fitting
# ---------------------------------------------------------------------------


def _objective(expr, data, prior):
    layout = layout_of(expr)

    def evaluate(x):
        params = HyperParams(x, layout)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            lml, g = log_marginal_and_grad(expr, params, data)
        return lml + log_prior_params(expr, params, prior), g + grad_log_prior_params(params, prior), lml

    return evaluate


def _ascend(expr, data, prior, x0, opt: OptimizerConfig) -> tuple[np.ndarray, float, float]:
    """Maximize the log posterior from ``x0``; returns (values, log posterior, log marginal)."""
    if opt.method == "lbfgs":
        return _lbfgs(expr, data, prior, x0, opt)
    return _gradient_ascent(expr, data, prior, x0, opt)


def _lbfgs(expr, data, prior, x0, opt):
    evaluate = _objective(expr, data, prior)
    f0 = evaluate(np.asarray(x0, dtype=float))[0]

    def neg(x):
        try:
            f, g, _ = evaluate(x)
        except (ArithmeticError, ValueError):
            return math.inf, np.zeros_like(x)
        if not (math.isfinite(f) and np.all(np.isfinite(g))):
            return math.inf, np.zeros_like(x)
        return -f, -g

    x_start = np.clip(np.asarray(x0, dtype=float), -VALUE_BOUND, VALUE_BOUND)
    res = optimize.minimize(
        neg,
        x_start,
        jac=True,
        method="L-BFGS-B",
        bounds=[(-VALUE_BOUND, VALUE_BOUND)] * x_start.size,
        options={"maxiter": opt.iteration_budget, "gtol": opt.gradient_tolerance},
    )
    f, _, lml = evaluate(res.x)
    if not f >= f0:
        return _gradient_ascent(expr, data, prior, x0, opt)
    return res.x, f, lml


def _gradient_ascent(expr, data, prior, x0, opt):
    """Ascent along the gradient with Barzilai-Borwein step sizes and Armijo backtracking."""
    evaluate = _objective(expr, data, prior)
    x = np.array(x0, dtype=float)
    f, g, lml = evaluate(x)
    step = opt.initial_step
    evals = 1
    while evals < opt.iteration_budget and np.max(np.abs(g)) > opt.gradient_tolerance:
        gg = float(g @ g)
        while evals < opt.iteration_budget:
            x_new = x + step * g
            evals += 1
            try:
                f_new, g_new, lml_new = evaluate(x_new)
            except (ArithmeticError, ValueError):
                f_new = -math.inf
            # Armijo sufficient-increase condition
            if math.isfinite(f_new) and f_new >= f + 1e-4 * step * gg:
                break
            step *= opt.shrink
        else:
            break
        s, y = x_new - x, g_new - g
        x, f, g, lml = x_new, f_new, g_new, lml_new
        sy = float(s @ y)
        step = float(s @ s) / -sy if sy < 0 else step * opt.grow
        step = min(max(step, 1e-8), 1e3)
    return x, f, lml


def optimize_params(
    expr: KernelExpr,
    data: Dataset,
    config: GreedyConfig,
    rng: np.random.Generator,
    prior: PriorConfig | None = None,
    starts: list[np.ndarray] | None = None,
) -> tuple[HyperParams, float]:
    """MAP hyperparameters over restarts; returns (params, log marginal at the best MAP).

    The restarts are ``restarts_per_candidate`` prior draws plus any explicit
    ``starts``.  Runs are ranked by log posterior.
    """
    prior = prior or PriorConfig()
    inits = [sample_params(rng, expr, prior).values for _ in range(config.restarts_per_candidate)]
    inits += list(starts or [])
    best = None
    for x0 in inits:
        try:
            x, f, lml = _ascend(expr, data, prior, x0, config.optimizer)
        except (ArithmeticError, ValueError) as exc:
            log.debug("restart failed for %s: %s", render(expr), exc)
            continue
        if best is None or f > best[1]:
            best = (x, f, lml)
    if best is None:
        raise NumericalDegeneracyError(f"every restart failed for {render(expr)}", 0.0)
    return HyperParams(best[0], layout_of(expr)), best[2]


# ---------------------------------------------------------------------------
# Search
# ---------------------------------------------------------------------------


def greedy_search(
    data: Dataset,
    config: GreedyConfig,
    rng: np.random.Generator | None = None,
    prior: PriorConfig | None = None,
) -> GreedyResult:
    prior = prior or PriorConfig()
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    trace: list[TraceEntry] = []

    def fit(expr, round_, starts=None):
        try:
            params, lml = optimize_params(expr, data, config, rng, prior, starts)
        except NumericalDegeneracyError:
            trace.append(TraceEntry(round_, render(expr), -math.inf))
            return None
        trace.append(TraceEntry(round_, render(expr), lml))
        return expr, params, lml

    fits = [fit(Leaf(kind), 0) for kind in BaseKind]
    fits = [f for f in fits if f is not None]
    if not fits:
        raise NumericalDegeneracyError("no single-kernel model could be fitted", 0.0)
    best = max(fits, key=lambda f: f[2])
    _mark_adopted(trace, 0, best)

    for round_ in range(1, config.max_rounds):
        expr, params, _ = best
        round_fits = []
        seen = set()
        for cand, edit in _edits(expr, prior.max_leaves):
            if cand in seen:
                continue
            seen.add(cand)
            starts = [_inherit(params, edit, rng, prior)] if config.warm_start else None
            result = fit(cand, round_, starts)
            if result is not None:
                round_fits.append(result)
        if not round_fits:
            break
        challenger = max(round_fits, key=lambda f: f[2])
        if challenger[2] <= best[2] + IMPROVEMENT_THRESHOLD:
            break
        best = challenger
        _mark_adopted(trace, round_, best)
        log.info("round %d: %s (log marginal %.3f)", round_, render(best[0]), best[2])

    return GreedyResult(best[0], best[1], best[2], trace)


def _mark_adopted(trace, round_, best):
    name = render(best[0])
    for i in range(len(trace) - 1, -1, -1):
        entry = trace[i]
        if entry.round == round_ and entry.structure == name:
            trace[i] = TraceEntry(entry.round, entry.structure, entry.log_marginal, True)
            break


def refit(expr: KernelExpr, params: HyperParams, data: Dataset, config: GreedyConfig, prior: PriorConfig | None = None):
    """Run the ascent once more from ``params``; returns (params, log marginal)."""
    prior = prior or PriorConfig()
    x, _, lml = _ascend(expr, data, prior, params.values, config.optimizer)
    return HyperParams(x, params.layout), lml
