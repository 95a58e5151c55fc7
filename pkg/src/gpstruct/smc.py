"""Resample-move population Monte Carlo over kernel structures and hyperparameters.

Each particle carries a structure ``k`` and hyperparameters ``theta``.  A sweep
applies, per particle, one trans-dimensional structure move (grow a leaf into
a sum or product, swap a leaf's base kind, or delete a leaf) followed by a few
HMC transitions on ``theta`` with ``k`` held fixed.  Two weighting schemes are
available:

``mh``
    The structure move is a Metropolis-Hastings step, so every kernel leaves
    p(k, theta | D) invariant and weights stay uniform.
``smc``
    The structure proposal is always applied and its Metropolis-Hastings
    ratio is folded into the particle's log weight; the population is
    resampled systematically whenever ESS drops below a threshold.

Predictions average the per-particle GP predictives into a Gaussian mixture.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp, ndtr

from .errors import ConfigError, DegeneratePopulationError, NumericalDegeneracyError
from .gp import Dataset, log_marginal, log_marginal_and_grad, posterior_predictive
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
    replace_leaf,
)
from .prior import (
    PriorConfig,
    grad_log_prior_params,
    leaf_param_location,
    log_prior_leaf_params,
    log_prior_params,
    log_prior_structure,
    prior_location,
    sample_leaf_params,
    sample_params,
    sample_structure,
)

log = logging.getLogger(__name__)

MOVES = ("expand_sum", "expand_prod", "swap", "delete")
INIT_RETRIES = 100


@dataclass(frozen=True)
class HMCConfig:
    leapfrog_steps: int = 10
    step_size: float = 0.02
    transitions_per_sweep: int = 5
    step_jitter: float = 0.2  # step size is scaled by Uniform(1 - jitter, 1 + jitter)

    def __post_init__(self):
        if self.leapfrog_steps < 0 or self.transitions_per_sweep < 0:
            raise ConfigError("HMC step counts must be non-negative")
        if not self.step_size > 0 or not 0 <= self.step_jitter < 1:
            raise ConfigError("HMC step size must be positive and jitter in [0, 1)")


def _default_moves() -> dict[str, float]:
    return {m: 0.25 for m in MOVES}


@dataclass(frozen=True)
class SamplerConfig:
    particle_count: int = 64
    sweep_count: int = 100
    hmc: HMCConfig = field(default_factory=HMCConfig)
    ess_threshold_fraction: float = 0.5
    move_probabilities: dict[str, float] = field(default_factory=_default_moves)
    seed: int = 0
    mode: str = "mh"
    # Pin every hyperparameter at its prior location and skip HMC; the chain
    # then targets p(k | D, theta0(k)).  Used to check the structure kernel.
    fix_params: bool = False

    def __post_init__(self):
        if self.particle_count < 1 or self.sweep_count < 0:
            raise ConfigError("need at least one particle and a non-negative sweep count")
        if not 0 < self.ess_threshold_fraction <= 1:
            raise ConfigError("ess_threshold_fraction must lie in (0, 1]")
        if set(self.move_probabilities) - set(MOVES):
            raise ConfigError(f"unknown moves: {sorted(set(self.move_probabilities) - set(MOVES))}")
        probs = [self.move_probabilities.get(m, 0.0) for m in MOVES]
        if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-12:
            raise ConfigError("move probabilities must be non-negative and sum to 1")
        if self.mode not in ("mh", "smc"):
            raise ConfigError(f"mode must be 'mh' or 'smc', got {self.mode!r}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    def move_prob(self, move: str) -> float:
        return self.move_probabilities.get(move, 0.0)


@dataclass(frozen=True, eq=False)
class Particle:
    expr: KernelExpr
    params: HyperParams
    log_marginal: float
    log_prior: float  # structure + hyperparameter prior

    @property
    def log_target(self) -> float:
        return self.log_marginal + self.log_prior


def make_particle(expr: KernelExpr, params: HyperParams, data: Dataset, prior: PriorConfig) -> Particle:
    lp = log_prior_structure(expr, prior) + log_prior_params(expr, params, prior)
    return Particle(expr, params, log_marginal(expr, params, data), lp)


@dataclass(frozen=True, eq=False)
class Population:
    particles: tuple[Particle, ...]
    log_weights: np.ndarray

    def __post_init__(self):
        lw = np.asarray(self.log_weights, dtype=float)
        if len(self.particles) < 1 or lw.shape != (len(self.particles),):
            raise ValueError("need one log weight per particle and at least one particle")
        object.__setattr__(self, "particles", tuple(self.particles))
        object.__setattr__(self, "log_weights", lw)

    def __len__(self):
        return len(self.particles)

    @property
    def weights(self) -> np.ndarray:
        return normalized_weights(self.log_weights)

    @property
    def ess(self) -> float:
        return ess(self.log_weights)


# ---------------------------------------------------------------------------
# Weights and resampling
# ---------------------------------------------------------------------------


def normalized_weights(log_weights) -> np.ndarray:
    lw = np.asarray(log_weights, dtype=float)
    if not np.any(np.isfinite(lw)):
        raise DegeneratePopulationError("all particle weights are zero")
    w = np.exp(lw - logsumexp(lw))
    return w / w.sum()


def ess(log_weights) -> float:
    """Effective sample size 1 / sum(w_i^2) of normalized weights."""
    w = normalized_weights(log_weights)
    return float(min(1.0 / np.sum(w**2), w.size))


def systematic_resample(rng: np.random.Generator, log_weights) -> np.ndarray:
    """Ancestor indices from systematic resampling with a single uniform offset."""
    w = normalized_weights(log_weights)
    m = w.size
    positions = (rng.uniform() + np.arange(m)) / m
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, positions, side="right")


# ---------------------------------------------------------------------------
# Structure moves
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StructureProposal:
    """Result of a structure proposal; ``new_expr is None`` marks a null move."""

    move: str
    leaf_index: int
    new_expr: KernelExpr | None = None
    new_params: HyperParams | None = None
    log_forward: float = 0.0
    log_reverse: float = 0.0

    @property
    def is_null(self) -> bool:
        return self.new_expr is None


def _parent_of_leaf(expr: KernelExpr, index: int):
    """(parent, is_right_child) of the ``index``-th leaf, or (None, False) at the root."""
    counter = [index]

    def go(node, parent, is_right):
        if isinstance(node, Leaf):
            hit = counter[0] == 0
            counter[0] -= 1
            return (parent, is_right) if hit else None
        return go(node.left, node, False) or go(node.right, node, True)

    return go(expr, None, False)


def _fresh_leaf_params(rng, kind, prior, config) -> np.ndarray:
    if config.fix_params:
        return leaf_param_location(kind, prior)
    return sample_leaf_params(rng, kind, prior)


def build_structure_move(
    expr: KernelExpr,
    params: HyperParams,
    leaf_index: int,
    move: str,
    new_kind: BaseKind | None,
    fresh: np.ndarray | None,
    prior: PriorConfig,
    config: SamplerConfig,
) -> StructureProposal:
    """Apply a fully specified structure move and score it both ways.

    ``new_kind``/``fresh`` are the base kind and unconstrained parameters of
    the leaf being introduced (ignored for ``delete``).  Expansions put the new
    leaf on the right, so a delete is only reversible when it removes a right
    child whose sibling is a leaf; other deletes come back null.
    """
    n = leaf_count(expr)
    q_kind = prior.rules.base_choice_probs()
    log_pick = -math.log(n)
    values = params.values
    slot = params.layout[leaf_index]
    old_kind = slot.kind
    null = StructureProposal(move, leaf_index)

    if move in ("expand_sum", "expand_prod"):
        if n + 1 > prior.max_leaves or new_kind not in q_kind:
            return null
        node = Sum if move == "expand_sum" else Product
        new_expr = replace_leaf(expr, leaf_index, node(Leaf(old_kind), Leaf(new_kind)))
        new_values = np.concatenate([values[: slot.stop], fresh, values[slot.stop :]])
        log_fwd = (
            log_pick
            + math.log(config.move_prob(move))
            + math.log(q_kind[new_kind])
            + log_prior_leaf_params(new_kind, fresh, prior)
        )
        log_rev = -math.log(n + 1) + _log_or_ninf(config.move_prob("delete"))
    elif move == "swap":
        if new_kind not in q_kind:
            return null
        new_expr = replace_leaf(expr, leaf_index, Leaf(new_kind))
        new_values = np.concatenate([values[: slot.start], fresh, values[slot.stop :]])
        log_m = math.log(config.move_prob("swap"))
        log_fwd = log_pick + log_m + math.log(q_kind[new_kind]) + log_prior_leaf_params(new_kind, fresh, prior)
        old = values[slot.start : slot.stop]
        log_rev = log_pick + log_m + _log_or_ninf(q_kind.get(old_kind, 0.0)) + log_prior_leaf_params(old_kind, old, prior)
    elif move == "delete":
        if n == 1:
            return null
        parent, is_right = _parent_of_leaf(expr, leaf_index)
        if not is_right or not isinstance(parent.left, Leaf):
            return null
        rev_move = "expand_sum" if isinstance(parent, Sum) else "expand_prod"
        new_expr = delete_leaf(expr, leaf_index)
        new_values = np.concatenate([values[: slot.start], values[slot.stop :]])
        removed = values[slot.start : slot.stop]
        log_fwd = log_pick + math.log(config.move_prob("delete"))
        log_rev = (
            -math.log(n - 1)
            + _log_or_ninf(config.move_prob(rev_move))
            + _log_or_ninf(q_kind.get(old_kind, 0.0))
            + log_prior_leaf_params(old_kind, removed, prior)
        )
    else:
        raise ConfigError(f"unknown move {move!r}")

    new_params = HyperParams(new_values, layout_of(new_expr))
    return StructureProposal(move, leaf_index, new_expr, new_params, log_fwd, log_rev)


def _log_or_ninf(p: float) -> float:
    return math.log(p) if p > 0 else -math.inf


def propose_structure_move(
    rng: np.random.Generator, particle: Particle, prior: PriorConfig, config: SamplerConfig
) -> StructureProposal:
    n = leaf_count(particle.expr)
    leaf_index = int(rng.integers(n))
    move_p = np.array([config.move_prob(m) for m in MOVES])
    move = MOVES[rng.choice(len(MOVES), p=move_p)]
    new_kind = fresh = None
    if move != "delete":
        q_kind = prior.rules.base_choice_probs()
        kinds = list(q_kind)
        new_kind = kinds[rng.choice(len(kinds), p=np.array([q_kind[k] for k in kinds]))]
        fresh = _fresh_leaf_params(rng, new_kind, prior, config)
    return build_structure_move(particle.expr, particle.params, leaf_index, move, new_kind, fresh, prior, config)


def score_proposal(
    proposal: StructureProposal, particle: Particle, data: Dataset, prior: PriorConfig
) -> tuple[Particle | None, float]:
    """Candidate particle and the log Metropolis-Hastings ratio of a proposal.

    Null proposals score ``(None, 0.0)``; the caller keeps the current particle.
    Raises :class:`NumericalDegeneracyError` if the proposed GP cannot be factorized.
    """
    if proposal.is_null:
        return None, 0.0
    candidate = make_particle(proposal.new_expr, proposal.new_params, data, prior)
    log_ratio = (candidate.log_target + proposal.log_reverse) - (particle.log_target + proposal.log_forward)
    if math.isnan(log_ratio):
        log_ratio = -math.inf
    return candidate, log_ratio


def acceptance_probability(log_ratio: float) -> float:
    return 1.0 if log_ratio >= 0 else math.exp(log_ratio)


def mh_structure_step(
    rng: np.random.Generator, particle: Particle, data: Dataset, prior: PriorConfig, config: SamplerConfig
) -> Particle:
    proposal = propose_structure_move(rng, particle, prior, config)
    u = rng.uniform()
    try:
        candidate, log_ratio = score_proposal(proposal, particle, data, prior)
    except (ArithmeticError, ValueError) as exc:
        log.debug("structure proposal rejected: %s", exc)
        return particle
    if candidate is not None and math.log(u) < log_ratio:
        return candidate
    return particle


# ---------------------------------------------------------------------------
# HMC on hyperparameters
# ---------------------------------------------------------------------------

LogDensityFn = Callable[[np.ndarray], tuple[float, np.ndarray]]


def leapfrog(
    position: np.ndarray,
    momentum: np.ndarray,
    log_density: LogDensityFn,
    step: float,
    n_steps: int,
) -> tuple[np.ndarray, np.ndarray, float, np.ndarray]:
    """Integrate Hamiltonian dynamics with identity mass.

    Returns the final position, momentum, log density and its gradient.  A
    non-finite log density or gradient ends the trajectory early with
    ``-inf`` log density.
    """
    q = np.array(position, dtype=float)
    p = np.array(momentum, dtype=float)
    logp, grad = log_density(q)
    if n_steps == 0:
        return q, p, logp, grad
    p = p + 0.5 * step * grad
    for i in range(n_steps):
        q = q + step * p
        logp, grad = log_density(q)
        if not (math.isfinite(logp) and np.all(np.isfinite(grad))):
            return q, p, -math.inf, grad
        p = p + (step if i < n_steps - 1 else 0.5 * step) * grad
    return q, p, logp, grad


def hmc_transition(
    rng: np.random.Generator,
    position: np.ndarray,
    log_density: LogDensityFn,
    step_size: float,
    n_steps: int,
    step_jitter: float = 0.0,
    current_logp: float | None = None,
) -> tuple[np.ndarray, float, bool]:
    """One Metropolis-corrected HMC transition; returns (position, log density, accepted)."""
    q0 = np.asarray(position, dtype=float)
    if current_logp is None:
        current_logp = log_density(q0)[0]
    momentum = rng.standard_normal(q0.size)
    step = step_size * rng.uniform(1.0 - step_jitter, 1.0 + step_jitter)
    u = rng.uniform()
    if n_steps == 0:
        return q0, current_logp, True
    q, p, logp, _ = leapfrog(q0, momentum, log_density, step, n_steps)
    h0 = -current_logp + 0.5 * momentum @ momentum
    h1 = -logp + 0.5 * p @ p
    if math.isfinite(h1) and math.log(u) < h0 - h1:
        return q, logp, True
    return q0, current_logp, False


def particle_log_density(expr: KernelExpr, data: Dataset, prior: PriorConfig) -> LogDensityFn:
    """Unnormalized log posterior of the hyperparameters for a fixed structure."""
    layout = layout_of(expr)

    def fn(values: np.ndarray) -> tuple[float, np.ndarray]:
        if not np.all(np.isfinite(values)):
            return -math.inf, np.full(values.shape, np.nan)
        params = HyperParams(values, layout)
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                lml, grad = log_marginal_and_grad(expr, params, data)
        except (ArithmeticError, ValueError) as exc:
            log.debug("HMC trajectory hit a degenerate kernel: %s", exc)
            return -math.inf, np.full(values.shape, np.nan)
        lp = log_prior_params(expr, params, prior)
        return lml + lp, grad + grad_log_prior_params(params, prior)

    return fn


def hmc_step(
    rng: np.random.Generator, particle: Particle, data: Dataset, prior: PriorConfig, config: SamplerConfig
) -> Particle:
    hmc = config.hmc
    log_struct = log_prior_structure(particle.expr, prior)
    current = particle.log_target - log_struct
    values, logp, accepted = hmc_transition(
        rng,
        particle.params.values,
        particle_log_density(particle.expr, data, prior),
        hmc.step_size,
        hmc.leapfrog_steps,
        hmc.step_jitter,
        current_logp=current,
    )
    if not accepted or hmc.leapfrog_steps == 0:
        return particle
    params = particle.params.with_values(values)
    lpp = log_prior_params(particle.expr, params, prior)
    return Particle(particle.expr, params, logp - lpp, log_struct + lpp)


# ---------------------------------------------------------------------------
# Population loop
# ---------------------------------------------------------------------------


def _stream(seed: int, sweep: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, sweep, index])


def init_population(
    rng_or_none, config: SamplerConfig, prior: PriorConfig, data: Dataset
) -> Population:
    """M particles from the joint prior with uniform weights.

    Particle ``j`` draws from its own stream seeded by ``(seed, 0, j)``; pass
    ``None`` as the first argument to use ``config.seed``, or a generator whose
    first draw is used as the seed.
    """
    seed = config.seed if rng_or_none is None else int(rng_or_none.integers(2**31))
    particles = []
    for j in range(config.particle_count):
        rng = _stream(seed, 0, j)
        jitter = 0.0
        for _ in range(INIT_RETRIES):
            expr = sample_structure(rng, prior)
            params = prior_location(expr, prior) if config.fix_params else sample_params(rng, expr, prior)
            try:
                particles.append(make_particle(expr, params, data, prior))
                break
            except NumericalDegeneracyError as exc:
                jitter = exc.jitter
                log.debug("redrawing initial particle %d: %s", j, exc)
        else:
            raise NumericalDegeneracyError(f"could not draw initial particle {j}", jitter)
    m = len(particles)
    return Population(tuple(particles), np.full(m, -math.log(m)))


@dataclass
class SweepStats:
    structure_accepted: int = 0
    structure_null: int = 0
    hmc_accepted: int = 0
    hmc_total: int = 0
    resampled: bool = False
    ess: float = 0.0


def _mutate(particle, log_weight, rng, data, prior, config, stats):
    if config.mode == "mh":
        new = mh_structure_step(rng, particle, data, prior, config)
        stats.structure_accepted += new is not particle
    else:
        proposal = propose_structure_move(rng, particle, prior, config)
        new = particle
        try:
            candidate, log_ratio = score_proposal(proposal, particle, data, prior)
        except (ArithmeticError, ValueError) as exc:
            log.debug("structure proposal failed, particle kept: %s", exc)
            candidate, log_ratio = None, 0.0
        if candidate is not None:
            new = candidate
            log_weight += log_ratio
            stats.structure_accepted += 1
        else:
            stats.structure_null += 1
    if not config.fix_params:
        for _ in range(config.hmc.transitions_per_sweep):
            moved = hmc_step(rng, new, data, prior, config)
            stats.hmc_total += 1
            stats.hmc_accepted += moved is not new
            new = moved
    return new, log_weight


def sweep(
    population: Population,
    data: Dataset,
    prior: PriorConfig,
    config: SamplerConfig,
    sweep_index: int,
    stats: SweepStats | None = None,
) -> Population:
    """Mutate every particle once, reweight (smc mode) and resample if ESS is low.

    Particle ``j`` uses the stream ``(seed, sweep_index + 1, j)``, the
    resampling step ``(seed, sweep_index + 1, M)``.
    """
    stats = stats if stats is not None else SweepStats()
    m = len(population)
    particles = []
    log_weights = np.array(population.log_weights, dtype=float)
    for j, particle in enumerate(population.particles):
        rng = _stream(config.seed, sweep_index + 1, j)
        try:
            new, log_weights[j] = _mutate(particle, log_weights[j], rng, data, prior, config, stats)
        except (ArithmeticError, ValueError) as exc:
            log.warning("particle %d kept its previous state: %s", j, exc)
            new = particle
        particles.append(new)

    if config.mode == "smc":
        with np.errstate(divide="ignore"):
            log_weights = np.log(normalized_weights(log_weights))
        stats.ess = ess(log_weights)
        if stats.ess < config.ess_threshold_fraction * m:
            idx = systematic_resample(_stream(config.seed, sweep_index + 1, m), log_weights)
            particles = [particles[i] for i in idx]
            log_weights = np.full(m, -math.log(m))
            stats.resampled = True
    else:
        stats.ess = ess(log_weights)
    return Population(tuple(particles), log_weights)


def importance_weight_prior_draws(population: Population, config: SamplerConfig) -> Population:
    """Weight prior draws by their marginal likelihood, resampling if ESS is low.

    Prior draws are an importance sample for the posterior with weights
    p(D | k, theta); the later incremental weights of smc mode assume this.
    """
    log_weights = np.array([p.log_marginal for p in population.particles])
    with np.errstate(divide="ignore"):
        log_weights = np.log(normalized_weights(log_weights))
    m = len(population)
    if ess(log_weights) < config.ess_threshold_fraction * m:
        idx = systematic_resample(_stream(config.seed, 0, m), log_weights)
        return Population(tuple(population.particles[i] for i in idx), np.full(m, -math.log(m)))
    return Population(population.particles, log_weights)


def run_sampler(
    data: Dataset,
    prior: PriorConfig,
    config: SamplerConfig,
    callback: Callable[[int, Population, SweepStats], None] | None = None,
) -> Population:
    population = init_population(None, config, prior, data)
    if config.mode == "smc":
        population = importance_weight_prior_draws(population, config)
    for t in range(config.sweep_count):
        stats = SweepStats()
        population = sweep(population, data, prior, config, t, stats)
        if callback is not None:
            callback(t, population, stats)
    return population


# ---------------------------------------------------------------------------
# Predictive mixture
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PredictiveMixture:
    """Per-query Gaussian mixture with one component per particle.

    ``means`` and ``variances`` have shape (particles, queries); ``weights`` is
    shared by every query point.
    """

    query_xs: np.ndarray
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def components(self, i: int) -> list[tuple[float, float, float]]:
        return [
            (float(w), float(m), float(v))
            for w, m, v in zip(self.weights, self.means[:, i], self.variances[:, i])
        ]

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def variance(self) -> np.ndarray:
        second = self.weights @ (self.variances + self.means**2)
        return second - self.mean() ** 2

    def quantile(self, q: float) -> np.ndarray:
        return np.array(
            [
                mixture_quantile(self.weights, self.means[:, i], self.variances[:, i], q)
                for i in range(self.query_xs.size)
            ]
        )

    def cdf(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        z = (values[None, :] - self.means) / np.sqrt(self.variances)
        return self.weights @ ndtr(z)


def predictive_mixture(population: Population, data: Dataset, x_star) -> PredictiveMixture:
    x_star = np.asarray(x_star, dtype=float).reshape(-1)
    means, variances = [], []
    for particle in population.particles:
        pred = posterior_predictive(particle.expr, particle.params, data, x_star)
        means.append(pred.mean)
        variances.append(pred.variance)
    return PredictiveMixture(x_star, population.weights, np.array(means), np.array(variances))


def mixture_quantile(weights, means, variances, q: float, tol: float = 1e-8) -> float:
    """Solve mixture CDF(v) = q by bisection on [min(mean - 8 sd), max(mean + 8 sd)]."""
    weights = np.asarray(weights, dtype=float)
    means = np.asarray(means, dtype=float)
    variances = np.asarray(variances, dtype=float)
    if not 0.0 < q < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {q}")
    weights = weights / weights.sum()
    sd = np.sqrt(variances)
    lo = float(np.min(means - 8.0 * sd))
    hi = float(np.max(means + 8.0 * sd))
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if float(weights @ ndtr((mid - means) / sd)) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def quantile_of_components(components: Sequence[tuple[float, float, float]], q: float) -> float:
    w, m, v = zip(*components)
    return mixture_quantile(w, m, v, q)
