"""Brute-force references for the structure sampler on a grammar small enough to enumerate."""

import math

import numpy as np

from gpstruct.gp import Dataset, log_marginal
from gpstruct.kernels import BaseKind, Leaf, Product, Sum, leaf_count
from gpstruct.prior import PriorConfig, RuleProbs, leaf_param_location, log_prior_structure, prior_location
from gpstruct.smc import MOVES, SamplerConfig, build_structure_move, make_particle, score_proposal


def enumerable_prior() -> PriorConfig:
    """B = {SE, Lin}, at most two leaves."""
    rules = RuleProbs(p_sum=0.2, p_prod=0.2, p_base={BaseKind.SE: 0.3, BaseKind.LIN: 0.3})
    return PriorConfig(rules=rules, max_leaves=2)


def enumerable_data(n=8, seed=11) -> Dataset:
    rng = np.random.default_rng(seed)
    xs = np.sort(rng.uniform(0, 1, n))
    ys = 0.5 * xs + 0.3 * np.sin(9 * xs) + rng.standard_normal(n)
    return Dataset(xs, (ys - ys.mean()) / ys.std())


def all_structures(prior: PriorConfig):
    kinds = prior.rules.base_kinds
    singles = [Leaf(k) for k in kinds]
    pairs = [node(a, b) for node in (Sum, Product) for a in singles for b in singles]
    return singles + (pairs if prior.max_leaves >= 2 else [])


def exact_posterior(data: Dataset, prior: PriorConfig) -> dict:
    """p(k | D) with every hyperparameter pinned at its prior location.

    The hyperparameter prior terms cancel in the fixed-parameter chain (fresh
    parameters are proposed at the same location), so the target is
    p(k) p(D | k, theta0(k)).
    """
    logp = {}
    for k in all_structures(prior):
        logp[k] = log_prior_structure(k, prior) + log_marginal(k, prior_location(k, prior), data)
    top = max(logp.values())
    z = sum(math.exp(v - top) for v in logp.values())
    return {k: math.exp(v - top) / z for k, v in logp.items()}


def transition_probabilities(expr, data: Dataset, prior: PriorConfig, config: SamplerConfig) -> dict:
    """Exact one-step transition probabilities of the fixed-parameter structure kernel.

    Sums proposal probability times acceptance over every (leaf, move, kind)
    path; rejected and null mass lands on ``expr`` itself.
    """
    current = make_particle(expr, prior_location(expr, prior), data, prior)
    q_kind = prior.rules.base_choice_probs()
    n = leaf_count(expr)
    out = {}
    for i in range(n):
        for move in MOVES:
            pm = config.move_prob(move)
            if pm == 0:
                continue
            options = [(None, 1.0)] if move == "delete" else list(q_kind.items())
            for kind, pk in options:
                fresh = None if kind is None else leaf_param_location(kind, prior)
                proposal = build_structure_move(expr, current.params, i, move, kind, fresh, prior, config)
                p_path = pm * pk / n
                candidate, log_ratio = score_proposal(proposal, current, data, prior)
                accept = 0.0 if candidate is None else min(1.0, math.exp(min(log_ratio, 0.0)))
                if candidate is not None:
                    out[candidate.expr] = out.get(candidate.expr, 0.0) + p_path * accept
                out[expr] = out.get(expr, 0.0) + p_path * (1 - accept)
    return out


def total_variation(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def batch_means_se(chain, n_batches=50) -> float:
    """Standard error of a correlated chain's mean from non-overlapping batch means."""
    chain = np.asarray(chain, dtype=float)
    size = chain.size // n_batches
    means = chain[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))

