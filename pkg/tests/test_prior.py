import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import comb

from gpstruct.errors import ConfigError, StructureError
from gpstruct.kernels import BaseKind, HyperParams, Leaf, Product, Sum, layout_of, leaf_count, param_count, render
from gpstruct.prior import (
    PriorConfig,
    RuleProbs,
    log_prior_leaf_params,
    log_prior_params,
    log_prior_structure,
    prior_location,
    sample_params,
    sample_structure,
)

from conftest import random_tree, trees

SE, LIN = Leaf(BaseKind.SE), Leaf(BaseKind.LIN)


def enumerate_trees(n_leaves, kinds=tuple(BaseKind)):
    """Every ordered binary tree with exactly ``n_leaves`` leaves."""
    if n_leaves == 1:
        return [Leaf(k) for k in kinds]
    out = []
    for left_n in range(1, n_leaves):
        for a in enumerate_trees(left_n, kinds):
            for b in enumerate_trees(n_leaves - left_n, kinds):
                out += [Sum(a, b), Product(a, b)]
    return out


def retained_mass(rules: RuleProbs, max_leaves: int) -> float:
    """P(leaf count <= cap) for the branching process: Catalan count of shapes."""
    p_branch = rules.p_sum + rules.p_prod
    p_leaf = 1 - p_branch
    return sum(comb(2 * (n - 1), n - 1) / n * p_branch ** (n - 1) * p_leaf**n for n in range(1, max_leaves + 1))


def test_rule_probs_validation():
    with pytest.raises(ConfigError):
        RuleProbs(p_sum=0.3, p_prod=0.3, p_base={k: 0.1 for k in BaseKind})  # supercritical
    with pytest.raises(ConfigError):
        RuleProbs(p_sum=0.2, p_prod=0.2, p_base={k: 0.1 for k in BaseKind})  # sums to 0.8
    with pytest.raises(ConfigError):
        PriorConfig(max_leaves=0)
    with pytest.raises(ConfigError):
        PriorConfig(param_priors={"lengthscale": (0.0, -1.0)})


def test_structure_log_prior_examples():
    cfg = PriorConfig()
    assert log_prior_structure(SE, cfg) == pytest.approx(-1.8971200, abs=1e-7)
    assert log_prior_structure(Sum(SE, LIN), cfg) == pytest.approx(math.log(0.0045), abs=1e-12)


def test_structure_log_prior_above_cap():
    with pytest.raises(StructureError):
        log_prior_structure(Sum(SE, LIN), PriorConfig(max_leaves=1))


def test_enumerated_prior_mass_at_most_one():
    cfg = PriorConfig()
    total = sum(math.exp(log_prior_structure(t, cfg)) for n in range(1, 4) for t in enumerate_trees(n))
    assert total <= 1.0
    # and equals the Catalan mass of shapes with <= 3 leaves
    assert total == pytest.approx(retained_mass(cfg.rules, 3), rel=1e-12)


def test_no_branching_gives_single_leaf():
    rules = RuleProbs(p_sum=0.0, p_prod=0.0, p_base={k: 0.25 for k in BaseKind})
    rng = np.random.default_rng(0)
    for _ in range(100):
        assert isinstance(sample_structure(rng, PriorConfig(rules=rules)), Leaf)


def test_samples_respect_cap():
    cfg = PriorConfig(max_leaves=3)
    rng = np.random.default_rng(1)
    assert all(leaf_count(sample_structure(rng, cfg)) <= 3 for _ in range(2000))


def test_single_leaf_frequency_matches_truncated_prior():
    cfg = PriorConfig()
    rng = np.random.default_rng(2)
    n = 10_000
    draws = [sample_structure(rng, cfg) for _ in range(n)]
    z = retained_mass(cfg.rules, cfg.max_leaves)
    for kind in BaseKind:
        p = 0.15 / z
        freq = sum(d == Leaf(kind) for d in draws) / n
        assert abs(freq - p) < 3 * math.sqrt(p * (1 - p) / n)


def test_small_tree_frequencies_proportional_to_density():
    cfg = PriorConfig()
    rng = np.random.default_rng(3)
    n = 10_000
    counts = {}
    for _ in range(n):
        t = sample_structure(rng, cfg)
        if leaf_count(t) <= 2:
            counts[t] = counts.get(t, 0) + 1
    z = retained_mass(cfg.rules, cfg.max_leaves)
    for t in enumerate_trees(1) + enumerate_trees(2):
        p = math.exp(log_prior_structure(t, cfg)) / z
        assert abs(counts.get(t, 0) / n - p) < 3 * math.sqrt(p * (1 - p) / n), render(t)


def test_retry_exhaustion_is_a_config_error(monkeypatch):
    import gpstruct.prior as prior_mod

    def always_too_large(rng, rules, max_leaves):
        raise prior_mod._TooLarge()

    monkeypatch.setattr(prior_mod, "_draw_tree", always_too_large)
    with pytest.raises(ConfigError):
        sample_structure(np.random.default_rng(0), PriorConfig())


# --- hyperparameters --------------------------------------------------------


def test_param_vector_length():
    rng = np.random.default_rng(4)
    cfg = PriorConfig()
    for _ in range(100):
        expr = random_tree(rng, int(rng.integers(1, 8)))
        assert sample_params(rng, expr, cfg).values.size == param_count(expr)


def test_lengthscale_moments():
    cfg = PriorConfig()
    rng = np.random.default_rng(5)
    v = np.array([sample_params(rng, SE, cfg).values[0] for _ in range(10_000)])
    n = v.size
    assert abs(v.mean()) < 3 / math.sqrt(n)
    # standard error of the sample standard deviation of a normal: sigma / sqrt(2(n-1))
    assert abs(v.std(ddof=1) - 1.0) < 3 / math.sqrt(2 * (n - 1))


def test_sampling_is_deterministic():
    expr = Product(Sum(SE, LIN), Leaf(BaseKind.PER))
    a = sample_params(np.random.default_rng(9), expr, PriorConfig())
    b = sample_params(np.random.default_rng(9), expr, PriorConfig())
    assert a == b


def test_density_at_location_with_unit_scale():
    cfg = PriorConfig()
    params = prior_location(SE, cfg)
    # lengthscale, amplitude and noise entries all have scale 1
    assert log_prior_params(SE, params, cfg) == pytest.approx(-1.5 * math.log(2 * math.pi), abs=1e-14)


def test_density_integrates_to_one_by_importance_sampling():
    # the lengthscale entry alone, integrated against a wider N(0, 2^2) proposal
    cfg = PriorConfig()
    rng = np.random.default_rng(6)
    xs = rng.normal(0.0, 2.0, 50_000)
    log_q = -0.5 * (xs / 2.0) ** 2 - math.log(2.0 * math.sqrt(2 * math.pi))
    amplitude_term = -0.5 * math.log(2 * math.pi)  # amplitude entry held at its location
    log_p = np.array([log_prior_leaf_params(BaseKind.SE, [x, 0.0], cfg) for x in xs]) - amplitude_term
    w = np.exp(log_p - log_q)
    assert abs(w.mean() - 1.0) < 3 * w.std() / math.sqrt(w.size)


def test_sampled_params_have_finite_density():
    cfg = PriorConfig()
    expr = Sum(Product(SE, Leaf(BaseKind.RQ)), Sum(LIN, Leaf(BaseKind.PER)))
    for seed in range(1000):
        assert math.isfinite(log_prior_params(expr, sample_params(np.random.default_rng(seed), expr, cfg), cfg))


@settings(max_examples=60, deadline=None)
@given(expr=trees(6), seed=st.integers(0, 2**16))
def test_separability_is_exact(expr, seed):
    cfg = PriorConfig()
    params = sample_params(np.random.default_rng(seed), expr, cfg)
    total = 0.0
    for slot in layout_of(expr):
        total += log_prior_leaf_params(slot.kind, params.values[slot.start : slot.stop], cfg)
    mu, s = cfg.role_prior("noise")
    total += -0.5 * ((params.values[-1] - mu) / s) ** 2 - math.log(s) - 0.5 * math.log(2 * math.pi)
    assert log_prior_params(expr, params, cfg) == total


def test_layout_mismatch():
    cfg = PriorConfig()
    with pytest.raises(StructureError):
        log_prior_params(SE, HyperParams.for_expr(LIN, [0.0, 0.0, 0.0]), cfg)
