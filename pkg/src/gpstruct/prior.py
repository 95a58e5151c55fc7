"""Grammar prior over kernel structures and the separable hyperparameter prior."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, StructureError
from .kernels import (
    MAX_LEAVES,
    BaseKind,
    HyperParams,
    KernelExpr,
    Leaf,
    Product,
    Sum,
    check_layout,
    layout_of,
    leaf_count,
)

MAX_STRUCTURE_RETRIES = 10_000


def _default_base_probs() -> dict[BaseKind, float]:
    return {kind: 0.15 for kind in BaseKind}


@dataclass(frozen=True)
class RuleProbs:
    """Probabilities of the productions s -> s+s, s -> s*s and s -> b."""

    p_sum: float = 0.2
    p_prod: float = 0.2
    p_base: dict[BaseKind, float] = field(default_factory=_default_base_probs)

    def __post_init__(self):
        probs = [self.p_sum, self.p_prod, *self.p_base.values()]
        if any(p < 0 or not math.isfinite(p) for p in probs):
            raise ConfigError("rule probabilities must be finite and non-negative")
        if abs(sum(probs) - 1.0) > 1e-12:
            raise ConfigError(f"rule probabilities sum to {sum(probs)!r}, not 1")
        if not 2.0 * (self.p_sum + self.p_prod) < 1.0:
            raise ConfigError("grammar must be subcritical: 2 (p_sum + p_prod) < 1")
        if sum(self.p_base.values()) <= 0:
            raise ConfigError("at least one base kernel needs positive probability")

    @property
    def base_kinds(self) -> list[BaseKind]:
        """Kinds with positive probability, in enum order."""
        return [k for k in BaseKind if self.p_base.get(k, 0.0) > 0]

    def base_choice_probs(self) -> dict[BaseKind, float]:
        """p_base renormalized over the kinds that can occur."""
        total = sum(self.p_base.get(k, 0.0) for k in self.base_kinds)
        return {k: self.p_base[k] / total for k in self.base_kinds}


# (location, scale) of the Gaussian on each unconstrained entry, by role.
DEFAULT_PARAM_PRIORS: dict[str, tuple[float, float]] = {
    "lengthscale": (0.0, 1.0),
    "amplitude": (0.0, 1.0),
    "period": (0.0, 1.0),
    "shape": (0.0, 1.0),
    "offset": (0.0, 2.0),
    "noise": (-2.0, 1.0),
}


@dataclass(frozen=True)
class PriorConfig:
    rules: RuleProbs = field(default_factory=RuleProbs)
    max_leaves: int = MAX_LEAVES
    param_priors: dict[str, tuple[float, float]] = field(default_factory=lambda: dict(DEFAULT_PARAM_PRIORS))

    def __post_init__(self):
        if self.max_leaves < 1:
            raise ConfigError("max_leaves must be at least 1")
        merged = dict(DEFAULT_PARAM_PRIORS)
        merged.update({k: (float(v[0]), float(v[1])) for k, v in self.param_priors.items()})
        unknown = set(merged) - set(DEFAULT_PARAM_PRIORS)
        if unknown:
            raise ConfigError(f"unknown hyperparameter roles: {sorted(unknown)}")
        if any(scale <= 0 for _, scale in merged.values()):
            raise ConfigError("prior scales must be positive")
        object.__setattr__(self, "param_priors", merged)

    def role_prior(self, role: str) -> tuple[float, float]:
        return self.param_priors[role]


# ---------------------------------------------------------------------------
# Structure prior
# ---------------------------------------------------------------------------


class _TooLarge(Exception):
    pass


def _draw_tree(rng: np.random.Generator, rules: RuleProbs, max_leaves: int) -> KernelExpr:
    kinds = list(rules.p_base)
    probs = np.array([rules.p_sum, rules.p_prod] + [rules.p_base[k] for k in kinds])
    # Every pending non-terminal yields at least one leaf, so abort early
    # once leaves + pending would exceed the cap.
    state = {"leaves": 0, "pending": 1}

    def expand():
        choice = rng.choice(len(probs), p=probs)
        state["pending"] -= 1
        if choice < 2:
            state["pending"] += 2
            if state["leaves"] + state["pending"] > max_leaves:
                raise _TooLarge
            left = expand()
            right = expand()
            return Sum(left, right) if choice == 0 else Product(left, right)
        state["leaves"] += 1
        return Leaf(kinds[choice - 2])

    return expand()


def sample_structure(rng: np.random.Generator, config: PriorConfig) -> KernelExpr:
    """Draw a tree from the grammar, rejecting draws above ``max_leaves``."""
    for _ in range(MAX_STRUCTURE_RETRIES):
        try:
            return _draw_tree(rng, config.rules, config.max_leaves)
        except _TooLarge:
            continue
    raise ConfigError(f"no structure within {config.max_leaves} leaves after {MAX_STRUCTURE_RETRIES} draws")


def log_prior_structure(expr: KernelExpr, config: PriorConfig) -> float:
    """Log probability of the tree's derivation; not renormalized for the leaf cap."""
    if leaf_count(expr) > config.max_leaves:
        raise StructureError(f"structure has more than {config.max_leaves} leaves")
    rules = config.rules

    def go(node) -> float:
        if isinstance(node, Leaf):
            p = rules.p_base.get(node.kind, 0.0)
            return math.log(p) if p > 0 else -math.inf
        p = rules.p_sum if isinstance(node, Sum) else rules.p_prod
        head = math.log(p) if p > 0 else -math.inf
        return head + go(node.left) + go(node.right)

    return go(expr)


# ---------------------------------------------------------------------------
# Hyperparameter prior
# ---------------------------------------------------------------------------


def _role_vectors(roles: list[str], config: PriorConfig) -> tuple[np.ndarray, np.ndarray]:
    loc = np.array([config.param_priors[r][0] for r in roles])
    scale = np.array([config.param_priors[r][1] for r in roles])
    return loc, scale


def leaf_roles(kind: BaseKind) -> list[str]:
    return list(kind.roles)


def sample_leaf_params(rng: np.random.Generator, kind: BaseKind, config: PriorConfig) -> np.ndarray:
    loc, scale = _role_vectors(leaf_roles(kind), config)
    return loc + scale * rng.standard_normal(loc.size)


def leaf_param_location(kind: BaseKind, config: PriorConfig) -> np.ndarray:
    return _role_vectors(leaf_roles(kind), config)[0]


def _gaussian_logpdf(x, loc, scale) -> float:
    z = (np.asarray(x) - loc) / scale
    return float(np.sum(-0.5 * z**2 - np.log(scale) - 0.5 * math.log(2.0 * math.pi)))


def log_prior_leaf_params(kind: BaseKind, values, config: PriorConfig) -> float:
    loc, scale = _role_vectors(leaf_roles(kind), config)
    return _gaussian_logpdf(values, loc, scale)


def _all_roles(params_or_expr) -> list[str]:
    layout = params_or_expr.layout if isinstance(params_or_expr, HyperParams) else layout_of(params_or_expr)
    return [role for slot in layout for role in slot.kind.roles] + ["noise"]


def sample_params(rng: np.random.Generator, expr: KernelExpr, config: PriorConfig) -> HyperParams:
    loc, scale = _role_vectors(_all_roles(expr), config)
    return HyperParams(loc + scale * rng.standard_normal(loc.size), layout_of(expr))


def prior_location(expr: KernelExpr, config: PriorConfig) -> HyperParams:
    """Hyperparameters with every entry at its prior location."""
    return HyperParams(_role_vectors(_all_roles(expr), config)[0], layout_of(expr))


def log_prior_params(expr: KernelExpr, params: HyperParams, config: PriorConfig) -> float:
    """Sum of independent Gaussian log densities, accumulated leaf by leaf."""
    check_layout(expr, params)
    total = 0.0
    for i, slot in enumerate(params.layout):
        total += log_prior_leaf_params(slot.kind, params.leaf_values(i), config)
    loc, scale = config.param_priors["noise"]
    return total + _gaussian_logpdf(params.values[-1], loc, scale)


def grad_log_prior_params(params: HyperParams, config: PriorConfig) -> np.ndarray:
    loc, scale = _role_vectors(_all_roles(params), config)
    return -(params.values - loc) / scale**2
