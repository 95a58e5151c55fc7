"""Compositional kernel expressions over the base kernels Lin, SE, Per and RQ.

A structure is a binary tree of :class:`Leaf`, :class:`Sum` and :class:`Product`
nodes.  Hyperparameters live in a flat unconstrained vector; leaves own
consecutive slices of it in depth-first, left-to-right order and the last
entry is the log noise standard deviation.

Base forms (constrained parameters)::

    SE : s2 * exp(-d^2 / (2 l^2))
    Per: s2 * exp(-2 sin^2(pi d / p) / l^2)
    Lin: s2 * (x - c) (x' - c)
    RQ : s2 * (1 + d^2 / (2 a l^2))^(-a)

with ``s2 = exp(2 log sigma)``.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass
from typing import Iterator, Union

import numpy as np

from .errors import KernelSyntaxError, StructureError, UnknownKernelError

MAX_LEAVES = 16


class BaseKind(enum.Enum):
    LIN = "Lin"
    SE = "SE"
    PER = "Per"
    RQ = "RQ"

    @property
    def roles(self) -> tuple[str, ...]:
        return ROLES[self]

    @property
    def arity(self) -> int:
        return len(ROLES[self])


ROLES: dict[BaseKind, tuple[str, ...]] = {
    BaseKind.LIN: ("offset", "amplitude"),
    BaseKind.SE: ("lengthscale", "amplitude"),
    BaseKind.PER: ("lengthscale", "period", "amplitude"),
    BaseKind.RQ: ("lengthscale", "shape", "amplitude"),
}

# Roles stored as log-values; everything else is used as-is.
LOG_ROLES = frozenset({"lengthscale", "amplitude", "period", "shape", "noise"})


@dataclass(frozen=True)
class Leaf:
    kind: BaseKind


@dataclass(frozen=True)
class Sum:
    left: "KernelExpr"
    right: "KernelExpr"


@dataclass(frozen=True)
class Product:
    left: "KernelExpr"
    right: "KernelExpr"


KernelExpr = Union[Leaf, Sum, Product]


def leaves(expr: KernelExpr) -> list[Leaf]:
    """Leaves in depth-first, left-to-right order."""
    return [leaf for _, leaf in iter_leaves(expr)]


def iter_leaves(expr: KernelExpr, path: str = "") -> Iterator[tuple[str, Leaf]]:
    """Yield ``(path, leaf)`` pairs; a path is a string over ``L``/``R``."""
    if isinstance(expr, Leaf):
        yield path, expr
    else:
        yield from iter_leaves(expr.left, path + "L")
        yield from iter_leaves(expr.right, path + "R")


def leaf_count(expr: KernelExpr) -> int:
    if isinstance(expr, Leaf):
        return 1
    return leaf_count(expr.left) + leaf_count(expr.right)


def replace_leaf(expr: KernelExpr, index: int, new: KernelExpr) -> KernelExpr:
    """Return ``expr`` with its ``index``-th leaf replaced by the subtree ``new``."""
    counter = [index]

    def go(node):
        if isinstance(node, Leaf):
            hit = counter[0] == 0
            counter[0] -= 1
            return new if hit else node
        return type(node)(go(node.left), go(node.right))

    if not 0 <= index < leaf_count(expr):
        raise IndexError(f"leaf index {index} out of range")
    return go(expr)


def delete_leaf(expr: KernelExpr, index: int) -> KernelExpr:
    """Remove the ``index``-th leaf by replacing its parent with the sibling subtree."""
    if isinstance(expr, Leaf):
        raise StructureError("cannot delete the only leaf of a kernel")
    counter = [index]

    def go(node):
        # a deleted leaf comes back as None
        if isinstance(node, Leaf):
            hit = counter[0] == 0
            counter[0] -= 1
            return None if hit else node
        left = go(node.left)
        if left is None:
            return node.right
        right = go(node.right) if counter[0] >= 0 else node.right
        if right is None:
            return left
        return type(node)(left, right)

    if not 0 <= index < leaf_count(expr):
        raise IndexError(f"leaf index {index} out of range")
    return go(expr)


# ---------------------------------------------------------------------------
# Hyperparameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LeafSlot:
    path: str
    kind: BaseKind
    start: int

    @property
    def stop(self) -> int:
        return self.start + self.kind.arity


def layout_of(expr: KernelExpr) -> tuple[LeafSlot, ...]:
    slots = []
    pos = 0
    for path, leaf in iter_leaves(expr):
        slots.append(LeafSlot(path, leaf.kind, pos))
        pos += leaf.kind.arity
    return tuple(slots)


def param_count(expr: KernelExpr) -> int:
    return sum(leaf.kind.arity for leaf in leaves(expr)) + 1


@dataclass(frozen=True, eq=False)
class HyperParams:
    """Unconstrained hyperparameter vector plus the leaf layout it was built for."""

    values: np.ndarray
    layout: tuple[LeafSlot, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        expected = sum(s.kind.arity for s in self.layout) + 1
        if values.shape != (expected,):
            raise StructureError(f"expected {expected} hyperparameters, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("hyperparameters must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def for_expr(cls, expr: KernelExpr, values) -> "HyperParams":
        return cls(np.array(values, dtype=float), layout_of(expr))

    @property
    def log_noise(self) -> float:
        return float(self.values[-1])

    @property
    def noise_variance(self) -> float:
        return math.exp(2.0 * self.values[-1])

    def with_values(self, values) -> "HyperParams":
        return HyperParams(np.array(values, dtype=float), self.layout)

    def roles(self) -> list[tuple[str, str]]:
        """``(path, role)`` for every entry, the noise entry last."""
        out = [(slot.path, role) for slot in self.layout for role in slot.kind.roles]
        out.append(("", "noise"))
        return out

    def leaf_values(self, index: int) -> np.ndarray:
        slot = self.layout[index]
        return self.values[slot.start : slot.stop]

    def constrained(self) -> dict[str, float]:
        """Constrained-space values keyed ``"<path>/<role>"``; the root path is ``root``."""
        out = {}
        for (path, role), v in zip(self.roles(), self.values):
            key = "noise" if role == "noise" else f"root{'.' + path if path else ''}/{role}"
            out[key] = math.exp(v) if role in LOG_ROLES else float(v)
        return out

    def __eq__(self, other):
        if not isinstance(other, HyperParams):
            return NotImplemented
        return self.layout == other.layout and np.array_equal(self.values, other.values)

    __hash__ = None


def check_layout(expr: KernelExpr, params: HyperParams) -> None:
    if params.layout != layout_of(expr):
        raise StructureError("hyperparameter layout does not match kernel structure")


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def _base(kind: BaseKind, raw, x1, x2, with_grad: bool = False):
    """Value (and unconstrained gradients) of one base kernel on broadcast inputs."""
    s2 = math.exp(2.0 * float(raw[-1]))
    if kind is BaseKind.LIN:
        c = raw[0]
        a, b = x1 - c, x2 - c
        k = s2 * (a * b)
        if not with_grad:
            return k
        return k, [-s2 * (a + b), 2.0 * k]

    d = np.abs(x1 - x2)
    ell = np.exp(raw[0])
    if kind is BaseKind.SE:
        r2 = (d / ell) ** 2
        k = s2 * np.exp(-0.5 * r2)
        if not with_grad:
            return k
        return k, [k * r2, 2.0 * k]

    if kind is BaseKind.PER:
        period = np.exp(raw[1])
        u = np.pi * d / period
        sn = np.sin(u)
        k = s2 * np.exp(-2.0 * sn**2 / ell**2)
        if not with_grad:
            return k
        return k, [k * 4.0 * sn**2 / ell**2, k * 2.0 * u * np.sin(2.0 * u) / ell**2, 2.0 * k]

    if kind is BaseKind.RQ:
        alpha = np.exp(raw[1])
        r = d**2 / (2.0 * alpha * ell**2)
        base = 1.0 + r
        k = s2 * base ** (-alpha)
        if not with_grad:
            return k
        return k, [k * d**2 / (ell**2 * base), k * alpha * (r / base - np.log1p(r)), 2.0 * k]

    raise StructureError(f"unknown base kind {kind!r}")


def eval_base(kind: BaseKind, constrained_params, x: float, x_prime: float) -> float:
    """Evaluate a base kernel from constrained parameters in ``kind.roles`` order."""
    params = tuple(float(p) for p in constrained_params)
    if len(params) != kind.arity:
        raise StructureError(f"{kind.value} takes {kind.arity} parameters, got {len(params)}")
    if not all(math.isfinite(v) for v in (*params, x, x_prime)):
        raise ValueError("non-finite kernel input")
    raw = []
    for role, v in zip(kind.roles, params):
        if role == "offset":
            raw.append(v)
        elif v <= 0:
            raise ValueError(f"{role} must be positive, got {v}")
        else:
            raw.append(math.log(v))
    if kind is not BaseKind.LIN:
        # keep s2 exact: log then exp(2 log) could round
        s2 = params[-1] ** 2
        return s2 * float(_base(kind, np.array(raw[:-1] + [0.0]), float(x), float(x_prime)))
    return float(_base(kind, np.array(raw), float(x), float(x_prime)))


def _evaluate(expr, values, x1, x2, with_grad):
    with np.errstate(over="ignore", divide="ignore", invalid="ignore", under="ignore"):
        return _evaluate_tree(expr, values, x1, x2, with_grad)


def _evaluate_tree(expr, values, x1, x2, with_grad):
    pos = 0

    def go(node):
        nonlocal pos
        if isinstance(node, Leaf):
            raw = values[pos : pos + node.kind.arity]
            pos += node.kind.arity
            if with_grad:
                return _base(node.kind, raw, x1, x2, True)
            return _base(node.kind, raw, x1, x2), None
        kl, gl = go(node.left)
        kr, gr = go(node.right)
        if isinstance(node, Sum):
            return kl + kr, (gl + gr if with_grad else None)
        if not with_grad:
            return kl * kr, None
        return kl * kr, [g * kr for g in gl] + [kl * g for g in gr]

    return go(expr)


def eval_kernel(expr: KernelExpr, params: HyperParams, x: float, x_prime: float) -> float:
    """k(x, x') for a composite kernel, excluding observation noise."""
    check_layout(expr, params)
    if not (math.isfinite(x) and math.isfinite(x_prime)):
        raise ValueError("non-finite kernel input")
    k, _ = _evaluate(expr, params.values, float(x), float(x_prime), False)
    return float(k)


@functools.lru_cache(maxsize=16)
def lower_pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Row/column indices of the lower triangle (diagonal included)."""
    rows, cols = np.tril_indices(n)
    rows.setflags(write=False)
    cols.setflags(write=False)
    return rows, cols


def matrix_from_pairs(values, n: int) -> np.ndarray:
    rows, cols = lower_pairs(n)
    out = np.empty((n, n))
    out[rows, cols] = values
    out[cols, rows] = values
    return out


def _as_inputs(xs) -> np.ndarray:
    xs = np.asarray(xs, dtype=float).reshape(-1)
    if xs.size == 0:
        raise ValueError("need at least one input point")
    if not np.all(np.isfinite(xs)):
        raise ValueError("non-finite kernel input")
    return xs


def gram_pairs(expr: KernelExpr, params: HyperParams, xs, with_grad: bool = False):
    """Kernel values (and gradients) on the lower-triangle pairs of ``xs``.

    Each base kernel is evaluated once per unordered pair, so mirroring the
    result gives an exactly symmetric matrix.
    """
    check_layout(expr, params)
    xs = _as_inputs(xs)
    rows, cols = lower_pairs(xs.size)
    k, grads = _evaluate(expr, params.values, xs[rows], xs[cols], with_grad)
    shape = rows.shape
    k = np.broadcast_to(k, shape)
    if with_grad:
        grads = [np.broadcast_to(g, shape) for g in grads]
    return k, grads


def gram_matrix(expr: KernelExpr, params: HyperParams, xs) -> np.ndarray:
    xs = _as_inputs(xs)
    k, _ = gram_pairs(expr, params, xs)
    return matrix_from_pairs(k, xs.size)


def cross_covariance(expr: KernelExpr, params: HyperParams, xs_a, xs_b) -> np.ndarray:
    """Matrix ``K[i, j] = k(a_i, b_j)``."""
    check_layout(expr, params)
    a, b = _as_inputs(xs_a), _as_inputs(xs_b)
    k, _ = _evaluate(expr, params.values, a[:, None], b[None, :], False)
    return np.array(np.broadcast_to(k, (a.size, b.size)))


def kernel_diag(expr: KernelExpr, params: HyperParams, xs) -> np.ndarray:
    check_layout(expr, params)
    xs = _as_inputs(xs)
    k, _ = _evaluate(expr, params.values, xs, xs, False)
    return np.array(np.broadcast_to(k, xs.shape))


def grad_gram(expr: KernelExpr, params: HyperParams, xs) -> list[np.ndarray]:
    """dK/d(values[j]) for every entry, including a zero matrix for the noise entry."""
    xs = _as_inputs(xs)
    _, grads = gram_pairs(expr, params, xs, with_grad=True)
    n = xs.size
    return [matrix_from_pairs(g, n) for g in grads] + [np.zeros((n, n))]


# ---------------------------------------------------------------------------
# Text form
# ---------------------------------------------------------------------------

_TIMES = "×"


def render(expr: KernelExpr) -> str:
    """Infix text; round-trips through :func:`parse`.

    >>> render(Product(Sum(Leaf(BaseKind.LIN), Leaf(BaseKind.PER)), Leaf(BaseKind.SE)))
    '(Lin + Per) × SE'
    """
    if isinstance(expr, Leaf):
        return expr.kind.value
    left, right = render(expr.left), render(expr.right)
    if isinstance(expr, Sum):
        if isinstance(expr.right, Sum):
            right = f"({right})"
        return f"{left} + {right}"
    if isinstance(expr.left, Sum):
        left = f"({left})"
    if not isinstance(expr.right, Leaf):
        right = f"({right})"
    return f"{left} {_TIMES} {right}"


_LEAF_NAMES = {kind.value.lower(): kind for kind in BaseKind}


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch.isspace():
            i += 1
        elif ch in "+()":
            tokens.append((ch, ch, i))
            i += 1
        elif ch in "*×":
            tokens.append(("*", ch, i))
            i += 1
        elif ch.isalpha():
            j = i
            while j < len(text) and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(("name", text[i:j], i))
            i = j
        else:
            raise KernelSyntaxError(f"unexpected character {ch!r}", i)
    tokens.append(("end", "", len(text)))
    return tokens


def parse(text: str) -> KernelExpr:
    """Parse the :func:`render` grammar; ``*`` and ``×`` both mean product.

    Products bind tighter than sums and both associate to the left.
    """
    tokens = _tokenize(text)
    pos = 0

    def peek():
        return tokens[pos]

    def take(kind):
        nonlocal pos
        tok = tokens[pos]
        if tok[0] != kind:
            what = "end of input" if tok[0] == "end" else repr(tok[1])
            raise KernelSyntaxError(f"expected {kind!r}, found {what}", tok[2])
        pos += 1
        return tok

    def atom():
        nonlocal pos
        tok = peek()
        if tok[0] == "(":
            pos += 1
            node = expr_()
            take(")")
            return node
        if tok[0] == "name":
            pos += 1
            kind = _LEAF_NAMES.get(tok[1].lower())
            if kind is None:
                raise UnknownKernelError(f"unknown base kernel {tok[1]!r}", tok[2])
            return Leaf(kind)
        what = "end of input" if tok[0] == "end" else repr(tok[1])
        raise KernelSyntaxError(f"expected a kernel, found {what}", tok[2])

    def term():
        nonlocal pos
        node = atom()
        while peek()[0] == "*":
            pos += 1
            node = Product(node, atom())
        return node

    def expr_():
        nonlocal pos
        node = term()
        while peek()[0] == "+":
            pos += 1
            node = Sum(node, term())
        return node

    result = expr_()
    take("end")
    return result
