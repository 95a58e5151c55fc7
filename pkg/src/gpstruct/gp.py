"""Exact GP regression for a fixed kernel: evidence, its gradient, and predictions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

from .errors import DataError, NumericalDegeneracyError
from .kernels import (
    HyperParams,
    KernelExpr,
    matrix_from_pairs,
    cross_covariance,
    gram_matrix,
    gram_pairs,
    kernel_diag,
    lower_pairs,
)

# The first rung is jitter-free so results match the exact density whenever
# K + noise is already positive definite.
JITTER_LADDER = (0.0, 1e-8, 1e-6, 1e-4)
VARIANCE_FLOOR = 1e-12
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class AffineTransform:
    """``standardized = (raw - shift) / scale``."""

    scale: float = 1.0
    shift: float = 0.0

    def forward(self, raw):
        return (np.asarray(raw, dtype=float) - self.shift) / self.scale

    def inverse(self, standardized):
        return np.asarray(standardized, dtype=float) * self.scale + self.shift


@dataclass(frozen=True, eq=False)
class Dataset:
    xs: np.ndarray
    ys: np.ndarray
    x_transform: AffineTransform = AffineTransform()
    y_transform: AffineTransform = AffineTransform()

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float).reshape(-1)
        ys = np.asarray(self.ys, dtype=float).reshape(-1)
        if xs.size < 1 or xs.shape != ys.shape:
            raise DataError(f"need matching non-empty x and y, got {xs.size} and {ys.size}")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
            raise DataError("data must be finite")
        xs.setflags(write=False)
        ys.setflags(write=False)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    def __len__(self):
        return self.xs.size


@dataclass(frozen=True)
class GaussianPrediction:
    """Per-query predictive means and variances of y* (noise included)."""

    mean: np.ndarray
    variance: np.ndarray

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)


@dataclass(frozen=True)
class Factorization:
    chol: np.ndarray  # lower-triangular factor of K + (noise + jitter) I
    alpha: np.ndarray  # (K_y)^-1 y
    jitter: float
    log_marginal: float


def _factorize_matrix(k_y: np.ndarray, ys: np.ndarray) -> Factorization:
    n = ys.size
    jitter = 0.0
    for jitter in JITTER_LADDER:
        try:
            chol = linalg.cholesky(k_y + jitter * np.eye(n), lower=True, check_finite=True)
        except (linalg.LinAlgError, ValueError):
            continue
        alpha = linalg.cho_solve((chol, True), ys)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        lml = -0.5 * float(ys @ alpha) - 0.5 * logdet - 0.5 * n * _LOG_2PI
        if math.isfinite(lml):
            return Factorization(chol, alpha, jitter, lml)
    raise NumericalDegeneracyError("Cholesky factorization failed", jitter)


def factorize(expr: KernelExpr, params: HyperParams, data: Dataset) -> Factorization:
    """Cholesky-factorize the noisy Gram matrix, escalating jitter as needed."""
    k_y = gram_matrix(expr, params, data.xs)
    k_y[np.diag_indices_from(k_y)] += params.noise_variance
    return _factorize_matrix(k_y, data.ys)


def log_marginal(expr: KernelExpr, params: HyperParams, data: Dataset) -> float:
    """log N(y | 0, K + noise^2 I)."""
    return factorize(expr, params, data).log_marginal


def log_marginal_and_grad(expr: KernelExpr, params: HyperParams, data: Dataset) -> tuple[float, np.ndarray]:
    """Evidence and its gradient 0.5 tr((a a^T - K_y^-1) dK_y/dv) for every entry v."""
    n = len(data)
    k_pairs, dk_pairs = gram_pairs(expr, params, data.xs, with_grad=True)
    noise_var = params.noise_variance
    k_y = matrix_from_pairs(k_pairs, n)
    k_y[np.diag_indices(n)] += noise_var
    fac = _factorize_matrix(k_y, data.ys)
    k_inv, info = lapack.dpotri(fac.chol, lower=1)  # lower triangle only
    if info != 0:
        raise NumericalDegeneracyError("inverting the Cholesky factor failed", fac.jitter)
    rows, cols = lower_pairs(n)
    # W = a a^T - K_y^-1 on lower pairs, off-diagonal pairs counted twice
    w = fac.alpha[rows] * fac.alpha[cols] - k_inv[rows, cols]
    w_diag = w[rows == cols]
    w = w * np.where(rows == cols, 1.0, 2.0)
    grad = np.empty(len(params.values))
    for j, dk in enumerate(dk_pairs):
        grad[j] = 0.5 * float(w @ dk)
    grad[-1] = float(np.sum(w_diag)) * noise_var
    return fac.log_marginal, grad


def grad_log_marginal(expr: KernelExpr, params: HyperParams, data: Dataset) -> np.ndarray:
    return log_marginal_and_grad(expr, params, data)[1]


def posterior_predictive(
    expr: KernelExpr,
    params: HyperParams,
    data: Dataset,
    x_star,
    fac: Factorization | None = None,
) -> GaussianPrediction:
    """Predictive distribution of noisy observations y* at ``x_star``."""
    x_star = np.asarray(x_star, dtype=float).reshape(-1)
    if fac is None:
        fac = factorize(expr, params, data)
    k_star = cross_covariance(expr, params, data.xs, x_star)
    mean = k_star.T @ fac.alpha
    v = linalg.solve_triangular(fac.chol, k_star, lower=True)
    var = kernel_diag(expr, params, x_star) + params.noise_variance - np.sum(v**2, axis=0)
    return GaussianPrediction(mean, np.maximum(var, VARIANCE_FLOOR))
