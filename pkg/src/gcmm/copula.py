"""Gaussian copula numerics: correlation handling, log-densities, sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular

from .marginal import norm_cdf, norm_ppf

__all__ = [
    "CorrelationMatrix",
    "GaussianizedPoint",
    "correlation_from_weighted_scatter",
    "log_copula_density",
    "log_component_density",
    "gaussianize_point",
    "sample_copula",
    "copula_weighted_objective",
]

_LOG_2PI = math.log(2.0 * math.pi)


class SingularCorrelationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    """Correlation matrix stored with its lower Cholesky factor."""

    matrix: np.ndarray
    lower_cholesky: np.ndarray = field(init=False, repr=False)
    log_det: float = field(init=False)

    def __post_init__(self):
        p = np.array(self.matrix, dtype=float, copy=True)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ValueError("correlation matrix must be square")
        if not np.all(np.isfinite(p)):
            raise ValueError("correlation matrix contains non-finite entries")
        if not np.array_equal(p, p.T):
            if np.max(np.abs(p - p.T)) > 1e-10:
                raise ValueError("correlation matrix must be symmetric")
            p = 0.5 * (p + p.T)
        if np.max(np.abs(np.diag(p) - 1.0)) > 1e-10:
            raise ValueError("correlation matrix must have unit diagonal")
        try:
            low = cholesky(p, lower=True)
        except LinAlgError as exc:
            raise SingularCorrelationError("correlation matrix is not positive definite") from exc
        diag = np.diag(low)
        if not np.all(diag > 0):
            raise SingularCorrelationError("correlation matrix is not positive definite")
        p.setflags(write=False)
        low.setflags(write=False)
        object.__setattr__(self, "matrix", p)
        object.__setattr__(self, "lower_cholesky", low)
        object.__setattr__(self, "log_det", float(2.0 * np.sum(np.log(diag))))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def identity(cls, dim: int) -> "CorrelationMatrix":
        return cls(np.eye(dim))

    def quad_form(self, y):
        """``y^T P^{-1} y`` for each row of ``y``."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        v = solve_triangular(self.lower_cholesky, y.T, lower=True)
        return np.sum(v * v, axis=0)


@dataclass(frozen=True)
class GaussianizedPoint:
    """Normal-scores coordinates of one observation under one component.

    Attributes
    ----------
    y : ndarray
        ``Psi^{-1}(F_i(x_i))`` per dimension.
    log_marginal_density_sum : float
        ``sum_i log f_i(x_i)``.
    log_normal_pdf_sum : float
        ``sum_i log psi(y_i)``.
    """

    y: np.ndarray
    log_marginal_density_sum: float
    log_normal_pdf_sum: float


def gaussianize_point(x, cdfs: Sequence, logpdfs: Sequence) -> GaussianizedPoint:
    """Build a :class:`GaussianizedPoint` from per-dimension cdf/logpdf callables."""
    x = np.asarray(x, dtype=float)
    y = np.array([norm_ppf(cdf(xi)) for cdf, xi in zip(cdfs, x)], dtype=float)
    lz = float(sum(lp(xi) for lp, xi in zip(logpdfs, x)))
    lpsi = float(np.sum(-0.5 * y * y - 0.5 * _LOG_2PI))
    if not (np.all(np.isfinite(y)) and math.isfinite(lz)):
        raise ValueError("gaussianized point is not finite")
    return GaussianizedPoint(y, lz, lpsi)


def correlation_from_weighted_scatter(points, weights, ridge: float = 0.0) -> CorrelationMatrix:
    """Weighted second-moment matrix of normal scores rescaled to a correlation.

    Computes ``S = sum_n w_n y_n y_n^T / sum_n w_n``, adds ``ridge * I`` and
    returns ``diag(S)^{-1/2} S diag(S)^{-1/2}``.

    Raises
    ------
    ValueError
        If the total weight is not positive or the regularized scatter is
        singular.
    """
    y = np.atleast_2d(np.asarray(points, dtype=float))
    w = np.asarray(weights, dtype=float).ravel()
    if y.shape[0] != w.size:
        raise ValueError("points and weights differ in length")
    total = float(w.sum())
    if not total > 0:
        raise ValueError("total weight must be positive")
    s = (y * w[:, None]).T @ y / total
    s = 0.5 * (s + s.T)
    if ridge:
        s = s + ridge * np.eye(s.shape[0])
    d = np.sqrt(np.diag(s))
    if not np.all(d > 0):
        raise SingularCorrelationError("weighted scatter is singular; increase ridge")
    p = s / np.outer(d, d)
    np.fill_diagonal(p, 1.0)
    eig_min = float(np.linalg.eigvalsh(p)[0])
    if not eig_min > 1e-12:
        raise SingularCorrelationError(
            f"weighted scatter is singular (min eigenvalue {eig_min:.3g}); increase ridge")
    return CorrelationMatrix(p)


def log_copula_density(P: CorrelationMatrix, y):
    """Log Gaussian copula density at normal scores ``y``.

    ``-1/2 log|P| - 1/2 y^T P^{-1} y + 1/2 y^T y``.  Accepts a single point or
    an ``(n, D)`` array.
    """
    y = np.asarray(y, dtype=float)
    yy = np.atleast_2d(y)
    out = -0.5 * P.log_det - 0.5 * P.quad_form(yy) + 0.5 * np.sum(yy * yy, axis=1)
    return float(out[0]) if y.ndim == 1 else out


def log_component_density(P: CorrelationMatrix, gp: GaussianizedPoint) -> float:
    """Log density of one mixture component (without its weight)."""
    return log_copula_density(P, gp.y) + gp.log_marginal_density_sum


def copula_weighted_objective(P: CorrelationMatrix, y, weights) -> float:
    """``sum_n w_n log c(y_n | P)``; the part of the EM objective that depends on P."""
    return float(np.dot(weights, log_copula_density(P, np.atleast_2d(y))))


def sample_copula(P: CorrelationMatrix, rng: np.random.Generator, size: int | None = None):
    """Draw uniforms from the Gaussian copula with correlation ``P``.

    Returns a vector of length D (``size=None``) or an ``(size, D)`` array.
    """
    n = 1 if size is None else int(size)
    z = rng.standard_normal((n, P.dim)) @ P.lower_cholesky.T
    u = norm_cdf(z)
    return u[0] if size is None else u
