"""Full-covariance Gaussian mixture EM, the comparison baseline."""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular
from scipy.special import logsumexp

from .data import FitConfig, GmmModel, SyncDataset
from .em import EmTrace, NumericalError, Responsibilities, kmeans_labels

__all__ = ["fit_gmm", "gmm_log_density", "gmm_component_log_densities", "sample_gmm"]

_LOG_2PI = math.log(2.0 * math.pi)


def _mvn_logpdf(X, mean, cov):
    try:
        L = cholesky(cov, lower=True)
    except LinAlgError as exc:
        raise NumericalError("covariance is not positive definite") from exc
    v = solve_triangular(L, (X - mean).T, lower=True)
    D = X.shape[1]
    return -0.5 * np.sum(v * v, axis=0) - np.sum(np.log(np.diag(L))) - 0.5 * D * _LOG_2PI


def gmm_component_log_densities(model: GmmModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.column_stack([
        math.log(w) + _mvn_logpdf(X, m, c)
        for w, m, c in zip(model.weights, model.means, model.covariances)
    ])


def gmm_log_density(model: GmmModel, x):
    """Mixture log-density at one point (returns float) or at each row of a matrix."""
    x = np.asarray(x, dtype=float)
    out = logsumexp(gmm_component_log_densities(model, x), axis=1)
    return float(out[0]) if x.ndim == 1 else out


def _ridge(cov, ridge):
    D = cov.shape[0]
    return cov + ridge * max(np.trace(cov) / D, 1e-300) * np.eye(D)


def _m_step(X, resp, config):
    N, D = X.shape
    totals = resp.sum(axis=0)
    weights = np.maximum(totals / N, config.weight_floor)
    weights /= weights.sum()
    means = (resp.T @ X) / totals[:, None]
    covs = np.empty((resp.shape[1], D, D))
    for k in range(resp.shape[1]):
        diff = X - means[k]
        c = (diff * resp[:, k, None]).T @ diff / totals[k]
        covs[k] = _ridge(0.5 * (c + c.T), config.ridge)
    return GmmModel(weights, means, covs)


def _e_step(model, X):
    lp = gmm_component_log_densities(model, X)
    norm = logsumexp(lp, axis=1)
    resp = np.exp(lp - norm[:, None])
    resp /= resp.sum(axis=1, keepdims=True)
    return resp, float(norm.sum())


def fit_gmm(data: SyncDataset, config: FitConfig = FitConfig()):
    """Classical EM for a Gaussian mixture.

    Initialization, weight floor, ridge and stopping rule match
    :func:`gcmm.em.fit` so comparisons differ only in the model class.
    """
    X = data.values
    N, D = X.shape
    K = config.K
    if N < K * (D + 1):
        raise ValueError(f"N >= K*(D+1) required (N={N}, K={K}, D={D})")
    rng = np.random.default_rng(config.seed)
    labels = kmeans_labels(X, K, rng, min_size=D + 1)
    resp = np.zeros((N, K))
    resp[np.arange(N), labels] = 1.0
    model = _m_step(X, resp, config)
    resp, ll = _e_step(model, X)
    if not math.isfinite(ll):
        raise NumericalError("non-finite log-likelihood at initialization")
    trace = EmTrace(initial_log_likelihood=ll)
    prev = ll
    for it in range(1, config.max_iters + 1):
        model = _m_step(X, resp, config)
        resp, ll = _e_step(model, X)
        if not math.isfinite(ll):
            raise NumericalError(f"non-finite log-likelihood at iteration {it}")
        trace.log_likelihoods.append(ll)
        trace.iterations_run = it
        change = abs(ll - prev) / (1.0 + abs(ll))
        trace.final_change = change
        prev = ll
        if change < config.tol:
            trace.converged = True
            break
    trace.responsibilities = Responsibilities(resp)
    return model, trace


def sample_gmm(model: GmmModel, rng: np.random.Generator, size: int | None = None):
    """Ancestral sampling: draw a component, then a Gaussian vector."""
    n = 1 if size is None else int(size)
    comp = rng.choice(model.K, size=n, p=model.weights)
    z = rng.standard_normal((n, model.D))
    out = np.empty((n, model.D))
    for k in range(model.K):
        sel = comp == k
        L = cholesky(model.covariances[k], lower=True)
        out[sel] = model.means[k] + z[sel] @ L.T
    return out[0] if size is None else out
