"""
Expectation-maximization for Gaussian copula mixtures.

Two engines share one loop:

- base case: responsibilities from synchronized rows only; per-component
  marginals are responsibility-weighted ECDFs of each column.
- with unsynchronized data: each extra per-dimension observation gets its own
  responsibility from the component weights and that dimension's marginal
  densities, and is pooled into the marginal update.  Weights and copula
  correlations are still estimated from synchronized rows only.

The reported log-likelihood is always that of the synchronized rows.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.special import logsumexp

from .copula import (
    CorrelationMatrix,
    SingularCorrelationError,
    copula_weighted_objective,
    correlation_from_weighted_scatter,
    log_copula_density,
)
from .data import FitConfig, GcmmModel, SyncDataset, UnsyncDataset
from .marginal import build_augmented_ecdf, build_weighted_ecdf, norm_ppf

__all__ = [
    "NumericalError",
    "Responsibilities",
    "EmTrace",
    "kmeans_labels",
    "initialize",
    "component_log_densities",
    "gcmm_log_likelihood",
    "gcmm_log_density",
    "e_step",
    "e_step_unsync",
    "unsync_log_likelihood",
    "m_step_base",
    "m_step_unsync",
    "fit",
    "point_log_likelihood",
]

log = logging.getLogger(__name__)

_KMEANS_RESEEDS = 10


class NumericalError(RuntimeError):
    """Non-finite likelihood or unrecoverable numerical breakdown during fitting."""


@dataclass
class Responsibilities:
    """Posterior component memberships.

    ``sync`` is N x K; ``unsync`` holds one n_i x K matrix per dimension.
    """

    sync: np.ndarray
    unsync: tuple = ()


@dataclass
class EmTrace:
    """Per-iteration log-likelihoods and convergence diagnostics."""

    log_likelihoods: list = field(default_factory=list)
    converged: bool = False
    iterations_run: int = 0
    final_change: float = float("nan")
    initial_log_likelihood: float = float("nan")
    responsibilities: Optional[Responsibilities] = None
    rejected_marginal_updates: int = 0

    @property
    def final_log_likelihood(self) -> float:
        if self.log_likelihoods:
            return self.log_likelihoods[-1]
        return self.initial_log_likelihood


def kmeans_labels(X, K: int, rng: np.random.Generator, min_size: int = 1) -> np.ndarray:
    """k-means++ partition of the rows of ``X`` on column-standardized data.

    Re-seeds up to ten times when a cluster ends up with fewer than
    ``min_size`` members.
    """
    X = np.asarray(X, dtype=float)
    if K == 1:
        return np.zeros(len(X), dtype=int)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    Z = (X - X.mean(axis=0)) / sd
    for _ in range(_KMEANS_RESEEDS):
        seed = int(rng.integers(0, 2**32 - 1))
        _, labels = kmeans2(Z, K, iter=50, minit="++", seed=seed)
        counts = np.bincount(labels, minlength=K)
        if counts.min() >= min_size:
            return labels
    raise ValueError(f"k-means left a cluster with fewer than {min_size} members after "
                     f"{_KMEANS_RESEEDS} re-seeds")


def _gaussianize_columns(marginals_k, X):
    y = np.empty_like(X)
    for i, m in enumerate(marginals_k):
        y[:, i] = norm_ppf(m.cdf(X[:, i]))
    return y


def _log_marginal_sum(marginals_k, X):
    out = np.zeros(len(X))
    for i, m in enumerate(marginals_k):
        out += m.logpdf(X[:, i])
    return out


def _ridge_for(y, w, ridge):
    if not ridge:
        return 0.0
    scale = float(np.dot(w, np.sum(y * y, axis=1)) / (w.sum() * y.shape[1]))
    return ridge * max(scale, 1e-12)


def _fit_correlation(y, w, ridge, previous: Optional[CorrelationMatrix] = None) -> CorrelationMatrix:
    try:
        P = correlation_from_weighted_scatter(y, w, _ridge_for(y, w, ridge))
    except SingularCorrelationError as exc:
        if previous is None:
            raise NumericalError(str(exc)) from exc
        return previous
    if previous is not None:
        # the rescaled scatter is not the exact constrained maximizer; only
        # accept it when it does not lower the expected complete-data objective
        if copula_weighted_objective(P, y, w) < copula_weighted_objective(previous, y, w):
            return previous
    return P


def _marginal_kwargs(config: FitConfig):
    return {"clip_epsilon": config.cdf_clip_epsilon, "bandwidth": config.bandwidth_value}


def _score_mixture_responsibilities(scores, labels, config: FitConfig) -> np.ndarray:
    """Soft assignments from a Gaussian mixture on normal scores, started at ``labels``.

    Components that share their marginals and differ only in correlation
    overlap in location, so k-means alone cannot tell them apart; a
    full-covariance mixture in score space can.
    """
    from .gmm import _e_step, _m_step  # gmm imports this module

    N, K = len(scores), int(labels.max()) + 1
    resp = np.zeros((N, K))
    resp[np.arange(N), labels] = 1.0
    prev = -math.inf
    for _ in range(config.max_iters):
        try:
            new_resp, ll = _e_step(_m_step(scores, resp, config), scores)
        except NumericalError:
            break
        if not math.isfinite(ll) or new_resp.sum(axis=0).min() < scores.shape[1] + 1:
            # keep the last partition in which every component can carry a correlation
            break
        resp = new_resp
        if abs(ll - prev) / (1.0 + abs(ll)) < config.tol:
            break
        prev = ll
    return resp


def initialize(data: SyncDataset, config: FitConfig, rng: np.random.Generator) -> GcmmModel:
    """Initial GCMM from a partition of the synchronized rows in copula space.

    Rows are mapped to normal scores of the pooled per-column ECDFs,
    partitioned by k-means, and the partition is refined by a
    Gaussian mixture on the scores.  One M-step on the resulting
    responsibilities gives the starting model.
    """
    X = data.values
    K, D, N = config.K, data.D, data.N
    if N < K * (D + 1):
        raise ValueError(f"N >= K*(D+1) required (N={N}, K={K}, D={D})")
    scores = np.column_stack([build_weighted_ecdf(X[:, i]).gaussianize(X[:, i]) for i in range(D)])
    labels = kmeans_labels(scores, K, rng, min_size=D + 1)
    if K == 1:
        resp = np.ones((N, 1))
    else:
        resp = _score_mixture_responsibilities(scores, labels, config)
    return m_step_base(data, resp, config)


def component_log_densities(model: GcmmModel, X) -> np.ndarray:
    """``log pi_k + log c_k(Y_nk) + sum_i log f_ki(x_ni)`` as an N x K array."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.empty((len(X), model.K))
    for k in range(model.K):
        row = model.marginals[k]
        y = _gaussianize_columns(row, X)
        out[:, k] = (math.log(model.weights[k]) + log_copula_density(model.correlations[k], y)
                     + _log_marginal_sum(row, X))
    return out


def gcmm_log_likelihood(model: GcmmModel, X) -> float:
    """Mixture log-likelihood summed over the rows of ``X``."""
    return float(np.sum(logsumexp(component_log_densities(model, X), axis=1)))


def gcmm_log_density(model: GcmmModel, X) -> np.ndarray:
    """Pointwise mixture log-density."""
    return logsumexp(component_log_densities(model, X), axis=1)


def e_step(model: GcmmModel, data: SyncDataset):
    """Responsibilities of the synchronized rows and their log-likelihood."""
    if model.D != data.D:
        raise ValueError(f"model has D={model.D}, data has D={data.D}")
    lp = component_log_densities(model, data.values)
    norm = logsumexp(lp, axis=1)
    resp = np.exp(lp - norm[:, None])
    resp /= resp.sum(axis=1, keepdims=True)
    return resp, float(np.sum(norm))


def e_step_unsync(model: GcmmModel, unsync: UnsyncDataset) -> tuple:
    """Bayes responsibilities of each unsynchronized observation.

    ``r'_{n_i,k} ∝ pi_k f_ki(x_{n_i})`` using the current marginal densities.
    """
    if unsync.D != model.D:
        raise ValueError(f"model has D={model.D}, unsynchronized data has D={unsync.D}")
    logw = np.log(model.weights)
    out = []
    for i, x in enumerate(unsync.per_dimension):
        if len(x) == 0:
            out.append(np.empty((0, model.K)))
            continue
        lp = np.column_stack([model.marginals[k][i].logpdf(x) for k in range(model.K)]) + logw
        r = np.exp(lp - logsumexp(lp, axis=1, keepdims=True))
        r /= r.sum(axis=1, keepdims=True)
        out.append(r)
    return tuple(out)


def unsync_log_likelihood(model: GcmmModel, unsync: UnsyncDataset) -> float:
    """``sum_i sum_n log sum_k pi_k f_ki(x_n)`` over the unsynchronized pools."""
    logw = np.log(model.weights)
    total = 0.0
    for i, x in enumerate(unsync.per_dimension):
        if len(x):
            lp = np.column_stack([model.marginals[k][i].logpdf(x) for k in range(model.K)]) + logw
            total += float(np.sum(logsumexp(lp, axis=1)))
    return total


def _m_step(data, resp, config, build_marginal, previous):
    X = data.values
    N, D = X.shape
    K = resp.shape[1]
    totals = resp.sum(axis=0)
    floor = config.weight_floor
    collapsed = totals < floor * N
    weights = np.maximum(totals / N, floor)
    weights = weights / weights.sum()
    kw = _marginal_kwargs(config)
    marginals, corrs = [], []
    for k in range(K):
        prev_P = previous.correlations[k] if previous is not None else None
        if collapsed[k]:
            log.info("component %d collapsed (total responsibility %.3g); resetting", k, totals[k])
            n_reset = min(N, max(int(math.ceil(floor * N)), 10 * (D + 1)))
            idx = np.sort(np.argsort(resp.max(axis=1), kind="stable")[:n_reset])
            row = tuple(build_weighted_ecdf(X[idx, i], None, **kw) for i in range(D))
            marginals.append(row)
            corrs.append(CorrelationMatrix.identity(D))
            continue
        if config.update_marginals or previous is None:
            row = tuple(build_marginal(k, i) for i in range(D))
        else:
            row = previous.marginals[k]
        y = _gaussianize_columns(row, X)
        corrs.append(_fit_correlation(y, resp[:, k], config.ridge, prev_P))
        marginals.append(row)
    return GcmmModel(weights, tuple(corrs), tuple(marginals))


def m_step_base(data: SyncDataset, resp, config: FitConfig,
                previous: Optional[GcmmModel] = None) -> GcmmModel:
    """Update weights, marginals and correlations from synchronized responsibilities.

    Marginals are rebuilt first and the normal scores used for the
    correlation update come from the new marginals.  ``previous`` enables
    the ascent guard on correlations and is required when marginals are
    frozen.
    """
    resp = resp.sync if isinstance(resp, Responsibilities) else np.asarray(resp)
    X = data.values
    kw = _marginal_kwargs(config)

    def build(k, i):
        return build_weighted_ecdf(X[:, i], resp[:, k], **kw)

    return _m_step(data, resp, config, build, previous)


def m_step_unsync(data: SyncDataset, unsync: UnsyncDataset, resp: Responsibilities,
                  config: FitConfig, previous: Optional[GcmmModel] = None) -> GcmmModel:
    """As :func:`m_step_base`, with unsynchronized observations pooled into the marginals."""
    sync = resp.sync
    pools = resp.unsync
    X = data.values
    kw = _marginal_kwargs(config)

    def build(k, i):
        return build_augmented_ecdf(X[:, i], sync[:, k], unsync.per_dimension[i],
                                    pools[i][:, k], **kw)

    return _m_step(data, sync, config, build, previous)


def _check_finite(ll, model, data, iteration):
    if math.isfinite(ll):
        return
    lp = component_log_densities(model, data.values)
    bad = [k for k in range(model.K) if not np.all(np.isfinite(lp[:, k]))]
    raise NumericalError(f"non-finite log-likelihood at iteration {iteration}; "
                         f"offending component(s): {bad or 'unknown'}")


def fit(data: SyncDataset, unsync: Optional[UnsyncDataset] = None,
        config: FitConfig = FitConfig()):
    """Fit a GCMM by EM.

    Parameters
    ----------
    data : SyncDataset
        Synchronized rows.
    unsync : UnsyncDataset, optional
        Extra per-dimension observations; required when ``config.use_unsync``.
    config : FitConfig

    Returns
    -------
    model : GcmmModel
    trace : EmTrace
        ``log_likelihoods[m]`` is the synchronized log-likelihood after the
        m-th M-step; iteration stops when
        ``|L_m - L_{m-1}| / (1 + |L_m|) < tol``.

    Notes
    -----
    Rebuilding the marginals is not guaranteed to increase the likelihood.
    A rebuilt set is kept only if the objective (synchronized
    log-likelihood, plus the pooled marginal log-likelihood when
    ``use_unsync``) does not decrease; otherwise that iteration updates
    weights and correlations with the previous marginals.
    ``trace.rejected_marginal_updates`` counts those iterations.
    """
    if config.use_unsync:
        if unsync is None:
            raise ValueError("use_unsync requires unsynchronized data")
        unsync.check_against(data)
    rng = np.random.default_rng(config.seed)
    model = initialize(data, config, rng)
    resp, ll = e_step(model, data)
    _check_finite(ll, model, data, 0)
    trace = EmTrace(initial_log_likelihood=ll, responsibilities=Responsibilities(resp))
    frozen = replace(config, update_marginals=False)

    def objective(m, sync_ll):
        return sync_ll + unsync_log_likelihood(m, unsync) if config.use_unsync else sync_ll

    prev = ll
    prev_obj = objective(model, ll)
    for it in range(1, config.max_iters + 1):
        if config.use_unsync:
            r_u = e_step_unsync(model, unsync)
            candidate = m_step_unsync(data, unsync, Responsibilities(resp, r_u), config, previous=model)
        else:
            candidate = m_step_base(data, resp, config, previous=model)
        new_resp, new_ll = e_step(candidate, data)
        new_obj = objective(candidate, new_ll)
        if config.update_marginals and not new_obj >= prev_obj:
            # the rebuilt marginals are not an ascent step; keep the old ones
            # and update weights and correlations only
            trace.rejected_marginal_updates += 1
            candidate = m_step_base(data, resp, frozen, previous=model)
            new_resp, new_ll = e_step(candidate, data)
            new_obj = objective(candidate, new_ll)
        model, resp, ll = candidate, new_resp, new_ll
        _check_finite(ll, model, data, it)
        trace.log_likelihoods.append(ll)
        trace.iterations_run = it
        change = abs(ll - prev) / (1.0 + abs(ll))
        trace.final_change = change
        prev, prev_obj = ll, new_obj
        if change < config.tol:
            trace.converged = True
            break
    trace.responsibilities = Responsibilities(resp)
    return model, trace


def point_log_likelihood(weights, correlations, Y, Z) -> float:
    """Contribution of one observation to the mixture log-likelihood.

    Parameters
    ----------
    weights : array_like, shape (K,)
    correlations : sequence of CorrelationMatrix
    Y : array_like, shape (K, D)
        Normal scores of the observation under each component.
    Z : array_like, shape (K, D)
        Marginal density values of the observation under each component.
    """
    Y = np.asarray(Y, dtype=float)
    Z = np.asarray(Z, dtype=float)
    terms = np.array([
        math.log(w) + log_copula_density(P, Y[k]) + float(np.sum(np.log(Z[k])))
        for k, (w, P) in enumerate(zip(weights, correlations))
    ])
    return float(logsumexp(terms))
