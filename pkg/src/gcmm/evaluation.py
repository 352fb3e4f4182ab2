"""Model selection, sampling from fitted mixtures and two-sample KS testing."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Iterable, Optional

import numpy as np

from .copula import sample_copula
from .data import FitConfig, GcmmModel, SyncDataset, UnsyncDataset
from .em import fit
from .gmm import fit_gmm

__all__ = [
    "KsResult",
    "AicResult",
    "SelectionResult",
    "sample_gcmm",
    "ks_two_sample",
    "ks_p_value",
    "param_count",
    "aic",
    "gcmm_param_count",
    "gcmm_aic",
    "select_k",
    "sum_dimension",
]

KS_MIN_SIZE = 8


@dataclass(frozen=True)
class KsResult:
    statistic: float
    p_value: float
    n1: int
    n2: int


@dataclass(frozen=True)
class AicResult:
    aic: float
    log_likelihood: float
    param_count: float
    K: int


def sample_gcmm(model: GcmmModel, n: int, rng: np.random.Generator, dimension_names=()) -> SyncDataset:
    """Draw ``n`` rows: component, then copula uniforms, then marginal quantiles."""
    if n < 2:
        raise ValueError("n >= 2 required")
    comp = rng.choice(model.K, size=n, p=model.weights)
    out = np.empty((n, model.D))
    for k in range(model.K):
        sel = np.flatnonzero(comp == k)
        if sel.size == 0:
            continue
        u = sample_copula(model.correlations[k], rng, size=sel.size)
        for i, m in enumerate(model.marginals[k]):
            ui = np.clip(u[:, i], m.clip_epsilon, 1.0 - m.clip_epsilon)
            out[sel, i] = m.inverse_cdf(ui)
    return SyncDataset(out, tuple(dimension_names))


def ks_p_value(statistic: float, n1: int, n2: int) -> float:
    """Asymptotic Kolmogorov p-value with the effective-size correction."""
    ne = n1 * n2 / (n1 + n2)
    sq = math.sqrt(ne)
    lam = (sq + 0.12 + 0.11 / sq) * statistic
    if lam < 1e-3:
        return 1.0
    total, sign = 0.0, 1.0
    for j in range(1, 10_001):
        term = math.exp(-2.0 * j * j * lam * lam)
        total += sign * term
        if term < 1e-10:
            break
        sign = -sign
    else:
        return 1.0
    return min(max(2.0 * total, 0.0), 1.0)


def ks_two_sample(a, b) -> KsResult:
    """Two-sample Kolmogorov-Smirnov test.

    The statistic is the largest gap between the two empirical cdfs,
    evaluated at every pooled observation.
    """
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    n1, n2 = a.size, b.size
    if min(n1, n2) < KS_MIN_SIZE:
        raise ValueError(f"both samples need at least {KS_MIN_SIZE} observations")
    pooled = np.concatenate([a, b])
    fa = np.searchsorted(a, pooled, side="right") / n1
    fb = np.searchsorted(b, pooled, side="right") / n2
    stat = float(np.max(np.abs(fa - fb)))
    return KsResult(stat, ks_p_value(stat, n1, n2), n1, n2)


def param_count(K: int, D: int, model_kind: str, marginal_param_cost: float = 0.0) -> float:
    """Free parameter count.

    GMM: weights, means and covariances.  GCMM: weights and copula
    correlations, plus ``marginal_param_cost`` per (component, dimension)
    marginal.
    """
    if K < 1 or D < 1:
        raise ValueError("K and D must be positive")
    if model_kind == "gmm":
        return (K - 1) + K * D + K * D * (D + 1) // 2
    if model_kind == "gcmm":
        return (K - 1) + K * D * (D - 1) // 2 + K * D * marginal_param_cost
    raise ValueError(f"unknown model kind {model_kind!r}")


def gcmm_param_count(model: GcmmModel, marginal_param_cost="edf") -> float:
    """Parameter count of a fitted GCMM.

    ``marginal_param_cost`` is either a fixed per-marginal charge or
    ``"edf"``, which charges each marginal its smoother trace.
    """
    if marginal_param_cost == "edf":
        base = param_count(model.K, model.D, "gcmm", 0.0)
        return base + sum(m.effective_dof() for row in model.marginals for m in row)
    return param_count(model.K, model.D, "gcmm", float(marginal_param_cost))


def aic(model_log_likelihood: float, K: int, D: int, model_kind: str,
        marginal_param_cost: float = 0.0) -> AicResult:
    p = param_count(K, D, model_kind, marginal_param_cost)
    return AicResult(2.0 * p - 2.0 * model_log_likelihood, model_log_likelihood, p, K)


def gcmm_aic(model: GcmmModel, model_log_likelihood: float, marginal_param_cost="edf") -> AicResult:
    p = gcmm_param_count(model, marginal_param_cost)
    return AicResult(2.0 * p - 2.0 * model_log_likelihood, model_log_likelihood, p, model.K)


@dataclass
class SelectionResult:
    """Per-K AIC table; failed K values are kept with their error message."""

    model_kind: str
    rows: list
    best_K: Optional[int]
    skipped: dict

    def to_dict(self):
        return {
            "model_kind": self.model_kind,
            "best_K": self.best_K,
            "rows": [asdict(r) for r in self.rows],
            "skipped": {str(k): v for k, v in self.skipped.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def to_text(self) -> str:
        lines = [f"{'K':>3} {'params':>8} {'log-lik':>16} {'AIC':>16}"]
        for r in self.rows:
            star = " *" if r.K == self.best_K else ""
            lines.append(f"{r.K:>3} {r.param_count:>8g} {r.log_likelihood:>16.4f} {r.aic:>16.4f}{star}")
        for k, why in sorted(self.skipped.items()):
            lines.append(f"{k:>3} skipped: {why}")
        return "\n".join(lines)


def select_k(data: SyncDataset, unsync: Optional[UnsyncDataset] = None,
             k_range: Iterable[int] = range(1, 7), config: FitConfig = FitConfig(),
             model_kind: str = "gcmm", marginal_param_cost="edf",
             threads: int = 1) -> SelectionResult:
    """Fit each K and pick the smallest AIC; ties go to the smaller K.

    Each fit uses seed ``config.seed ^ K``.  Infeasible or failing K values
    are recorded in ``skipped`` rather than raised.
    """
    ks = sorted(set(int(k) for k in k_range))

    def run(K):
        if data.N < K * (data.D + 1):
            return K, None, f"N >= K*(D+1) violated (N={data.N})"
        cfg = replace(config, K=K, seed=config.seed ^ K,
                      weight_floor=min(config.weight_floor, 0.5 / K))
        try:
            if model_kind == "gmm":
                _, trace = fit_gmm(data, cfg)
                return K, aic(trace.final_log_likelihood, K, data.D, "gmm"), None
            model, trace = fit(data, unsync, cfg)
        except (ValueError, RuntimeError) as exc:
            return K, None, str(exc)
        return K, gcmm_aic(model, trace.final_log_likelihood, marginal_param_cost), None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, ks))
    else:
        results = [run(k) for k in ks]

    rows, skipped = [], {}
    for K, res, why in results:
        if res is None:
            skipped[K] = why
        else:
            rows.append(res)
    best = None
    best_aic = math.inf
    for r in rows:
        if r.aic < best_aic:
            best, best_aic = r.K, r.aic
    return SelectionResult(model_kind, rows, best, skipped)


def sum_dimension(data) -> np.ndarray:
    """Row sums across dimensions."""
    values = data.values if isinstance(data, SyncDataset) else np.asarray(data, dtype=float)
    if values.ndim == 1:
        return values.copy()
    return values.sum(axis=1)
