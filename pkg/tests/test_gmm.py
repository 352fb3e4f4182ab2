import math

import numpy as np
import pytest
from scipy import stats

from gcmm.data import FitConfig, GmmModel, SyncDataset
from gcmm.gmm import fit_gmm, gmm_log_density, sample_gmm


def test_standard_normal_at_mode():
    g = GmmModel([1.0], [[0.0, 0.0]], [np.eye(2)])
    assert gmm_log_density(g, [0.0, 0.0]) == pytest.approx(-math.log(2 * math.pi), abs=1e-14)
    assert -math.log(2 * math.pi) == pytest.approx(-1.837877, abs=1e-6)


def test_degenerate_mixture_equals_single_component():
    cov = [[2.0, 0.4], [0.4, 1.0]]
    one = GmmModel([1.0], [[1.0, -1.0]], [cov])
    two = GmmModel([0.5, 0.5], [[1.0, -1.0]] * 2, [cov, cov])
    x = np.random.default_rng(0).normal(size=(50, 2))
    np.testing.assert_allclose(gmm_log_density(two, x), gmm_log_density(one, x), atol=1e-13)


def test_density_matches_dense_oracle():
    rng = np.random.default_rng(1)
    w = np.array([0.2, 0.5, 0.3])
    mu = rng.normal(size=(3, 3))
    covs = []
    for _ in range(3):
        a = rng.normal(size=(3, 3))
        covs.append(a @ a.T + 0.5 * np.eye(3))
    g = GmmModel(w, mu, covs)
    x = rng.normal(size=(40, 3))
    want = np.log(sum(wk * stats.multivariate_normal(m, c).pdf(x) for wk, m, c in zip(w, mu, covs)))
    np.testing.assert_allclose(gmm_log_density(g, x), want, rtol=0, atol=1e-10)


def test_sample_component_frequencies():
    g = GmmModel([0.3, 0.7], [[-50.0], [50.0]], [[[1.0]], [[1.0]]])
    x = sample_gmm(g, np.random.default_rng(2), 100_000)
    assert np.mean(x[:, 0] < 0) == pytest.approx(0.3, abs=0.01)
    assert sample_gmm(g, np.random.default_rng(2)).shape == (1,)


def test_sample_moments():
    cov = np.array([[1.0, 0.8], [0.8, 2.0]])
    g = GmmModel([1.0], [[3.0, -1.0]], [cov])
    x = sample_gmm(g, np.random.default_rng(3), 200_000)
    np.testing.assert_allclose(x.mean(axis=0), [3.0, -1.0], atol=0.02)
    np.testing.assert_allclose(np.cov(x.T), cov, atol=0.03)


def test_single_gaussian_mean_recovery():
    rng = np.random.default_rng(4)
    N = 2000
    X = rng.normal([1.0, -2.0], 1.0, size=(N, 2))
    g, _ = fit_gmm(SyncDataset(X), FitConfig(K=1))
    assert np.all(np.abs(g.means[0] - [1.0, -2.0]) < 3 / math.sqrt(N))


def test_single_component_matches_closed_form_mle():
    rng = np.random.default_rng(5)
    X = rng.multivariate_normal([0, 1], [[1, 0.5], [0.5, 2]], size=1000)
    g, trace = fit_gmm(SyncDataset(X), FitConfig(K=1, ridge=0.0))
    mle = stats.multivariate_normal(X.mean(axis=0), np.cov(X.T, bias=True)).logpdf(X).sum()
    assert trace.final_log_likelihood == pytest.approx(mle, abs=1e-6)


def test_trace_monotone_and_deterministic():
    rng = np.random.default_rng(6)
    X = np.vstack([rng.normal(0, 1, (300, 2)), rng.normal(3, 0.5, (200, 2)), rng.lognormal(size=(200, 2))])
    cfg = FitConfig(K=3, seed=7)
    _, a = fit_gmm(SyncDataset(X), cfg)
    _, b = fit_gmm(SyncDataset(X), cfg)
    assert a.log_likelihoods == b.log_likelihoods
    ll = np.concatenate([[a.initial_log_likelihood], a.log_likelihoods])
    assert np.all(np.diff(ll) >= -1e-8)


def test_infeasible_k():
    with pytest.raises(ValueError, match="N >= K"):
        fit_gmm(SyncDataset(np.arange(10.0).reshape(5, 2)), FitConfig(K=2))
