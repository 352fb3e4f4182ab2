import csv
import json

import numpy as np
import pytest
from scipy import stats

from gcmm.data import FitConfig, SyncDataset
from gcmm.evaluation import ks_two_sample
from gcmm.experiment import (
    METHODS,
    BenchmarkSizes,
    GeneratorSpec,
    MarginalFamily,
    desynchronize,
    export_plot_data,
    make_ground_truth,
    run_benchmark,
    sample_ground_truth,
)
from gcmm.em import fit


def gaussian_spec(rho=0.5):
    g = MarginalFamily("gaussian", (0.0, 1.0))
    return GeneratorSpec((1.0,), (rho,), ((g, g),))


# -- generator spec ------------------------------------------------------------------------

def test_default_spec_shape():
    spec = GeneratorSpec.default()
    assert (spec.K, spec.D) == (3, 2)
    assert [round(c.matrix[0, 1], 12) for c in spec.correlations] == [0.8, -0.5, 0.2]
    assert all(m.family == "lognormal" and m.params == (0.0, 0.6) for row in spec.marginals for m in row)


def test_spec_dict_round_trip():
    spec = GeneratorSpec.default()
    again = GeneratorSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
    assert again.to_dict() == spec.to_dict()
    doc = {"components": [{"rho": 0.3, "marginals": [{"family": "student_t", "nu": 3, "loc": 0, "scale": 1}] * 2}]}
    assert GeneratorSpec.from_dict(doc).weights == (1.0,)


@pytest.mark.parametrize("rho", [1.0, -1.0, 1.5])
def test_degenerate_correlation_rejected(rho):
    with pytest.raises(ValueError):
        gaussian_spec(rho)


def test_bad_specs():
    g = MarginalFamily("gaussian", (0.0, 1.0))
    with pytest.raises(ValueError):
        GeneratorSpec((0.5, 0.6), (0.1, 0.2), ((g, g), (g, g)))
    with pytest.raises(ValueError):
        GeneratorSpec((1.0,), (0.1,), ((g,), (g,)))
    with pytest.raises(ValueError):
        MarginalFamily("gaussian", (0.0, -1.0))
    with pytest.raises(ValueError):
        MarginalFamily("cauchy", (0.0, 1.0))


# -- ground truth ----------------------------------------------------------------------------

def test_make_ground_truth_is_valid_model():
    model = make_ground_truth(GeneratorSpec.default())
    assert model.K == 3 and model.D == 2
    assert model.weights.sum() == pytest.approx(1.0, abs=1e-12)
    m = model.marginals[0][0]
    assert m.knots.size == 10_000
    q = stats.lognorm(s=0.6).ppf([0.1, 0.5, 0.9])
    np.testing.assert_allclose(m.cdf(q), [0.1, 0.5, 0.9], atol=2e-4)


def test_single_gaussian_moments():
    x = sample_ground_truth(gaussian_spec(0.5), 100_000, np.random.default_rng(0)).values
    np.testing.assert_allclose(x.mean(axis=0), 0.0, atol=0.015)
    np.testing.assert_allclose(np.cov(x.T), [[1, 0.5], [0.5, 1]], atol=0.02)


def test_heavy_tailed_margins():
    t = MarginalFamily("student_t", (3.0, 0.0, 1.0))
    spec = GeneratorSpec((1.0,), (0.0,), ((t, t),))
    x = sample_ground_truth(spec, 20_000, np.random.default_rng(1)).values[:, 0]
    assert stats.kstest(x, stats.t(3).cdf).pvalue > 0.01


def test_component_weights_respected():
    lo, hi = MarginalFamily("gaussian", (-50.0, 1.0)), MarginalFamily("gaussian", (50.0, 1.0))
    spec = GeneratorSpec((0.2, 0.8), (0.0, 0.0), ((lo,), (hi,)))
    x = sample_ground_truth(spec, 50_000, np.random.default_rng(2)).values[:, 0]
    assert np.mean(x < 0) == pytest.approx(0.2, abs=0.01)


# -- desynchronize -----------------------------------------------------------------------------

def test_desynchronize_counts():
    data = sample_ground_truth(GeneratorSpec.default(), 500, np.random.default_rng(3))
    sync, pools = desynchronize(data, 0.6, np.random.default_rng(4))
    assert sync.N == 300
    assert pools.sizes == [200, 200]


def test_desynchronize_conserves_values():
    data = sample_ground_truth(GeneratorSpec.default(), 401, np.random.default_rng(5))
    sync, pools = desynchronize(data, 0.37, np.random.default_rng(6))
    assert sync.N == 149
    for i in range(2):
        both = np.sort(np.concatenate([sync.values[:, i], pools.per_dimension[i]]))
        np.testing.assert_array_equal(both, np.sort(data.values[:, i]))
    # synchronized rows are whole rows of the input
    rows = {tuple(r) for r in data.values.tolist()}
    assert all(tuple(r) in rows for r in sync.values.tolist())


def test_keep_everything():
    data = SyncDataset(np.arange(20.0).reshape(10, 2))
    sync, pools = desynchronize(data, 1.0, np.random.default_rng(0))
    assert sync.N == 10 and pools.sizes == [0, 0]


def test_drop_rates_and_preconditions():
    data = sample_ground_truth(GeneratorSpec.default(), 1000, np.random.default_rng(7))
    _, pools = desynchronize(data, 0.5, np.random.default_rng(8), drop_rates=(0.0, 0.5))
    assert pools.sizes[0] == 500 and 200 < pools.sizes[1] < 300
    with pytest.raises(ValueError):
        desynchronize(data, 0.001, np.random.default_rng(0))
    with pytest.raises(ValueError):
        desynchronize(data, 0.0, np.random.default_rng(0))


# -- benchmark ---------------------------------------------------------------------------------

SMALL = BenchmarkSizes(n_train=300, keep_fraction=0.6, n_resample=200, n_holdout=200)


def test_benchmark_report_shape_and_determinism():
    spec = GeneratorSpec.default()
    a = run_benchmark(spec, [0, 1], FitConfig(max_iters=20), SMALL, k=2)
    b = run_benchmark(spec, [0, 1], FitConfig(max_iters=20), SMALL, k=2)
    assert a.to_json() == b.to_json()
    assert [r["seed"] for r in a.rows] == [0, 1]
    for r in a.rows:
        assert set(r["p_values"]) == set(METHODS)
        assert all(0.0 <= p <= 1.0 for p in r["p_values"].values())
        assert all(k == 2 for k in r["K"].values())
    text = a.to_text().splitlines()
    assert text[0].split()[:4] == ["seed", "GMM", "Base", "Case"]
    assert text[-1].startswith("median")


def test_benchmark_threads_match_serial():
    spec = GeneratorSpec.default()
    a = run_benchmark(spec, [2, 3], FitConfig(max_iters=10), SMALL, k=1)
    b = run_benchmark(spec, [2, 3], FitConfig(max_iters=10), SMALL, k=1, threads=2)
    assert a.to_json() == b.to_json()


def test_benchmark_selects_k():
    rep = run_benchmark(gaussian_spec(), [0], FitConfig(max_iters=20), SMALL, k_range=range(1, 3))
    assert all(k in (1, 2) for k in rep.rows[0]["K"].values())


def test_benchmark_records_failures():
    tiny = BenchmarkSizes(n_train=10, keep_fraction=0.6, n_resample=50, n_holdout=50)
    rep = run_benchmark(GeneratorSpec.default(), [0], FitConfig(), tiny, k=3)
    assert rep.rows == [] and 0 in rep.failures
    assert np.isnan(rep.median_p("GMM"))


def test_single_gaussian_truth_is_not_rejected():
    rep = run_benchmark(gaussian_spec(0.3), range(5), FitConfig(), BenchmarkSizes(n_train=2000), k=1)
    for m in METHODS:
        assert np.mean(rep.p_values(m) > 0.05) >= 0.6


def test_sizes_validation():
    with pytest.raises(ValueError):
        BenchmarkSizes(keep_fraction=1.5)
    with pytest.raises(ValueError):
        BenchmarkSizes(n_resample=3)
    assert BenchmarkSizes.large().n_train == 20_000


# -- plot export ---------------------------------------------------------------------------------

def test_export_plot_data(tmp_path):
    data = sample_ground_truth(GeneratorSpec.default(), 400, np.random.default_rng(9))
    model, _ = fit(data, config=FitConfig(K=2, max_iters=10))
    paths = export_plot_data(model, data, tmp_path, np.random.default_rng(0), n_sample=2000, bins=20)
    names = sorted(p.name for p in paths)
    assert names == sorted(f"{kind}_{n}.csv" for kind in ("hist", "qq") for n in ("x1", "x2", "sum"))
    with open(tmp_path / "hist_x1.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:2] == ["bin_left", "bin_right"] and len(rows) == 21
    body = np.array(rows[1:], dtype=float)
    assert np.sum(body[:, 2] * (body[:, 1] - body[:, 0])) == pytest.approx(1.0, abs=1e-9)
    with open(tmp_path / "qq_sum.csv") as fh:
        qq = np.array(list(csv.reader(fh))[1:], dtype=float)
    assert qq.shape == (99, 3)
    assert np.all(np.diff(qq[:, 1]) >= 0) and np.all(np.diff(qq[:, 2]) >= 0)


def test_export_is_deterministic(tmp_path):
    data = sample_ground_truth(GeneratorSpec.default(), 200, np.random.default_rng(10))
    model, _ = fit(data, config=FitConfig(K=1))
    a = export_plot_data(model, data, tmp_path / "a", np.random.default_rng(1), n_sample=500)
    b = export_plot_data(model, data, tmp_path / "b", np.random.default_rng(1), n_sample=500)
    assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]


def test_ground_truth_resample_matches_exact_sampler():
    spec = GeneratorSpec.default()
    from gcmm.evaluation import sample_gcmm
    tab = sample_gcmm(make_ground_truth(spec), 5000, np.random.default_rng(11)).values
    exact = sample_ground_truth(spec, 5000, np.random.default_rng(12)).values
    assert ks_two_sample(tab.sum(axis=1), exact.sum(axis=1)).p_value > 0.01
