"""Gaussian copula mixture models fitted by expectation-maximization.

Marginals are nonparametric per (component, dimension); dependence is a
mixture of Gaussian copulas.  Unsynchronized per-dimension observations can
be pooled into the marginal updates.

    >>> import gcmm
    >>> model, trace = gcmm.fit(data, config=gcmm.FitConfig(K=3))
"""

from .copula import (
    CorrelationMatrix,
    GaussianizedPoint,
    correlation_from_weighted_scatter,
    gaussianize_point,
    log_component_density,
    log_copula_density,
    sample_copula,
)
from .data import (
    DataError,
    FitConfig,
    GcmmModel,
    GmmModel,
    SyncDataset,
    UnsyncDataset,
    deserialize_gmm,
    deserialize_model,
    load_sync_csv,
    load_unsync_csv,
    load_unsync_dir,
    serialize_gmm,
    serialize_model,
    write_sync_csv,
)
from .em import (
    EmTrace,
    NumericalError,
    Responsibilities,
    e_step,
    e_step_unsync,
    fit,
    gcmm_log_density,
    gcmm_log_likelihood,
    initialize,
    m_step_base,
    m_step_unsync,
    point_log_likelihood,
)
from .evaluation import (
    AicResult,
    KsResult,
    SelectionResult,
    aic,
    gcmm_aic,
    gcmm_param_count,
    ks_two_sample,
    param_count,
    sample_gcmm,
    select_k,
    sum_dimension,
)
from .experiment import (
    BenchmarkReport,
    BenchmarkSizes,
    GeneratorSpec,
    MarginalFamily,
    desynchronize,
    export_plot_data,
    make_ground_truth,
    run_benchmark,
    sample_ground_truth,
)
from .gmm import fit_gmm, gmm_log_density, sample_gmm
from .marginal import MarginalEstimator, build_augmented_ecdf, build_weighted_ecdf

__version__ = "0.1.0"
