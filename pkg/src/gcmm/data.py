"""Dataset and model containers, validation, CSV ingestion and JSON serialization."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .copula import CorrelationMatrix
from .marginal import MarginalEstimator

__all__ = [
    "DataError",
    "SyncDataset",
    "UnsyncDataset",
    "GcmmModel",
    "GmmModel",
    "FitConfig",
    "load_sync_csv",
    "load_unsync_csv",
    "load_unsync_dir",
    "write_sync_csv",
    "serialize_model",
    "deserialize_model",
    "serialize_gmm",
    "deserialize_gmm",
]

GCMM_SCHEMA = "gcmm-v1"
GMM_SCHEMA = "gmm-v1"


class DataError(ValueError):
    """Malformed input data or model payload."""


@dataclass(frozen=True, eq=False)
class SyncDataset:
    """N x D matrix of synchronized observations."""

    values: np.ndarray
    dimension_names: tuple = ()

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise DataError("synchronized data must be a 2-D matrix")
        n, d = v.shape
        if d < 1:
            raise DataError("D >= 1 required")
        if n < 2:
            raise DataError("N >= 2 required")
        bad = np.argwhere(~np.isfinite(v))
        if bad.size:
            r, c = bad[0]
            raise DataError(f"non-finite at row {r + 1} col {c + 1}")
        names = tuple(self.dimension_names) or tuple(f"x{i + 1}" for i in range(d))
        if len(names) != d:
            raise DataError(f"{len(names)} dimension names for {d} columns")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "dimension_names", names)

    @property
    def N(self) -> int:
        return self.values.shape[0]

    @property
    def D(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class UnsyncDataset:
    """Per-dimension ragged vectors of unsynchronized observations."""

    per_dimension: tuple

    def __post_init__(self):
        vecs = []
        for i, vec in enumerate(self.per_dimension):
            a = np.array(vec, dtype=float, copy=True).ravel()
            bad = np.flatnonzero(~np.isfinite(a))
            if bad.size:
                raise DataError(f"non-finite unsynchronized value at dimension {i + 1}, row {bad[0] + 1}")
            a.setflags(write=False)
            vecs.append(a)
        object.__setattr__(self, "per_dimension", tuple(vecs))

    @classmethod
    def empty(cls, D: int) -> "UnsyncDataset":
        return cls(tuple(np.empty(0) for _ in range(D)))

    @property
    def D(self) -> int:
        return len(self.per_dimension)

    @property
    def sizes(self) -> list:
        return [len(v) for v in self.per_dimension]

    def check_against(self, data: SyncDataset):
        if self.D != data.D:
            raise DataError(f"unsynchronized data has {self.D} dimensions, synchronized has {data.D}")


@dataclass(frozen=True, eq=False)
class GcmmModel:
    """Gaussian copula mixture: weights, per-component correlations and marginals."""

    weights: np.ndarray
    correlations: tuple
    marginals: tuple

    def __post_init__(self):
        w = np.array(self.weights, dtype=float, copy=True).ravel()
        w.setflags(write=False)
        corr = tuple(c if isinstance(c, CorrelationMatrix) else CorrelationMatrix(c)
                     for c in self.correlations)
        marg = tuple(tuple(row) for row in self.marginals)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "correlations", corr)
        object.__setattr__(self, "marginals", marg)
        self.validate()

    @property
    def K(self) -> int:
        return len(self.weights)

    @property
    def D(self) -> int:
        return self.correlations[0].dim

    def validate(self):
        w = self.weights
        if w.size < 1:
            raise DataError("model needs at least one component")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise DataError("weights must be positive and finite")
        if abs(float(w.sum()) - 1.0) > 1e-12:
            raise DataError("weights must sum to 1")
        if len(self.correlations) != w.size or len(self.marginals) != w.size:
            raise DataError("weights, correlations and marginals disagree on K")
        d = self.correlations[0].dim
        for k, (c, row) in enumerate(zip(self.correlations, self.marginals)):
            if c.dim != d:
                raise DataError(f"component {k} correlation has wrong dimension")
            if len(row) != d or not all(isinstance(m, MarginalEstimator) for m in row):
                raise DataError(f"component {k} marginal grid is not fully populated")


@dataclass(frozen=True, eq=False)
class GmmModel:
    """Gaussian mixture with full covariances."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float, copy=True).ravel()
        mu = np.atleast_2d(np.array(self.means, dtype=float, copy=True))
        cov = np.array(self.covariances, dtype=float, copy=True)
        if cov.ndim == 2:
            cov = cov[None]
        for a in (w, mu, cov):
            a.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covariances", cov)
        self.validate()

    @property
    def K(self) -> int:
        return len(self.weights)

    @property
    def D(self) -> int:
        return self.means.shape[1]

    def validate(self):
        w = self.weights
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise DataError("weights must be positive and finite")
        if abs(float(w.sum()) - 1.0) > 1e-12:
            raise DataError("weights must sum to 1")
        K, D = self.means.shape
        if K != w.size or self.covariances.shape != (K, D, D):
            raise DataError("GMM parameter shapes are inconsistent")
        for k, c in enumerate(self.covariances):
            if not np.allclose(c, c.T, rtol=0, atol=1e-12) or np.linalg.eigvalsh(c)[0] <= 0:
                raise DataError(f"covariance {k} is not symmetric positive definite")


@dataclass(frozen=True)
class FitConfig:
    """Fitting options shared by the GCMM and GMM EM engines.

    ``cdf_clip_epsilon=None`` selects ``1/(2 n_eff + 2)`` per marginal;
    ``kde_bandwidth`` of ``"silverman"`` or a positive float.
    ``update_marginals=False`` freezes the marginals after initialization.
    """

    K: int = 1
    max_iters: int = 500
    tol: float = 1e-6
    seed: int = 0
    weight_floor: float = 1e-6
    ridge: float = 1e-6
    cdf_clip_epsilon: Optional[float] = None
    kde_bandwidth: object = "silverman"
    use_unsync: bool = False
    update_marginals: bool = True

    def __post_init__(self):
        if not (isinstance(self.K, (int, np.integer)) and self.K >= 1):
            raise ValueError("K must be a positive integer")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.seed < 0:
            raise ValueError("seed must be unsigned")
        if not 0 < self.weight_floor < 1.0 / self.K:
            raise ValueError("weight_floor must lie in (0, 1/K)")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")
        if self.cdf_clip_epsilon is not None and not 0 < self.cdf_clip_epsilon < 0.5:
            raise ValueError("cdf_clip_epsilon must lie in (0, 0.5)")
        bw = self.kde_bandwidth
        if bw != "silverman" and not (isinstance(bw, (int, float)) and bw > 0):
            raise ValueError("kde_bandwidth must be 'silverman' or a positive number")

    @property
    def bandwidth_value(self):
        return None if self.kde_bandwidth == "silverman" else float(self.kde_bandwidth)


# -- CSV ---------------------------------------------------------------------

def _parse_float(text, row, col):
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"cannot parse {text!r} at row {row} col {col}") from None
    if not math.isfinite(v):
        raise DataError(f"non-finite at row {row} col {col}")
    return v


def load_sync_csv(path) -> SyncDataset:
    """Read a header-plus-numeric-body CSV into a :class:`SyncDataset`.

    Row numbers in error messages count data rows from 1.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = []
        for r, line in enumerate(reader, start=1):
            if not line or all(not c.strip() for c in line):
                continue
            if len(line) != len(header):
                raise DataError(f"row {r} has {len(line)} fields, header has {len(header)}")
            rows.append([_parse_float(c, r, j + 1) for j, c in enumerate(line)])
    if len(rows) < 2:
        raise DataError("N >= 2 required")
    return SyncDataset(np.array(rows, dtype=float), tuple(header))


def load_unsync_csv(path) -> np.ndarray:
    """Read a single-column CSV (one header row) of extra observations."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            next(reader)
        except StopIteration:
            return np.empty(0)
        vals = []
        for r, line in enumerate(reader, start=1):
            if not line or all(not c.strip() for c in line):
                continue
            if len(line) != 1:
                raise DataError(f"{path}: row {r} must have exactly one field")
            vals.append(_parse_float(line[0], r, 1))
    return np.array(vals, dtype=float)


def load_unsync_dir(directory, dimension_names: Sequence[str]) -> UnsyncDataset:
    """Load ``<name>.csv`` for each dimension; missing files give empty pools."""
    directory = Path(directory)
    pools = []
    for name in dimension_names:
        p = directory / f"{name}.csv"
        pools.append(load_unsync_csv(p) if p.exists() else np.empty(0))
    return UnsyncDataset(tuple(pools))


def write_sync_csv(path, data: SyncDataset):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(data.dimension_names)
        for row in data.values:
            w.writerow([repr(float(v)) for v in row])


# -- JSON --------------------------------------------------------------------

def serialize_model(model: GcmmModel) -> bytes:
    """Encode a GCMM as a ``gcmm-v1`` JSON document.

    Floats are written with ``repr`` precision so the round trip is exact.
    """
    model.validate()
    doc = {
        "schema": GCMM_SCHEMA,
        "K": model.K,
        "D": model.D,
        "weights": [float(w) for w in model.weights],
        "correlations": [[float(v) for v in c.matrix.ravel()] for c in model.correlations],
        "marginals": [
            [
                {
                    "knots": [float(v) for v in m.knots],
                    "cum_weights": [float(v) for v in m.cum_weights],
                    "bandwidth": m.bandwidth,
                    "clip_epsilon": m.clip_epsilon,
                }
                for m in row
            ]
            for row in model.marginals
        ],
    }
    return json.dumps(doc, indent=1).encode("utf-8")


def _load_doc(payload, schema):
    if isinstance(payload, (bytes, bytearray)):
        payload = payload.decode("utf-8")
    try:
        doc = json.loads(payload)
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed model payload: {exc}") from None
    if not isinstance(doc, dict) or doc.get("schema") != schema:
        raise DataError(f"expected schema {schema!r}")
    return doc


def deserialize_model(payload) -> GcmmModel:
    doc = _load_doc(payload, GCMM_SCHEMA)
    try:
        K, D = int(doc["K"]), int(doc["D"])
        weights = np.array(doc["weights"], dtype=float)
        if weights.shape != (K,):
            raise DataError("weights length does not match K")
        if abs(float(weights.sum()) - 1.0) > 1e-12:
            raise DataError("weights must sum to 1")
        corr = []
        for flat in doc["correlations"]:
            a = np.array(flat, dtype=float)
            if a.size != D * D:
                raise DataError("correlation matrix has wrong size")
            corr.append(CorrelationMatrix(a.reshape(D, D)))
        marg = tuple(
            tuple(MarginalEstimator(np.array(m["knots"], dtype=float),
                                    np.array(m["cum_weights"], dtype=float),
                                    m["bandwidth"], m["clip_epsilon"]) for m in row)
            for row in doc["marginals"]
        )
        return GcmmModel(weights, tuple(corr), marg)
    except DataError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"invalid model payload: {exc}") from None


def serialize_gmm(model: GmmModel) -> bytes:
    doc = {
        "schema": GMM_SCHEMA,
        "K": model.K,
        "D": model.D,
        "weights": [float(w) for w in model.weights],
        "means": [[float(v) for v in m] for m in model.means],
        "covariances": [[float(v) for v in c.ravel()] for c in model.covariances],
    }
    return json.dumps(doc, indent=1).encode("utf-8")


def deserialize_gmm(payload) -> GmmModel:
    doc = _load_doc(payload, GMM_SCHEMA)
    try:
        K, D = int(doc["K"]), int(doc["D"])
        w = np.array(doc["weights"], dtype=float)
        if abs(float(w.sum()) - 1.0) > 1e-12:
            raise DataError("weights must sum to 1")
        mu = np.array(doc["means"], dtype=float).reshape(K, D)
        cov = np.array(doc["covariances"], dtype=float).reshape(K, D, D)
        return GmmModel(w, mu, cov)
    except DataError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"invalid model payload: {exc}") from None
