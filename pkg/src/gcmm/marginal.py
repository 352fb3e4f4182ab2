"""
Nonparametric marginal estimation for one (component, dimension) pair.

A :class:`MarginalEstimator` carries a weighted empirical distribution: the
sorted, de-duplicated observation values (``knots``) and the normalized
cumulative weights at each knot.  Three views of it are used by the mixture:

- ``step_cdf``: the raw weighted ECDF, ``sum_n w_n 1[x_n <= y] / sum_n w_n``.
- ``cdf``: a continuous, clipped version obtained by linear interpolation
  through the mid-jump points of the step function, rescaled so that the
  first knot maps to ``clip_epsilon`` and the last to ``1 - clip_epsilon``.
- ``pdf``: a Gaussian kernel density estimate with the same weights.

The continuous ``cdf`` keeps the normal quantile transform finite and makes
``inverse_cdf`` a proper inverse on ``[clip_epsilon, 1 - clip_epsilon]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

__all__ = [
    "MarginalEstimator",
    "build_weighted_ecdf",
    "build_augmented_ecdf",
    "default_clip_epsilon",
    "silverman_bandwidth",
    "effective_sample_size",
    "norm_cdf",
    "norm_ppf",
]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# exact kernel sums are used below this many (query, knot) pairs
_EXACT_PAIR_LIMIT = 400_000
_GRID_STEPS_PER_BANDWIDTH = 32
_MAX_GRID = 1 << 20
_KERNEL_REACH = 9.0


def norm_cdf(x):
    """Standard normal cdf."""
    return ndtr(x)


def norm_ppf(u):
    """Standard normal quantile function."""
    return ndtri(u)


def effective_sample_size(weights) -> float:
    """Kish effective sample size ``(sum w)^2 / sum w^2``."""
    w = np.asarray(weights, dtype=float)
    s2 = float(np.dot(w, w))
    if s2 <= 0.0:
        return 0.0
    return float(w.sum()) ** 2 / s2


def default_clip_epsilon(weights) -> float:
    """``1 / (2 n_eff + 2)``, floored at 1e-6."""
    n_eff = effective_sample_size(weights)
    return max(1.0 / (2.0 * n_eff + 2.0), 1e-6)


def _weighted_quantile(knots, cum, q):
    idx = np.searchsorted(cum, q, side="left")
    return knots[min(int(idx), len(knots) - 1)]


def silverman_bandwidth(values, weights) -> float:
    """Weighted Silverman rule ``0.9 min(sd, IQR/1.34) n_eff^(-1/5)``.

    Falls back to the standard deviation when the IQR is zero and to a
    scale-relative constant when the sample is degenerate.
    """
    x = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    p = w / total
    mean = float(np.dot(p, x))
    sd = math.sqrt(max(float(np.dot(p, (x - mean) ** 2)), 0.0))
    order = np.argsort(x, kind="stable")
    xs, cs = x[order], np.cumsum(p[order])
    iqr = float(_weighted_quantile(xs, cs, 0.75) - _weighted_quantile(xs, cs, 0.25))
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    n_eff = max(effective_sample_size(w), 1.0)
    h = 0.9 * spread * n_eff ** (-0.2)
    if not h > 0:
        h = 1e-3 * (abs(mean) + 1.0)
    return h


@dataclass(frozen=True, eq=False)
class MarginalEstimator:
    """Weighted empirical marginal with a smoothed density.

    Parameters
    ----------
    knots : ndarray
        Strictly increasing observation values.
    cum_weights : ndarray
        Nondecreasing cumulative normalized weights, last entry 1.
    bandwidth : float
        Gaussian kernel bandwidth of the density estimate.
    clip_epsilon : float
        Clipping level of the continuous cdf, in (0, 0.5).
    """

    knots: np.ndarray
    cum_weights: np.ndarray
    bandwidth: float
    clip_epsilon: float
    _interp_x: np.ndarray = field(init=False, repr=False)
    _interp_u: np.ndarray = field(init=False, repr=False)
    _point_weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        cum = np.asarray(self.cum_weights, dtype=float)
        knots.setflags(write=False)
        cum.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "cum_weights", cum)
        object.__setattr__(self, "bandwidth", float(self.bandwidth))
        object.__setattr__(self, "clip_epsilon", float(self.clip_epsilon))
        self.validate()

        point_w = np.diff(cum, prepend=0.0)
        point_w = np.clip(point_w, 0.0, None)
        object.__setattr__(self, "_point_weights", point_w)

        eps = self.clip_epsilon
        keep = point_w > 0
        xs = knots[keep]
        mids = (cum[keep] - 0.5 * point_w[keep])
        if len(xs) == 1:
            ix = xs
            iu = np.array([0.5])
        else:
            lo, hi = mids[0], mids[-1]
            iu = eps + (1.0 - 2.0 * eps) * (mids - lo) / (hi - lo)
            iu[0], iu[-1] = eps, 1.0 - eps
            ix = xs
        object.__setattr__(self, "_interp_x", ix)
        object.__setattr__(self, "_interp_u", iu)

    def validate(self):
        k, c = self.knots, self.cum_weights
        if k.ndim != 1 or c.shape != k.shape or len(k) < 1:
            raise ValueError("knots and cum_weights must be 1-D arrays of equal nonzero length")
        if not (np.all(np.isfinite(k)) and np.all(np.isfinite(c))):
            raise ValueError("marginal knot table contains non-finite values")
        if len(k) > 1 and not np.all(np.diff(k) > 0):
            raise ValueError("knots must be strictly increasing")
        if c[0] < 0 or (len(c) > 1 and np.any(np.diff(c) < 0)):
            raise ValueError("cum_weights must be nonnegative and nondecreasing")
        if abs(c[-1] - 1.0) > 1e-12:
            raise ValueError("cum_weights must end at 1")
        if not self.bandwidth > 0 or not math.isfinite(self.bandwidth):
            raise ValueError("bandwidth must be positive")
        if not 0.0 < self.clip_epsilon < 0.5:
            raise ValueError("clip_epsilon must lie in (0, 0.5)")

    @property
    def point_weights(self) -> np.ndarray:
        """Normalized weight carried by each knot."""
        return self._point_weights

    def step_cdf(self, x):
        """Unclipped weighted ECDF (right-continuous step function)."""
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.knots, x, side="right")
        out = np.where(idx > 0, self.cum_weights[np.maximum(idx - 1, 0)], 0.0)
        return out if out.ndim else float(out)

    def cdf(self, x):
        """Continuous cdf clipped into ``[eps, 1 - eps]``."""
        x = np.asarray(x, dtype=float)
        eps = self.clip_epsilon
        if len(self._interp_x) == 1:
            x0 = self._interp_x[0]
            out = np.where(x < x0, eps, np.where(x > x0, 1.0 - eps, 0.5))
        else:
            out = np.interp(x, self._interp_x, self._interp_u, left=eps, right=1.0 - eps)
        return out if out.ndim else float(out)

    def inverse_cdf(self, u):
        """Piecewise-linear inverse of :meth:`cdf`.

        Values of ``u`` below ``eps`` (above ``1 - eps``) map to the smallest
        (largest) knot.
        """
        u = np.asarray(u, dtype=float)
        if np.any(~(u > 0.0)) or np.any(~(u < 1.0)):
            raise ValueError("u must lie strictly inside (0, 1)")
        if len(self._interp_x) == 1:
            out = np.full(u.shape, self._interp_x[0])
        else:
            out = np.interp(u, self._interp_u, self._interp_x)
        return out if out.ndim else float(out)

    def gaussianize(self, x):
        """Normal-scores transform ``Psi^{-1}(cdf(x))``."""
        return norm_ppf(self.cdf(x))

    def pdf(self, x):
        """Gaussian kernel density with the knot weights."""
        return np.exp(self.logpdf(x))

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        flat = np.atleast_1d(x).ravel()
        keep = self._point_weights > 0
        knots, w = self.knots[keep], self._point_weights[keep]
        h = self.bandwidth
        if flat.size * knots.size <= _EXACT_PAIR_LIMIT:
            out = _exact_logpdf(flat, knots, w, h)
        else:
            out = _binned_logpdf(flat, knots, w, h)
        out = out.reshape(x.shape)
        return out if out.ndim else float(out)

    def effective_dof(self) -> float:
        """Trace of the kernel smoother, ``sum_j w_j K_h(0) / f(x_j)``.

        Ranges from about 1 for a very wide kernel to the number of
        positive-weight knots for a very narrow one.
        """
        keep = self._point_weights > 0
        x, w = self.knots[keep], self._point_weights[keep]
        peak = 1.0 / (np.sqrt(2.0 * np.pi) * self.bandwidth)
        return float(np.sum(w * peak * np.exp(-self.logpdf(x))))


def _exact_logpdf(x, knots, w, h):
    out = np.empty(x.size)
    logw = np.log(w)
    chunk = max(1, _EXACT_PAIR_LIMIT // max(knots.size, 1))
    for start in range(0, x.size, chunk):
        z = (x[start:start + chunk, None] - knots[None, :]) / h
        terms = logw[None, :] - 0.5 * z * z
        m = terms.max(axis=1)
        out[start:start + chunk] = m + np.log(np.exp(terms - m[:, None]).sum(axis=1))
    return out - _LOG_SQRT_2PI - math.log(h)


def _binned_logpdf(x, knots, w, h):
    # linear binning onto a grid of spacing h/32, direct convolution with the
    # truncated kernel (no cancellation, so small densities stay accurate),
    # then cubic interpolation of the log-density
    lo = knots[0] - _KERNEL_REACH * h
    hi = knots[-1] + _KERNEL_REACH * h
    delta = h / _GRID_STEPS_PER_BANDWIDTH
    m = int(math.ceil((hi - lo) / delta)) + 1
    if m > _MAX_GRID:
        return _exact_logpdf(x, knots, w, h)
    delta = (hi - lo) / (m - 1)
    pos = (knots - lo) / delta
    left = np.clip(np.floor(pos).astype(np.int64), 0, m - 2)
    frac = pos - left
    grid_w = np.bincount(left, weights=w * (1.0 - frac), minlength=m)
    grid_w += np.bincount(left + 1, weights=w * frac, minlength=m)

    half = int(math.ceil(_KERNEL_REACH * h / delta))
    offsets = np.arange(-half, half + 1) * delta
    kernel = np.exp(-0.5 * (offsets / h) ** 2) * (_INV_SQRT_2PI / h)
    dens = np.convolve(grid_w, kernel)[half:half + m]

    with np.errstate(divide="ignore"):
        log_dens = np.log(dens)
    # four-point Lagrange interpolation of the log-density
    out = np.empty(x.size)
    pos = (x - lo) / delta
    j = np.floor(pos).astype(np.int64)
    inside = (j >= 1) & (j < m - 2)
    ji = j[inside]
    t = pos[inside] - ji
    nodes = np.stack([log_dens[ji - 1], log_dens[ji], log_dens[ji + 1], log_dens[ji + 2]])
    ok = np.all(np.isfinite(nodes), axis=0)
    nodes = np.where(ok, nodes, 0.0)
    coef = np.stack([
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ])
    out[inside] = np.sum(coef * nodes, axis=0)
    redo = ~inside
    redo[np.flatnonzero(inside)[~ok]] = True
    if np.any(redo):
        out[redo] = _exact_logpdf(x[redo], knots, w, h)
    return out


def _merge_ties(values, weights):
    order = np.argsort(values, kind="stable")
    xs, ws = values[order], weights[order]
    uniq, start = np.unique(xs, return_index=True)
    merged = np.add.reduceat(ws, start) if len(xs) else ws
    return uniq, merged


def build_weighted_ecdf(values, weights=None, clip_epsilon=None, bandwidth=None) -> MarginalEstimator:
    """Build a weighted ECDF/KDE marginal from a sample.

    Parameters
    ----------
    values : array_like
        Observations, at least two.
    weights : array_like, optional
        Nonnegative weights, one per observation.  Uniform if omitted.
    clip_epsilon : float, optional
        Clipping level; defaults to ``1/(2 n_eff + 2)`` floored at 1e-6.
    bandwidth : float, optional
        Kernel bandwidth; defaults to the weighted Silverman rule.
    """
    x = np.asarray(values, dtype=float).ravel()
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float).ravel()
    if x.shape != w.shape:
        raise ValueError(f"values and weights differ in length ({x.size} vs {w.size})")
    if x.size < 2:
        raise ValueError("at least two observations are required")
    if not np.all(np.isfinite(x)) or not np.all(np.isfinite(w)):
        raise ValueError("values and weights must be finite")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    total = float(w.sum())
    if not total > 0:
        raise ValueError("total weight must be positive")

    knots, merged = _merge_ties(x, w)
    cum = np.minimum(np.cumsum(merged) / total, 1.0)
    cum[-1] = 1.0
    if clip_epsilon is None:
        clip_epsilon = default_clip_epsilon(w)
    if bandwidth is None:
        bandwidth = silverman_bandwidth(x, w)
    return MarginalEstimator(knots, cum, bandwidth, clip_epsilon)


def build_augmented_ecdf(sync_values, sync_weights, unsync_values, unsync_weights,
                         clip_epsilon=None, bandwidth=None) -> MarginalEstimator:
    """Pooled weighted ECDF over synchronized and unsynchronized samples.

    Equivalent to :func:`build_weighted_ecdf` on the concatenated inputs;
    with an empty unsynchronized sample the result is identical to the
    synchronized-only estimator.
    """
    sv = np.asarray(sync_values, dtype=float).ravel()
    sw = np.asarray(sync_weights, dtype=float).ravel()
    uv = np.asarray(unsync_values, dtype=float).ravel()
    uw = np.asarray(unsync_weights, dtype=float).ravel()
    if sv.shape != sw.shape or uv.shape != uw.shape:
        raise ValueError("each value vector must match its weight vector in length")
    return build_weighted_ecdf(np.concatenate([sv, uv]), np.concatenate([sw, uw]),
                               clip_epsilon=clip_epsilon, bandwidth=bandwidth)
