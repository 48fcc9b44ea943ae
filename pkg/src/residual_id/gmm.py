"""Diagonal-covariance Gaussian mixture speaker models.

Covers density evaluation, deterministic k-means initialization and EM
training. Every stochastic choice flows from an explicit integer seed, so
refitting with the same inputs is bit-reproducible.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateData, DimensionMismatch, EmptyFeatures, TooFewFrames
from .features import FeatureMatrix

ABSOLUTE_VARIANCE_FLOOR = 1e-10  # last resort when the data variance is zero
KMEANS_ITERS = 10


@dataclass(frozen=True, eq=False)
class GmmParams:
    """Mixture weights, means and diagonal variances; rows are components."""

    weights: np.ndarray      # (M,)
    means: np.ndarray        # (M, D)
    variances: np.ndarray    # (M, D), strictly positive

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64))
        object.__setattr__(self, "means", np.asarray(self.means, dtype=np.float64))
        object.__setattr__(self, "variances", np.asarray(self.variances, dtype=np.float64))
        if self.means.shape != self.variances.shape:
            raise ValueError("means and variances must have matching shapes")
        if len(self.weights) != self.means.shape[0]:
            raise ValueError("one weight per component required")
        if abs(float(self.weights.sum()) - 1.0) > 1e-12:
            raise ValueError("mixture weights must sum to 1 within 1e-12")
        if np.any(self.weights < 0):
            raise ValueError("mixture weights must be nonnegative")
        if np.any(self.variances <= 0):
            raise ValueError("variances must be strictly positive")

    @property
    def num_components(self):
        return self.means.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]


@dataclass(frozen=True)
class EmConfig:
    max_iters: int = 100
    rel_tol: float = 1e-5
    variance_floor_factor: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")


def _as_rows(X):
    rows = X.rows if isinstance(X, FeatureMatrix) else np.asarray(X, dtype=np.float64)
    if rows.ndim != 2:
        raise ValueError("expected a T x D matrix")
    return rows


def component_log_densities(gmm, rows):
    """T x M matrix of log(p_i) + log N(x_t; mu_i, sigma_i^2)."""
    if rows.shape[1] != gmm.dim:
        raise DimensionMismatch(
            f"observation dim {rows.shape[1]} != model dim {gmm.dim}"
        )
    diff = rows[:, None, :] - gmm.means[None, :, :]
    quad = np.sum(diff * diff / gmm.variances[None, :, :], axis=2)
    log_norm = -0.5 * (
        gmm.dim * np.log(2.0 * np.pi) + np.sum(np.log(gmm.variances), axis=1)
    )
    with np.errstate(divide="ignore"):
        log_w = np.log(gmm.weights)
    return log_w[None, :] + log_norm[None, :] - 0.5 * quad


def _logsumexp_rows(log_terms):
    shift = np.max(log_terms, axis=1, keepdims=True)
    return shift[:, 0] + np.log(np.sum(np.exp(log_terms - shift), axis=1))


def gmm_logpdf(gmm, x):
    """Log mixture density at one observation, via max-shifted log-sum-exp."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or len(x) != gmm.dim:
        raise DimensionMismatch(f"expected a vector of dim {gmm.dim}")
    return float(_logsumexp_rows(component_log_densities(gmm, x[None, :]))[0])


def gmm_score(gmm, X):
    """Total log-likelihood: sum over frames of the per-frame log density."""
    rows = _as_rows(X)
    if rows.shape[0] == 0:
        raise EmptyFeatures("cannot score an empty feature matrix")
    return float(np.sum(_logsumexp_rows(component_log_densities(gmm, rows))))


def variance_floor(rows, factor):
    """Per-dimension floor: factor times the global data variance, with an
    absolute backstop so degenerate dimensions stay positive."""
    global_var = rows.var(axis=0)
    return np.maximum(factor * global_var, ABSOLUTE_VARIANCE_FLOOR)


def lloyd_partition(rows, k, rng):
    """Deterministic k-means: seeded sample of k distinct rows as initial
    means, then a fixed number of Lloyd iterations. Ties go to the lowest
    component index; an emptied cluster is re-seeded to the point farthest
    from its old mean. Returns (means, assignments)."""
    T = rows.shape[0]
    means = rows[np.sort(rng.choice(T, size=k, replace=False))].copy()
    assign = None
    for _ in range(KMEANS_ITERS):
        d2 = (
            np.sum(rows * rows, axis=1)[:, None]
            - 2.0 * rows @ means.T
            + np.sum(means * means, axis=1)[None, :]
        )
        assign = np.argmin(d2, axis=1)  # argmin takes the lowest index on ties
        for j in range(k):
            member = assign == j
            if np.any(member):
                means[j] = rows[member].mean(axis=0)
            else:
                far = np.argmax(np.sum((rows - means[j]) ** 2, axis=1))
                means[j] = rows[far]
    return means, assign


def kmeans_init(X, num_components, seed, variance_floor_factor=1e-4):
    """Initial GMM from a seeded k-means partition of the data.

    Weights are cluster fractions, means the cluster centroids, variances
    the per-cluster diagonal variances floored by the global floor.
    """
    rows = _as_rows(X)
    T = rows.shape[0]
    if T < num_components:
        raise TooFewFrames(f"{T} frames < {num_components} components")
    rng = np.random.default_rng(seed)
    floor = variance_floor(rows, variance_floor_factor)
    means, assign = lloyd_partition(rows, num_components, rng)

    weights = np.empty(num_components)
    variances = np.empty_like(means)
    for j in range(num_components):
        member = assign == j
        count = int(np.count_nonzero(member))
        weights[j] = count / T
        if count:
            variances[j] = np.maximum(rows[member].var(axis=0), floor)
        else:
            variances[j] = floor
    weights = weights / weights.sum()
    return GmmParams(weights=weights, means=means, variances=variances)


def _m_step(rows, resp, floor, previous):
    counts = resp.sum(axis=0)                     # (M,)
    weights = counts / counts.sum()
    safe = np.where(counts > 0, counts, 1.0)
    means = (resp.T @ rows) / safe[:, None]
    diff = rows[:, None, :] - means[None, :, :]
    variances = np.einsum("tm,tmd->md", resp, diff * diff) / safe[:, None]
    variances = np.maximum(variances, floor)
    dead = counts == 0
    if np.any(dead):  # keep a starved component where it was
        means[dead] = previous.means[dead]
        variances[dead] = previous.variances[dead]
    return GmmParams(weights=weights, means=means, variances=variances)


def em_fit(X, num_components, cfg):
    """EM for a diagonal GMM, starting from kmeans_init.

    Returns (params, trace) where trace[k] is the total log-likelihood of
    the model after k M-steps (trace[0] scores the initialization). Stops
    when max_iters M-steps ran or the relative gain drops below rel_tol;
    in the latter case the returned model is the one trace[-1] scored.
    """
    rows = _as_rows(X)
    T = rows.shape[0]
    if T < num_components:
        raise TooFewFrames(f"{T} frames < {num_components} components")
    if num_components > 1 and np.all(rows == rows[0]):
        warnings.warn(
            "all training rows identical; model is degenerate", DegenerateData
        )
    floor = variance_floor(rows, cfg.variance_floor_factor)
    params = kmeans_init(X, num_components, cfg.seed, cfg.variance_floor_factor)

    trace = []
    for _ in range(cfg.max_iters):
        log_dens = component_log_densities(params, rows)
        shift = np.max(log_dens, axis=1, keepdims=True)
        post = np.exp(log_dens - shift)
        norms = post.sum(axis=1, keepdims=True)
        ll = float(np.sum(shift[:, 0] + np.log(norms[:, 0])))
        trace.append(ll)
        if len(trace) >= 2 and trace[-1] - trace[-2] < cfg.rel_tol * abs(trace[-2]):
            return params, trace
        params = _m_step(rows, post / norms, floor, params)
    return params, trace
