"""Quantitative comparison of sample batches.

Maximum mean discrepancy (unbiased U-statistic, Gaussian kernel, median
heuristic bandwidth), empirical Wasserstein-2 by exact optimal assignment,
nearest-mean mode weights, and first/second moment errors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist


@dataclass
class MetricsReport:
    mmd: float
    w2: float
    mode_weights: Optional[list]
    mean_error: float
    cov_error: float
    n_x: int
    n_y: int
    bandwidth: float

    def to_dict(self) -> dict:
        return {
            "mmd": self.mmd,
            "w2": self.w2,
            "mode_weights": self.mode_weights,
            "mean_error": self.mean_error,
            "cov_error": self.cov_error,
            "n_x": self.n_x,
            "n_y": self.n_y,
            "bandwidth": self.bandwidth,
        }


def median_bandwidth(pooled: np.ndarray, cap: int = 4096, seed: int = 0) -> float:
    """Median pairwise distance of the pooled batch (subsampled if very large)."""
    if pooled.shape[0] > cap:
        idx = np.random.default_rng(seed).choice(pooled.shape[0], size=cap, replace=False)
        pooled = pooled[idx]
    dists = cdist(pooled, pooled)
    med = float(np.median(dists[np.triu_indices(pooled.shape[0], k=1)]))
    return med if med > 0 else 1.0


def _mmd_from_blocks(kxx: np.ndarray, kyy: np.ndarray, kxy: np.ndarray) -> float:
    m, n = kxx.shape[0], kyy.shape[0]
    sxx = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
    syy = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    sxy = kxy.mean()
    return float(sxx + syy - 2.0 * sxy)


def mmd(X: np.ndarray, Y: np.ndarray, bandwidth: Union[str, float] = "auto") -> float:
    """Unbiased squared MMD with kernel exp(-|a-b|^2 / (2 h^2)).

    The U-statistic excludes diagonal terms, so the value is signed and can
    dip slightly below zero under the null; clamp only when reporting.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[0] < 2 or Y.shape[0] < 2:
        raise ValueError("each batch needs at least 2 points")
    if X.shape[1] != Y.shape[1]:
        raise ValueError("batches have different dimensions")
    h = median_bandwidth(np.vstack([X, Y])) if bandwidth == "auto" else float(bandwidth)
    g = 1.0 / (2.0 * h * h)
    kxx = np.exp(-g * cdist(X, X, "sqeuclidean"))
    kyy = np.exp(-g * cdist(Y, Y, "sqeuclidean"))
    kxy = np.exp(-g * cdist(X, Y, "sqeuclidean"))
    return _mmd_from_blocks(kxx, kyy, kxy)


def mmd_permutation_pvalue(
    X: np.ndarray,
    Y: np.ndarray,
    n_perms: int = 200,
    bandwidth: Union[str, float] = "auto",
    rng: Optional[np.random.Generator] = None,
) -> tuple:
    """Permutation p-value for the two-sample MMD test; returns (pvalue, observed)."""
    rng = rng or np.random.default_rng()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    pooled = np.vstack([X, Y])
    h = median_bandwidth(pooled) if bandwidth == "auto" else float(bandwidth)
    g = 1.0 / (2.0 * h * h)
    K = np.exp(-g * cdist(pooled, pooled, "sqeuclidean"))
    m = X.shape[0]

    def stat(ix, iy):
        return _mmd_from_blocks(K[np.ix_(ix, ix)], K[np.ix_(iy, iy)], K[np.ix_(ix, iy)])

    total = pooled.shape[0]
    observed = stat(np.arange(m), np.arange(m, total))
    hits = 0
    for _ in range(n_perms):
        perm = rng.permutation(total)
        if stat(perm[:m], perm[m:]) >= observed:
            hits += 1
    return (1 + hits) / (1 + n_perms), observed


def w2_empirical(
    X: np.ndarray,
    Y: np.ndarray,
    max_n: int = 4096,
    subsample: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Empirical Wasserstein-2 by exact optimal assignment on squared costs.

    Batches are equalized by subsampling the larger one; batches above
    ``max_n`` are refused unless ``subsample`` is set (exactness is the point
    of this estimator, so silent downsampling is opt-in).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    rng = rng or np.random.default_rng(0)
    n = min(X.shape[0], Y.shape[0])
    if n > max_n:
        if not subsample:
            raise ValueError(f"batch size {n} exceeds exact-assignment cap {max_n}; "
                             "pass subsample=True to downsample")
        n = max_n
    if X.shape[0] > n:
        X = X[rng.choice(X.shape[0], size=n, replace=False)]
    if Y.shape[0] > n:
        Y = Y[rng.choice(Y.shape[0], size=n, replace=False)]
    cost = cdist(X, Y, "sqeuclidean")
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(cost[rows, cols].mean()))


def mode_weights(X: np.ndarray, means: np.ndarray, assign_radius: Optional[float] = None):
    """Fraction of samples nearest to each mode center.

    With ``assign_radius``, points farther than the radius from every center
    fall into an unassigned bucket; the returned weights are renormalized over
    assigned mass and the unassigned fraction is returned alongside.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    means = np.atleast_2d(np.asarray(means, dtype=float))
    d = cdist(X, means)
    nearest = d.argmin(axis=1)
    if assign_radius is None:
        counts = np.bincount(nearest, minlength=means.shape[0]).astype(float)
        return counts / counts.sum()
    assigned = d[np.arange(X.shape[0]), nearest] <= assign_radius
    counts = np.bincount(nearest[assigned], minlength=means.shape[0]).astype(float)
    unassigned = 1.0 - assigned.mean()
    total = counts.sum()
    weights = counts / total if total > 0 else counts
    return weights, float(unassigned)


def mean_cov_errors(X: np.ndarray, Y: np.ndarray) -> tuple:
    """(|mean difference|, operator-norm covariance difference)."""
    mean_err = float(np.linalg.norm(X.mean(axis=0) - Y.mean(axis=0)))
    cov_err = float(np.linalg.norm(np.cov(X.T) - np.cov(Y.T), ord=2))
    return mean_err, cov_err


def compare_batches(
    X: np.ndarray,
    Y: np.ndarray,
    mode_means: Optional[np.ndarray] = None,
    bandwidth: Union[str, float] = "auto",
    w2_max_n: int = 4096,
    rng: Optional[np.random.Generator] = None,
) -> MetricsReport:
    """Full metric panel of batch X against reference batch Y."""
    rng = rng or np.random.default_rng(0)
    h = median_bandwidth(np.vstack([X, Y])) if bandwidth == "auto" else float(bandwidth)
    value = mmd(X, Y, bandwidth=h)
    w2 = w2_empirical(X, Y, max_n=w2_max_n, subsample=True, rng=rng)
    weights = mode_weights(X, mode_means).tolist() if mode_means is not None else None
    mean_err, cov_err = mean_cov_errors(X, Y)
    return MetricsReport(
        mmd=max(value, 0.0),
        w2=w2,
        mode_weights=weights,
        mean_error=mean_err,
        cov_error=cov_err,
        n_x=int(X.shape[0]),
        n_y=int(Y.shape[0]),
        bandwidth=h,
    )
