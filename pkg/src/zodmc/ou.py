"""Closed-form analytics of the forward Ornstein-Uhlenbeck noising process.

The forward SDE dX = -X dt + sqrt(2) dB has the explicit marginal
X_t = exp(-t) X_0 + sqrt(1 - exp(-2t)) Z, so Gaussian-mixture targets evolve
to Gaussian mixtures with shrunk means and blended covariances. This module
provides those marginals, their exact scores (ground truth for score-error
metrics), and decay bounds usable as checkable predicates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .targets import GmmSpec


@dataclass(frozen=True)
class OuMarginal:
    """Scaling of the OU marginal at time t: X_t = shrink * X_0 + sqrt(noise_var) * Z."""

    t: float
    shrink: float
    noise_var: float

    def __post_init__(self):
        if abs(self.shrink**2 + self.noise_var - 1.0) > 1e-12:
            raise ValueError("shrink^2 + noise_var must equal 1")
        # Closed interval ends: both quantities round to the boundary for
        # very large t.
        if not (0.0 <= self.shrink <= 1.0 and 0.0 <= self.noise_var <= 1.0):
            raise ValueError("marginal scalings out of range")


def ou_marginal(t: float) -> OuMarginal:
    if t < 0:
        raise ValueError("OU time must be nonnegative")
    shrink = math.exp(-t)
    return OuMarginal(t=float(t), shrink=shrink, noise_var=-math.expm1(-2.0 * t))


def _noised_components(spec: GmmSpec, t: float):
    """Means and covariances of the mixture after time t of forward noising."""
    m = ou_marginal(t)
    means = m.shrink * spec.means
    eye = np.eye(spec.dim)
    covs = m.shrink**2 * spec.covariances + m.noise_var * eye
    return means, covs


def gmm_log_density_at_time(spec: GmmSpec, t: float, x: np.ndarray):
    """log p_t(x) for the OU-evolved mixture, stable in log space."""
    means, covs = _noised_components(spec, t)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = x[None, :] if single else x
    k, d = spec.k, spec.dim
    comp = np.empty((k, pts.shape[0]))
    for i in range(k):
        chol = np.linalg.cholesky(covs[i])
        diff = pts - means[i]
        sol = np.linalg.solve(chol, diff.T)
        comp[i] = (
            math.log(spec.weights[i])
            - 0.5 * d * math.log(2.0 * math.pi)
            - np.log(np.diag(chol)).sum()
            - 0.5 * np.sum(sol * sol, axis=0)
        )
    mx = comp.max(axis=0)
    out = mx + np.log(np.sum(np.exp(comp - mx), axis=0))
    return float(out[0]) if single else out


def gmm_score_at_time(spec: GmmSpec, t: float, x: np.ndarray):
    """Exact grad log p_t(x) for the OU-evolved mixture.

    Computed via per-component responsibilities in log space with
    max-subtraction, so widely separated modes stay representable.
    Accepts a point (d,) or a batch (n, d).
    """
    if t < 0:
        raise ValueError("OU time must be nonnegative")
    means, covs = _noised_components(spec, t)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = x[None, :] if single else x
    k, d = spec.k, spec.dim
    logp = np.empty((k, pts.shape[0]))
    grads = np.empty((k, pts.shape[0], d))
    for i in range(k):
        chol = np.linalg.cholesky(covs[i])
        diff = pts - means[i]
        sol = np.linalg.solve(chol, diff.T)
        logp[i] = (
            math.log(spec.weights[i])
            - 0.5 * d * math.log(2.0 * math.pi)
            - np.log(np.diag(chol)).sum()
            - 0.5 * np.sum(sol * sol, axis=0)
        )
        grads[i] = -np.linalg.solve(chol.T, sol).T
    mx = logp.max(axis=0)
    resp = np.exp(logp - mx)
    resp /= resp.sum(axis=0)
    score = np.einsum("kn,knd->nd", resp, grads)
    return score[0] if single else score


def ou_decay_bounds(t: float, m2sq: float, d: int, kl: bool = True):
    """Upper bounds on W2(p_t, p) and KL(p_t | standard normal).

    Returns (w2_bound, kl_bound); ``kl_bound`` is None when ``kl`` is False.
    The KL bound diverges at t=0, so requesting it there is an error.
    """
    if t < 0:
        raise ValueError("OU time must be nonnegative")
    if m2sq < 0:
        raise ValueError("second moment must be nonnegative")
    one_minus_e2t = -math.expm1(-2.0 * t)
    w2_sq = (1.0 - math.exp(-t)) ** 2 * m2sq + one_minus_e2t * d
    w2_bound = math.sqrt(w2_sq)
    kl_bound = None
    if kl:
        if t <= 0:
            raise ValueError("the KL bound diverges at t=0")
        kl_bound = 0.5 * math.exp(-4.0 * t) / one_minus_e2t * d + 0.5 * math.exp(-2.0 * t) * m2sq
    return w2_bound, kl_bound
