"""Potential-function oracles, benchmark targets, and query accounting.

Every sampler in this package sees a target only through ``eval_potential``,
which counts one zeroth-order query per evaluated point. Analytic densities,
scores and exact samplers attached to a target are free side channels used by
ground-truth generation and metrics, never by the samplers themselves.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import minimize

from .errors import ConfigurationError

PHASES = ("optimization", "score-estimation", "baseline", "ground-truth")


class QueryLedger:
    """Thread-safe counter of zeroth-order potential queries, split by phase."""

    def __init__(self):
        self._lock = threading.Lock()
        self.by_phase = {p: 0 for p in PHASES}

    @property
    def zeroth_order_count(self) -> int:
        return sum(self.by_phase.values())

    def add(self, n: int, phase: str) -> None:
        if phase not in self.by_phase:
            raise ValueError(f"unknown ledger phase {phase!r}; expected one of {PHASES}")
        if n < 0:
            raise ValueError("query count increment must be nonnegative")
        with self._lock:
            self.by_phase[phase] += int(n)

    def snapshot(self) -> dict:
        with self._lock:
            by_phase = dict(self.by_phase)
        return {"zeroth_order_count": sum(by_phase.values()), "by_phase": by_phase}


@dataclass
class Target:
    """A sampling problem: a potential V with p(x) proportional to exp(-V(x)).

    ``potential`` accepts a single point ``(d,)`` or a batch ``(n, d)`` and is
    pure. Optional members provide analytic ground truth:

    - ``analytic_log_density``: unnormalized log density, equal to -V up to an
      additive constant; never query-counted.
    - ``analytic_score_at_time``: exact noised score ``(t, x) -> grad log p_t(x)``
      for targets where the forward-process marginal is closed form.
    - ``exact_sampler``: ``(rng, n) -> (n, d)`` direct draws from p.
    - ``second_moment_hint``: E|x|^2 under p, when known.
    - ``smoothness_hint``: quadratic-growth constant L with
      V(x) - V(x*) <= L/2 |x - x*|^2, when known.
    - ``cov_trace_hint``: trace of Cov(p), used to size score-sample counts.
    """

    dim: int
    potential: Callable[[np.ndarray], np.ndarray]
    name: str = "target"
    analytic_log_density: Optional[Callable[[np.ndarray], np.ndarray]] = None
    analytic_score_at_time: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    exact_sampler: Optional[Callable[[np.random.Generator, int], np.ndarray]] = None
    second_moment_hint: Optional[float] = None
    smoothness_hint: Optional[float] = None
    cov_trace_hint: Optional[float] = None
    gmm: Optional["GmmSpec"] = None
    meta: dict = field(default_factory=dict)


def eval_potential(target: Target, x: np.ndarray, ledger: QueryLedger, phase: str):
    """Counted zeroth-order query of V. The only evaluation path samplers use.

    ``x`` may be a single point ``(d,)`` or a batch ``(n, d)``; the ledger is
    incremented by the number of points evaluated.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != target.dim:
        raise ConfigurationError(
            f"point dimension {x.shape[-1]} does not match target dim {target.dim}"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("potential queried at a non-finite point")
    n = 1 if x.ndim == 1 else x.shape[0]
    ledger.add(n, phase)
    return target.potential(x)


@dataclass(frozen=True)
class GmmSpec:
    """Weights, means and covariances of a Gaussian mixture."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.asarray(self.means, dtype=float)
        cov = np.asarray(self.covariances, dtype=float)
        if mu.ndim != 2:
            raise ConfigurationError("means must be a (k, d) array")
        k, d = mu.shape
        if w.shape != (k,) or cov.shape != (k, d, d):
            raise ConfigurationError("weights, means and covariances have inconsistent shapes")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ConfigurationError("weights must be nonnegative and sum to 1 within 1e-12")
        for i in range(k):
            if np.linalg.eigvalsh(cov[i])[0] <= 0:
                raise ConfigurationError(f"covariance {i} is not positive definite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covariances", cov)

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def _gmm_log_density_fn(spec: GmmSpec):
    """Vectorized log of the normalized mixture density, stable log-sum-exp."""
    k, d = spec.k, spec.dim
    chols = np.stack([np.linalg.cholesky(spec.covariances[i]) for i in range(k)])
    log_norms = np.array(
        [
            -0.5 * d * math.log(2.0 * math.pi) - np.log(np.diag(chols[i])).sum()
            for i in range(k)
        ]
    )
    log_w = np.log(spec.weights)

    def log_density(x: np.ndarray):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = x[None, :] if single else x
        # (k, n) component log densities
        comp = np.empty((k, pts.shape[0]))
        for i in range(k):
            diff = pts - spec.means[i]
            sol = solve_triangular(chols[i], diff.T, lower=True)
            comp[i] = log_w[i] + log_norms[i] - 0.5 * np.sum(sol * sol, axis=0)
        m = comp.max(axis=0)
        out = m + np.log(np.sum(np.exp(comp - m), axis=0))
        return float(out[0]) if single else out

    return log_density


def make_gmm(spec: GmmSpec, name: str = "gmm") -> Target:
    """Gaussian-mixture target with full analytic side channels."""
    from .ou import gmm_score_at_time  # deferred: ou imports GmmSpec from here

    log_density = _gmm_log_density_fn(spec)

    def potential(x):
        return -log_density(x)

    m2sq = float(
        np.sum(
            spec.weights
            * (np.sum(spec.means**2, axis=1) + np.trace(spec.covariances, axis1=1, axis2=2))
        )
    )
    mean_p = spec.weights @ spec.means
    cov_trace = m2sq - float(mean_p @ mean_p)
    smoothness = float(
        max(1.0 / np.linalg.eigvalsh(spec.covariances[i])[0] for i in range(spec.k))
    )

    def exact_sampler(rng: np.random.Generator, n: int) -> np.ndarray:
        comp = rng.choice(spec.k, size=n, p=spec.weights)
        out = np.empty((n, spec.dim))
        for i in range(spec.k):
            idx = np.flatnonzero(comp == i)
            if idx.size:
                out[idx] = rng.multivariate_normal(
                    spec.means[i], spec.covariances[i], size=idx.size
                )
        return out

    return Target(
        dim=spec.dim,
        potential=potential,
        name=name,
        analytic_log_density=log_density,
        analytic_score_at_time=lambda t, x: gmm_score_at_time(spec, t, x),
        exact_sampler=exact_sampler,
        second_moment_hint=m2sq,
        smoothness_hint=smoothness,
        cov_trace_hint=cov_trace,
        gmm=spec,
    )


def benchmark_gmm_2d(radius: float = 11.0) -> GmmSpec:
    """The asymmetric unbalanced 4-mode 2D mixture used throughout the benchmarks.

    ``radius`` rescales all means so the mode originally at (0, 11) sits at
    (0, radius); the base problem is radius=11.
    """
    scale = radius / 11.0
    return GmmSpec(
        weights=np.array([0.1, 0.2, 0.3, 0.4]),
        means=scale * np.array([[0.0, 0.0], [0.0, 11.0], [9.0, 9.0], [11.0, 0.0]]),
        covariances=np.array(
            [
                [[1.0, 0.5], [0.5, 1.0]],
                [[0.3, -0.2], [-0.2, 0.3]],
                [[1.0, 0.3], [0.3, 1.0]],
                [[1.2, -1.0], [-1.0, 1.2]],
            ]
        ),
    )


def gmm_5d_3modes() -> GmmSpec:
    """The 5d 3-component mixture used for score-error studies."""
    means = np.array(
        [
            [-4.0, -4.0, -3.0, -4.0, -4.0],
            [4.0, 3.0, 4.0, 2.0, 4.0],
            [-4.0, -2.0, -4.0, 4.0, -1.0],
        ]
    )
    cov1 = np.array(
        [
            [3, 2, 0, 0, 0],
            [2, 3, 0, 0, 0],
            [0, 0, 4, 2, 0],
            [0, 0, 2, 4, 0],
            [0, 0, 0, 0, 1],
        ],
        dtype=float,
    )
    cov2 = np.array(
        [
            [9, 0, 7, 0, 0],
            [0, 1, 0, 0.4, 0],
            [7, 0, 9, 0, 0],
            [0, 0.4, 0, 1, 0],
            [0, 0, 0, 0, 1],
        ],
        dtype=float,
    )
    cov3 = np.array(
        [
            [1, 0.4, 0, 0, 0],
            [0.4, 1, 0, 0, 0],
            [0, 0, 4, 3, 0],
            [0, 0, 3, 4, 0],
            [0, 0, 0, 0, 1],
        ],
        dtype=float,
    )
    return GmmSpec(
        weights=np.array([0.25, 0.5, 0.25]),
        means=means,
        covariances=np.stack([cov1, cov2, cov3]),
    )


def make_randomized_gmm(dim: int, seed: int, n_modes: int = 5, radius: float = 12.0) -> Target:
    """Random d-dimensional mixture: 5 equally weighted isotropic modes.

    Means are radius * z/|z| with z uniform on [0,1]^d; each variance is drawn
    uniformly from [0.3, 1.3].
    """
    rng = np.random.default_rng(seed)
    means = np.empty((n_modes, dim))
    covs = np.empty((n_modes, dim, dim))
    for i in range(n_modes):
        z = rng.uniform(size=dim)
        means[i] = radius * z / np.linalg.norm(z)
        covs[i] = rng.uniform(0.3, 1.3) * np.eye(dim)
    spec = GmmSpec(weights=np.full(n_modes, 1.0 / n_modes), means=means, covariances=covs)
    return make_gmm(spec, name=f"randomized-gmm-d{dim}")


def annulus_penalty(x: np.ndarray, inner: float, outer: float, height: float):
    """height * floor(|x|) inside the open annulus inner < |x| < outer, else 0."""
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    pen = height * np.floor(r) * ((r > inner) & (r < outer))
    return float(pen) if np.ndim(pen) == 0 else pen


def apply_annulus_penalty(target: Target, inner: float, outer: float, height: float) -> Target:
    """Add a discontinuous ring penalty to a target's potential.

    The result keeps an analytic log density but loses analytic scores and the
    exact sampler: the penalized marginal flow has no closed form.
    """
    if not (0 <= inner < outer):
        raise ConfigurationError("annulus requires 0 <= inner < outer")
    if height < 0:
        raise ConfigurationError("annulus height must be nonnegative")
    base_potential = target.potential
    base_log_density = target.analytic_log_density

    def potential(x):
        return base_potential(x) + annulus_penalty(x, inner, outer, height)

    log_density = None
    if base_log_density is not None:
        def log_density(x):  # noqa: E306
            return base_log_density(x) - annulus_penalty(x, inner, outer, height)

    return Target(
        dim=target.dim,
        potential=potential,
        name=f"{target.name}+annulus",
        analytic_log_density=log_density,
        analytic_score_at_time=None,
        exact_sampler=None,
        second_moment_hint=target.second_moment_hint,
        smoothness_hint=None,
        cov_trace_hint=target.cov_trace_hint,
        gmm=None,
        meta={**target.meta, "annulus": (inner, outer, height)},
    )


# Four-exponential Mueller-Brown surface. Rows: (A, a, b, c, x0, y0) with
# A*exp(a*(x-x0)^2 + b*(x-x0)*(y-y0) + c*(y-y0)^2). The third exponent is
# positive definite here; ``standard_form`` flips it to (-0.7, -0.6, -0.7).
_MUELLER_TERMS = np.array(
    [
        [-170.0, -6.5, 11.0, -6.5, -0.5, 1.5],
        [-100.0, -1.0, 0.0, -10.0, 0.0, 0.5],
        [15.0, 0.7, 0.6, 0.7, -1.0, 1.0],
        [-200.0, -1.0, 0.0, -10.0, 1.0, 0.0],
    ]
)
_QUAD_COEFF_X = 35.0136
_QUAD_COEFF_Y = 59.8399


def mueller_vm(x: np.ndarray, standard_form: bool = False):
    """The bare four-exponential Mueller-Brown term, vectorized over points."""
    x = np.asarray(x, dtype=float)
    terms = _MUELLER_TERMS.copy()
    if standard_form:
        terms[2, 1:4] = [-0.7, -0.6, -0.7]
    xx = x[..., 0]
    yy = x[..., 1]
    out = np.zeros_like(xx)
    for amp, a, b, c, x0, y0 in terms:
        expnt = a * (xx - x0) ** 2 + b * (xx - x0) * (yy - y0) + c * (yy - y0) ** 2
        # Clip so the positive-definite exponent stays representable; the
        # resulting potential is astronomically large but finite.
        out = out + amp * np.exp(np.minimum(expnt, 700.0))
    return out


def mueller_vq(x: np.ndarray, center: np.ndarray):
    x = np.asarray(x, dtype=float)
    cx, cy = center
    return _QUAD_COEFF_X * (x[..., 0] - cx) ** 2 + _QUAD_COEFF_Y * (x[..., 1] - cy) ** 2


def locate_mueller_center(standard_form: bool = False) -> np.ndarray:
    """Minimizer of the middle well of the bare surface, seeded near (-0.05, 0.47)."""
    res = minimize(
        lambda p: mueller_vm(p, standard_form),
        x0=np.array([-0.05, 0.47]),
        method="Nelder-Mead",
        options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 2000},
    )
    return np.asarray(res.x)


def make_mueller_brown(
    beta: float = 0.1,
    center: Optional[np.ndarray] = None,
    standard_form: bool = False,
) -> Target:
    """Mueller-Brown target V = beta * (V_m + V_q), well depths leveled by V_q.

    ``beta`` is an inverse-temperature knob; the default 0.1 keeps barriers
    O(10) so all three wells carry visible mass. ``center`` defaults to the
    numerically located middle-well minimizer of the bare surface.
    """
    if beta <= 0:
        raise ConfigurationError("beta must be positive")
    if center is None:
        center = locate_mueller_center(standard_form)
    center = np.asarray(center, dtype=float)

    def potential(x):
        return beta * (mueller_vm(x, standard_form) + mueller_vq(x, center))

    def log_density(x):
        return -potential(x)

    return Target(
        dim=2,
        potential=potential,
        name="mueller-brown",
        analytic_log_density=log_density,
        second_moment_hint=None,
        meta={"beta": beta, "center": center.tolist(), "standard_form": standard_form},
    )


def target_from_config(cfg: dict) -> Target:
    """Build a target from a structured config mapping.

    Supported kinds: ``gmm`` (explicit parameters or ``radius`` shorthand for
    the 2D benchmark mixture), ``gmm+annulus``, ``mueller-brown``,
    ``randomized-gmm``.
    """
    kind = cfg.get("kind")
    if kind in ("gmm", "gmm+annulus"):
        if "weights" in cfg:
            spec = GmmSpec(
                weights=np.asarray(cfg["weights"], dtype=float),
                means=np.asarray(cfg["means"], dtype=float),
                covariances=np.asarray(cfg["covariances"], dtype=float),
            )
        else:
            spec = benchmark_gmm_2d(radius=float(cfg.get("radius", 11.0)))
        target = make_gmm(spec)
        if kind == "gmm+annulus":
            target = apply_annulus_penalty(
                target,
                inner=float(cfg.get("inner", 5.0)),
                outer=float(cfg.get("outer", 11.0)),
                height=float(cfg.get("height", 8.0)),
            )
        return target
    if kind == "mueller-brown":
        center = cfg.get("center")
        return make_mueller_brown(
            beta=float(cfg.get("beta", 0.1)),
            center=None if center is None else np.asarray(center, dtype=float),
            standard_form=bool(cfg.get("mueller_standard_form", False)),
        )
    if kind == "randomized-gmm":
        return make_randomized_gmm(
            dim=int(cfg["dim"]),
            seed=int(cfg.get("seed", 0)),
            n_modes=int(cfg.get("n_modes", 5)),
            radius=float(cfg.get("radius", 12.0)),
        )
    raise ConfigurationError(f"unknown target kind {kind!r}")
