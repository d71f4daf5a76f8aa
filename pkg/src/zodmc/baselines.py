"""Reference samplers at matched oracle cost.

Unadjusted Langevin with central finite-difference gradients (2d counted
queries per chain per step, so comparisons against the diffusion sampler stay
in zeroth-order units) and classic rejection sampling against the full target
(slow but unbiased; the ground-truth reference for every metric). The
rejection path audits domination on every proposal and aborts with a witness
rather than returning silently biased samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from .diffuser import SampleBatch
from .errors import DominationViolation, RgoStarved
from .targets import (
    _QUAD_COEFF_X,
    _QUAD_COEFF_Y,
    GmmSpec,
    QueryLedger,
    Target,
    _gmm_log_density_fn,
    eval_potential,
    mueller_vm,
)

_DIVERGENCE_RADIUS = 1e8


@dataclass
class UlaConfig:
    step: float = 0.01
    n_steps: int = 1000
    n_chains: int = 1024
    init: str = "origin"  # origin | gaussian
    fd_step: float = 1e-5

    def __post_init__(self):
        if self.step <= 0 or self.fd_step <= 0:
            raise ValueError("step sizes must be positive")
        if self.init not in ("origin", "gaussian"):
            raise ValueError("init must be 'origin' or 'gaussian'")


def fd_gradient_batch(
    target: Target, x: np.ndarray, h: float, ledger: QueryLedger, phase: str
) -> np.ndarray:
    """Central finite-difference gradients for a batch of points, 2d queries each."""
    m, d = x.shape
    pts = np.repeat(x[:, None, :], 2 * d, axis=1)
    idx = np.arange(d)
    pts[:, 2 * idx, idx] += h
    pts[:, 2 * idx + 1, idx] -= h
    vals = eval_potential(target, pts.reshape(m * 2 * d, d), ledger, phase).reshape(m, 2 * d)
    return (vals[:, 0::2] - vals[:, 1::2]) / (2.0 * h)


def run_ula(
    target: Target, config: UlaConfig, ledger: QueryLedger, rng: np.random.Generator
) -> SampleBatch:
    """Unadjusted Langevin chains with finite-difference drift.

    Chains whose state leaves a large ball are flagged diverged, frozen, and
    excluded from the returned points.
    """
    d = target.dim
    m = config.n_chains
    if config.init == "origin":
        x = np.zeros((m, d))
    else:
        x = rng.standard_normal((m, d))
    alive = np.ones(m, dtype=bool)
    noise_scale = math.sqrt(2.0 * config.step)

    for _ in range(config.n_steps):
        if not alive.any():
            break
        xa = x[alive]
        g = fd_gradient_batch(target, xa, config.fd_step, ledger, "baseline")
        xa = xa - config.step * g + noise_scale * rng.standard_normal(xa.shape)
        x[alive] = xa
        blown = np.linalg.norm(x, axis=1) > _DIVERGENCE_RADIUS
        alive &= ~blown

    return SampleBatch(
        points=x[alive],
        ledger_snapshot=ledger.snapshot(),
        per_step_acceptance=np.array([]),
        algorithm="ula",
        seed=-1,
        diverged=int(m - alive.sum()),
        meta={"step": config.step, "n_steps": config.n_steps, "n_chains": config.n_chains},
    )


@dataclass
class RejectionProposal:
    """A dominating proposal: exp(-V(x)) <= exp(log_M) * exp(log_density(x))."""

    sample: Callable[[np.random.Generator, int], np.ndarray]
    log_density: Callable[[np.ndarray], np.ndarray]
    log_M: float
    name: str = "proposal"


def mixture_proposal(spec: GmmSpec, inflate: float = 3.0) -> RejectionProposal:
    """Same mixture with covariances inflated; log M = (d/2) log(inflate).

    Valid against the matching normalized-mixture potential: each component
    density ratio is bounded by inflate^(d/2), hence so is the mixture ratio.
    """
    if inflate < 1.0:
        raise ValueError("inflation factor must be >= 1")
    fat = GmmSpec(
        weights=spec.weights, means=spec.means, covariances=inflate * spec.covariances
    )
    log_density = _gmm_log_density_fn(fat)
    chols = np.stack([np.linalg.cholesky(fat.covariances[i]) for i in range(fat.k)])

    def sample(rng: np.random.Generator, size: int) -> np.ndarray:
        comp = rng.choice(fat.k, size=size, p=fat.weights)
        z = rng.standard_normal((size, fat.dim))
        out = np.empty((size, fat.dim))
        for i in range(fat.k):
            idx = np.flatnonzero(comp == i)
            if idx.size:
                out[idx] = fat.means[i] + z[idx] @ chols[i].T
        return out

    return RejectionProposal(
        sample=sample,
        log_density=log_density,
        log_M=0.5 * spec.dim * math.log(inflate) + 1e-9,
        name=f"mixture-x{inflate:g}",
    )


def diagonal_gaussian_proposal(mean, variances, log_M: float) -> RejectionProposal:
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(variances, dtype=float)
    log_norm = -0.5 * np.sum(np.log(2.0 * math.pi * var))

    def log_density(x: np.ndarray):
        return log_norm - 0.5 * np.sum((x - mean) ** 2 / var, axis=-1)

    def sample(rng: np.random.Generator, size: int) -> np.ndarray:
        return mean + np.sqrt(var) * rng.standard_normal((size, mean.shape[0]))

    return RejectionProposal(sample=sample, log_density=log_density, log_M=log_M, name="gaussian")


def mueller_proposal(target: Target) -> RejectionProposal:
    """Dominating Gaussian for the leveled Mueller-Brown target.

    Drops the four-exponential term to its global minimum: exp(-V) is then
    bounded by a Gaussian centered at the quadratic-correction center.
    """
    beta = target.meta["beta"]
    center = np.asarray(target.meta["center"], dtype=float)
    standard_form = target.meta.get("standard_form", False)
    seeds = [(-0.558, 1.442), (-0.05, 0.467), (0.623, 0.028)]
    vm_min = min(
        minimize(lambda p: mueller_vm(p, standard_form), np.asarray(s), method="Nelder-Mead").fun
        for s in seeds
    )
    vm_min -= 1e-6 * abs(vm_min) + 1e-9  # slack so float jitter cannot break domination
    var = np.array([1.0 / (2.0 * beta * _QUAD_COEFF_X), 1.0 / (2.0 * beta * _QUAD_COEFF_Y)])
    log_M = -beta * vm_min + 0.5 * np.sum(np.log(2.0 * math.pi * var))
    return diagonal_gaussian_proposal(center, var, float(log_M))


def ground_truth_rejection(
    target: Target,
    proposal: RejectionProposal,
    n: int,
    ledger: QueryLedger,
    rng: np.random.Generator,
    max_proposals: int = 200_000_000,
    batch: int = 16384,
) -> SampleBatch:
    """Exact draws from the target by rejection against a dominating proposal.

    Every proposal is audited: a density ratio above exp(log_M) aborts with
    the witness point instead of producing silently biased output.
    """
    d = target.dim
    out = np.empty((n, d))
    got = 0
    fired = 0
    while got < n:
        if fired >= max_proposals:
            raise RgoStarved(fired)
        z = proposal.sample(rng, batch)
        fired += batch
        log_ratio = -eval_potential(target, z, ledger, "ground-truth") - (
            proposal.log_M + proposal.log_density(z)
        )
        worst = int(np.argmax(log_ratio))
        if log_ratio[worst] > 0:
            raise DominationViolation(z[worst], log_ratio[worst] + proposal.log_M)
        with np.errstate(divide="ignore"):
            acc = np.log(rng.random(batch)) < log_ratio
        take = z[acc][: n - got]
        out[got : got + take.shape[0]] = take
        got += take.shape[0]
    return SampleBatch(
        points=out,
        ledger_snapshot=ledger.snapshot(),
        per_step_acceptance=np.array([n / fired]),
        algorithm="ground-truth-rejection",
        seed=-1,
        meta={"proposal": proposal.name, "proposals_used": fired},
    )
