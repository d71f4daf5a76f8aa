"""Monte Carlo estimation of the noised score from conditional samples.

Given n exact draws z_i from the conditional law at (t, x), the estimator

    s(t, x) = (1/n) sum_i (e^{-t} z_i - x) / (1 - e^{-2t})

is unbiased for grad log p_t(x). Sample-count policies trade oracle cost for
variance: a fixed count per evaluation (the experimental convention) or the
theory-driven count proportional to e^{-2t} / (1 - e^{-2t})^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import RgoStarved, UnsupportedTargetError
from .ou import ou_marginal
from .rgo import MinTracker, RgoRequest, default_max_proposals, rgo_sample
from .targets import QueryLedger, Target


@dataclass
class ScoreEstimate:
    t: float
    x: np.ndarray
    value: np.ndarray
    n_used: int
    proposals_used: int
    envelope_violations: int


@dataclass(frozen=True)
class SampleCountPolicy:
    """How many conditional samples to request at each time.

    ``fixed`` always uses ``n_fixed``. ``theory`` uses
    ceil(c * cov_hint * e^{-2t} / (1 - e^{-2t})^2 / eps^2) clamped to
    [n_min, n_max], which scales like t^{-2} for small t and e^{-2t} for
    large t.
    """

    kind: str = "fixed"
    n_fixed: int = 100
    c: float = 1.0
    eps: float = 0.5
    n_min: int = 1
    n_max: int = 10_000

    def __post_init__(self):
        if self.kind not in ("fixed", "theory"):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.n_min < 1 or self.n_max < self.n_min:
            raise ValueError("need 1 <= n_min <= n_max")


def sample_count(policy: SampleCountPolicy, t: float, cov_hint: float) -> int:
    if t <= 0:
        raise ValueError("sample counts are defined for t > 0")
    if policy.kind == "fixed":
        return policy.n_fixed
    one_minus = -math.expm1(-2.0 * t)
    raw = policy.c * cov_hint * math.exp(-2.0 * t) / one_minus**2 / policy.eps**2
    return int(min(max(math.ceil(raw), policy.n_min), policy.n_max))


def score_from_samples(t: float, x: np.ndarray, samples: np.ndarray) -> np.ndarray:
    m = ou_marginal(t)
    return (m.shrink * samples.mean(axis=0) - x) / m.noise_var


def estimate_score(
    target: Target,
    tracker: MinTracker,
    t: float,
    x: np.ndarray,
    policy: SampleCountPolicy,
    ledger: QueryLedger,
    rng: np.random.Generator,
    max_proposals: Optional[int] = None,
    starvation_retries: int = 3,
) -> ScoreEstimate:
    """Estimate grad log p_t(x) from rejection-sampled conditional draws.

    Starvation (zero acceptances within the proposal cap) is retried with a
    doubled cap up to ``starvation_retries`` times, then propagated. A partial
    batch (fewer than the requested draws) is used as-is; the estimator stays
    unbiased, only its variance grows.
    """
    x = np.asarray(x, dtype=float)
    cov_hint = target.cov_trace_hint if target.cov_trace_hint is not None else float(target.dim)
    n = sample_count(policy, t, cov_hint)
    cap = max_proposals if max_proposals is not None else default_max_proposals(
        target, tracker, t, x, n
    )
    proposals = 0
    violations = 0
    for attempt in range(starvation_retries + 1):
        try:
            res = rgo_sample(target, tracker, RgoRequest(t=t, x=x, n=n, max_proposals=cap), ledger, rng)
        except RgoStarved as starved:
            proposals += starved.proposals_used
            if attempt == starvation_retries:
                raise RgoStarved(proposals, t=t, x=x) from None
            cap *= 2
            continue
        proposals += res.proposals_used
        violations += res.envelope_violations
        return ScoreEstimate(
            t=t,
            x=x,
            value=score_from_samples(t, x, res.samples),
            n_used=res.samples.shape[0],
            proposals_used=proposals,
            envelope_violations=violations,
        )
    raise AssertionError("unreachable")


def score_l2_error(
    target: Target,
    t: float,
    estimator: Callable[[float, np.ndarray], np.ndarray],
    n_eval_points: int,
    rng: np.random.Generator,
):
    """Empirical mean and std of |estimator(t, X) - grad log p_t(X)|^2, X ~ p_t.

    Evaluation points are exact: clean draws from the target pushed through
    the forward marginal. Requires a target with analytic scores.
    """
    if target.analytic_score_at_time is None or target.exact_sampler is None:
        raise UnsupportedTargetError("score error needs analytic scores and an exact sampler")
    m = ou_marginal(t)
    x0 = target.exact_sampler(rng, n_eval_points)
    xt = m.shrink * x0 + math.sqrt(m.noise_var) * rng.standard_normal(x0.shape)
    truth = target.analytic_score_at_time(t, xt)
    errs = np.empty(n_eval_points)
    for i in range(n_eval_points):
        est = np.asarray(estimator(t, xt[i]))
        errs[i] = float(np.sum((est - truth[i]) ** 2))
    return float(errs.mean()), float(errs.std())
