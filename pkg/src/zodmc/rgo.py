"""Restricted Gaussian oracle via rejection sampling.

For a reverse-process state x at time t > 0, the conditional law of the clean
point is proportional to exp(-V(z) - |z - e^t x|^2 / (2 (e^{2t} - 1))).
Proposing z ~ N(e^t x, (e^{2t} - 1) I) and accepting with probability
exp(-V(z) + V*) yields exact draws whenever V* is a true lower bound on V.
V* is maintained by a zeroth-order quasi-Newton minimizer and tightened
whenever a proposal beats it; acceptances made under a stale bound are kept
and flagged rather than discarded.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import RgoStarved
from .targets import QueryLedger, Target, eval_potential


class MinTracker:
    """Running minimum of the potential, safe for concurrent tightening."""

    def __init__(self, point: np.ndarray, value: float):
        self._lock = threading.Lock()
        self.best_point = np.array(point, dtype=float)
        self.best_value = float(value)
        self.update_count = 0

    def update(self, point: np.ndarray, value: float) -> bool:
        """Keep the smaller of the stored and offered values; True if improved."""
        with self._lock:
            if value < self.best_value:
                self.best_point = np.array(point, dtype=float)
                self.best_value = float(value)
                self.update_count += 1
                return True
        return False


def _fd_gradient(target: Target, x: np.ndarray, ledger: QueryLedger, fd_scale: float):
    """Central finite-difference gradient; costs 2d counted queries."""
    d = x.shape[0]
    h = fd_scale * (1.0 + np.max(np.abs(x)))
    pts = np.repeat(x[None, :], 2 * d, axis=0)
    idx = np.arange(d)
    pts[2 * idx, idx] += h
    pts[2 * idx + 1, idx] -= h
    vals = eval_potential(target, pts, ledger, "optimization")
    return (vals[0::2] - vals[1::2]) / (2.0 * h)


def find_potential_min(
    target: Target,
    x0: np.ndarray,
    ledger: QueryLedger,
    fd_scale: float = 1e-5,
    tol: float = 1e-6,
    max_iters: int = 200,
) -> MinTracker:
    """Zeroth-order BFGS descent on V from x0.

    Gradients come from central finite differences (never exposed outside the
    optimizer), curvature from BFGS updates built on those gradients. Stops at
    gradient norm below ``tol`` or ``max_iters``. A non-finite value aborts the
    descent; the tracker keeps the best finite point seen.
    """
    x = np.array(x0, dtype=float)
    d = x.shape[0]
    fx = float(eval_potential(target, x, ledger, "optimization"))
    tracker = MinTracker(x, fx if math.isfinite(fx) else math.inf)
    if not math.isfinite(fx):
        return tracker

    g = _fd_gradient(target, x, ledger, fd_scale)
    H = np.eye(d)
    for _ in range(max_iters):
        if not np.all(np.isfinite(g)):
            break
        if np.linalg.norm(g) < tol:
            break
        p = -H @ g
        if p @ g >= 0:  # lost positive definiteness; restart from steepest descent
            p = -g
            H = np.eye(d)
        step, accepted = 1.0, False
        armijo = 1e-4 * (g @ p)
        for _ in range(40):
            xn = x + step * p
            fn = float(eval_potential(target, xn, ledger, "optimization"))
            if math.isfinite(fn):
                tracker.update(xn, fn)
                if fn <= fx + step * armijo:
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            break
        gn = _fd_gradient(target, xn, ledger, fd_scale)
        if not np.all(np.isfinite(gn)):
            break
        s = xn - x
        y = gn - g
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            rho = 1.0 / sy
            V = np.eye(d) - rho * np.outer(s, y)
            H = V @ H @ V.T + rho * np.outer(s, s)
        x, fx, g = xn, fn, gn
    return tracker


def expected_proposals(L: float, t: float, x: np.ndarray, xstar: np.ndarray, d: int, n: int):
    """Predicted proposal count for n acceptances under quadratic growth L.

    n * (L (e^{2t} - 1) + 1)^{d/2} * exp(|L xstar - e^t x|^2 / (2 (L (e^{2t} - 1) + 1))).
    Returns inf when the value overflows a double.
    """
    if L <= 0 or t <= 0:
        raise ValueError("expected_proposals requires L > 0 and t > 0")
    x = np.asarray(x, dtype=float)
    xstar = np.asarray(xstar, dtype=float)
    a = L * math.expm1(2.0 * t) + 1.0
    log_val = (
        math.log(n)
        + 0.5 * d * math.log(a)
        + 0.5 * float(np.sum((L * xstar - math.exp(t) * x) ** 2)) / a
    )
    return math.exp(log_val) if log_val < 709.0 else math.inf


def default_max_proposals(
    target: Target, tracker: MinTracker, t: float, x: np.ndarray, n: int
) -> int:
    """Proposal cap: 100x the predicted count when a growth constant is known."""
    if target.smoothness_hint is not None:
        pred = expected_proposals(target.smoothness_hint, t, x, tracker.best_point, target.dim, n)
        if math.isfinite(pred):
            return int(min(1e12, max(64.0, 100.0 * pred)))
        return int(1e12)
    return int(1e6)


@dataclass
class RgoRequest:
    t: float
    x: np.ndarray
    n: int
    max_proposals: int

    def __post_init__(self):
        if self.t <= 0:
            raise ValueError("conditional sampling requires t > 0")
        if self.n < 1 or self.max_proposals < 1:
            raise ValueError("sample count and proposal cap must be positive")
        self.x = np.asarray(self.x, dtype=float)


@dataclass
class RgoResult:
    samples: np.ndarray
    proposals_used: int
    acceptance_rate: float
    envelope_violations: int
    vstar_improved: bool
    completed: bool


def rgo_sample_many(
    target: Target,
    tracker: MinTracker,
    t: float,
    centers: np.ndarray,
    n: int,
    max_proposals: int,
    ledger: QueryLedger,
    rng: np.random.Generator,
    batch0: int = 64,
    batch_cap: int = 65536,
) -> list:
    """Run the rejection sampler for many states in lockstep rounds.

    Each round proposes a block per unfinished state, evaluates V once on the
    concatenated block, and tests acceptance against the round-start V*.
    ``proposals_used`` counts up to the n-th acceptance; proposals evaluated
    past that point in the final round are discarded from the sample set but
    still counted in the ledger. States that exhaust ``max_proposals`` return
    partial (possibly empty) results flagged ``completed=False``.
    """
    if t <= 0:
        raise ValueError("conditional sampling requires t > 0")
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    B, d = centers.shape
    scale = math.exp(t)
    noise = math.sqrt(math.expm1(2.0 * t))
    start_vstar = tracker.best_value

    kept = [[] for _ in range(B)]
    counted = np.zeros(B, dtype=np.int64)
    fired = np.zeros(B, dtype=np.int64)
    violations = np.zeros(B, dtype=np.int64)
    done = np.zeros(B, dtype=bool)

    round_size = batch0
    while not done.all():
        active = np.flatnonzero(~done)
        sizes = np.minimum(round_size, max_proposals - fired[active])
        exhausted = sizes <= 0
        if exhausted.any():
            done[active[exhausted]] = True
            active = active[~exhausted]
            sizes = sizes[~exhausted]
            if active.size == 0:
                break
        total = int(sizes.sum())
        xi = rng.standard_normal((total, d))
        u = rng.random(total)
        z = np.repeat(scale * centers[active], sizes, axis=0) + noise * xi
        vals = eval_potential(target, z, ledger, "score-estimation")
        vstar = tracker.best_value
        with np.errstate(divide="ignore"):
            accept = np.log(u) < (vstar - vals)
        offsets = np.concatenate(([0], np.cumsum(sizes)))
        for j, i in enumerate(active):
            lo, hi = offsets[j], offsets[j + 1]
            acc = accept[lo:hi]
            viol = vals[lo:hi] < vstar
            need = n - len(kept[i])
            pos = np.flatnonzero(acc)
            fired[i] += hi - lo
            if pos.size >= need:
                cut = pos[need - 1] + 1
                kept[i].extend(z[lo : lo + cut][acc[:cut]])
                counted[i] += cut
                violations[i] += int(viol[:cut].sum())
                done[i] = True
            else:
                kept[i].extend(z[lo:hi][acc])
                counted[i] += hi - lo
                violations[i] += int(viol.sum())
        jbest = int(np.argmin(vals))
        if vals[jbest] < vstar:
            tracker.update(z[jbest], float(vals[jbest]))
        round_size = min(2 * round_size, batch_cap)

    improved = tracker.best_value < start_vstar
    results = []
    for i in range(B):
        samples = np.array(kept[i]) if kept[i] else np.empty((0, d))
        used = int(counted[i])
        results.append(
            RgoResult(
                samples=samples,
                proposals_used=used,
                acceptance_rate=samples.shape[0] / used if used else 0.0,
                envelope_violations=int(violations[i]),
                vstar_improved=improved,
                completed=samples.shape[0] >= n,
            )
        )
    return results


def rgo_sample(
    target: Target,
    tracker: MinTracker,
    req: RgoRequest,
    ledger: QueryLedger,
    rng: np.random.Generator,
    batch0: int = 64,
) -> RgoResult:
    """Exact conditional sampling at a single state; raises RgoStarved on zero acceptances."""
    res = rgo_sample_many(
        target,
        tracker,
        req.t,
        req.x[None, :],
        req.n,
        req.max_proposals,
        ledger,
        rng,
        batch0=batch0,
    )[0]
    if res.samples.shape[0] == 0:
        raise RgoStarved(res.proposals_used, t=req.t, x=req.x)
    return res
