"""Discretization grids for the reverse process.

A schedule is a strictly increasing grid 0 = t_0 < ... < t_N = T - delta.
Three constructions are supported:

- ``constant``: uniform steps.
- ``linear``: t_k = T - (delta + (N-k)*gamma)^2 with gamma = (sqrt(T)-delta)/N,
  affinely rescaled so the endpoints land exactly on 0 and T - delta.
- ``exp_decay``: gamma_k = kappa * min(1, T - t_k), with kappa solved by
  bisection so that exactly N steps land on T - delta. The closed-form seed
  kappa0 = (T + ln(1/delta)) / N fixes only the order of magnitude.

Grids must satisfy a bounded consecutive-step-ratio condition
(0.1 <= gamma_k / gamma_{k-1} <= 10), asserted at build time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError

KINDS = ("constant", "linear", "exp_decay")
_RATIO_LO, _RATIO_HI = 0.1, 10.0
_KAPPA_MAX = 0.9  # keeps the shrink-regime step ratio 1 - kappa above _RATIO_LO


@dataclass(frozen=True)
class Schedule:
    kind: str
    T: float
    delta: float
    N: int
    grid: np.ndarray
    gammas: np.ndarray = field(init=False)
    kappa: Optional[float] = None

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "gammas", np.diff(grid))

    def to_config(self) -> dict:
        return {"kind": self.kind, "T": self.T, "N": self.N, "delta": self.delta}


def _exp_decay_landing(T: float, kappa: float, N: int) -> float:
    t = 0.0
    for _ in range(N):
        t += kappa * min(1.0, T - t)
    return t


def _exp_decay_grid(T: float, kappa: float, N: int) -> np.ndarray:
    grid = np.zeros(N + 1)
    for k in range(N):
        grid[k + 1] = grid[k] + kappa * min(1.0, T - grid[k])
    return grid


def _min_feasible_exp_n(T: float, delta: float) -> int:
    t, n = 0.0, 0
    target = T - delta
    while t < target and n < 100000:
        t += _KAPPA_MAX * min(1.0, T - t)
        n += 1
    return n


def build_schedule(kind: str, T: float, N: int, delta: float) -> Schedule:
    if kind not in KINDS:
        raise ConfigurationError(f"unknown schedule kind {kind!r}; expected one of {KINDS}")
    if not T > 1:
        raise ConfigurationError("horizon T must exceed 1")
    if not (0 < delta < 1 and delta < T):
        raise ConfigurationError("early-stop delta must lie in (0, 1)")
    if N < 1 or (kind != "constant" and N < 2):
        raise ConfigurationError(f"{kind} schedule requires N >= {1 if kind == 'constant' else 2}")

    horizon = T - delta
    kappa = None
    if kind == "constant":
        grid = np.linspace(0.0, horizon, N + 1)
    elif kind == "linear":
        gamma = (math.sqrt(T) - delta) / N
        raw = T - (delta + (N - np.arange(N + 1)) * gamma) ** 2
        # As printed the grid spans [0, T - delta^2]; pin the endpoints to
        # [0, T - delta] and rescale the interior so runs are reproducible
        # bit for bit.
        grid = (raw - raw[0]) * (horizon / (raw[-1] - raw[0]))
    else:
        if _exp_decay_landing(T, _KAPPA_MAX, N) < horizon:
            raise ConfigurationError(
                f"exp_decay cannot reach T - delta in N={N} steps with kappa <= {_KAPPA_MAX}; "
                f"minimal feasible N is {_min_feasible_exp_n(T, delta)}"
            )
        lo, hi = 1e-12, _KAPPA_MAX
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if _exp_decay_landing(T, mid, N) < horizon:
                lo = mid
            else:
                hi = mid
        kappa = 0.5 * (lo + hi)
        grid = _exp_decay_grid(T, kappa, N)

    grid[0] = 0.0
    grid[-1] = horizon
    sched = Schedule(kind=kind, T=float(T), delta=float(delta), N=int(N), grid=grid, kappa=kappa)
    problems = validate_schedule(sched)
    if problems:
        raise ConfigurationError("built schedule violates invariants: " + "; ".join(problems))
    return sched


def validate_schedule(s: Schedule) -> list:
    """Diagnostic invariant check; returns a list of violations (empty if valid)."""
    out = []
    grid = np.asarray(s.grid, dtype=float)
    if grid.shape != (s.N + 1,):
        out.append(f"grid has {grid.shape[0]} points, expected N+1={s.N + 1}")
        return out
    if abs(grid[0]) > 1e-12:
        out.append("grid does not start at 0")
    if abs(grid[-1] - (s.T - s.delta)) > 1e-12:
        out.append("grid does not end at T - delta")
    gammas = np.diff(grid)
    for k, g in enumerate(gammas):
        if g <= 0:
            out.append(f"non-increasing at k={k}")
    if np.all(gammas > 0) and len(gammas) > 1:
        ratios = gammas[1:] / gammas[:-1]
        for k, r in enumerate(ratios, start=1):
            if not (_RATIO_LO <= r <= _RATIO_HI):
                out.append(f"consecutive-ratio bound broken at k={k}: ratio={r:.4g}")
    if s.kind == "exp_decay" and s.kappa is not None and np.all(gammas > 0):
        expected = s.kappa * np.minimum(1.0, s.T - grid[:-1])
        bad = np.flatnonzero(np.abs(gammas - expected) > 1e-9)
        for k in bad:
            out.append(f"exp_decay step rule broken at k={k}")
    return out
