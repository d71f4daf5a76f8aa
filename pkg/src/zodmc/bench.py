"""Config-driven experiment harness.

Runs the diffusion sampler against baselines at matched oracle complexity,
sweeps a budget / mode-separation radius / dimension axis, and emits
plot-ready CSV plus JSON manifests. Ground-truth batches are produced once by
exact rejection sampling and cached content-addressed by (target, seed, n).
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from .baselines import UlaConfig, ground_truth_rejection, mixture_proposal, mueller_proposal, run_ula
from .diffuser import ZodmcConfig, run_zodmc
from .errors import ConfigurationError, UnsupportedTargetError
from .metrics import compare_batches, mode_weights
from .rgo import find_potential_min, rgo_sample_many
from .schedule import build_schedule
from .score import SampleCountPolicy, estimate_score, score_l2_error
from .targets import QueryLedger, Target, target_from_config

SWEEP_KINDS = ("budget", "radius", "dimension")


@dataclass
class ExperimentConfig:
    name: str
    target: dict
    algorithms: list
    oracle_budget: object = 2200
    sweep: dict = field(default_factory=dict)
    n_output_samples: int = 2048
    ground_truth_n: int = 50_000
    metrics: list = field(default_factory=lambda: ["mmd", "w2", "mode_weights", "moments"])
    seed: int = 0
    output_dir: str = "results"
    w2_max_n: int = 2048
    workers: int = 1

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(raw) - known
        if extra:
            raise ConfigurationError(f"unknown config keys: {sorted(extra)}")
        for required in ("name", "target", "algorithms"):
            if required not in raw:
                raise ConfigurationError(f"config is missing required key {required!r}")
        return cls(**raw)

    def sweep_cells(self) -> list:
        if self.sweep:
            kind = self.sweep.get("kind")
            if kind not in SWEEP_KINDS:
                raise ConfigurationError(f"sweep kind must be one of {SWEEP_KINDS}")
            values = list(self.sweep.get("values", []))
            if not values:
                raise ConfigurationError("sweep requires a nonempty values list")
            return [(kind, v) for v in values]
        if isinstance(self.oracle_budget, (list, tuple)):
            return [("budget", int(b)) for b in self.oracle_budget]
        return [("budget", int(self.oracle_budget))]


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigurationError("config file must contain a mapping")
    return ExperimentConfig.from_dict(raw)


def _cell_seed(seed: int, *parts) -> int:
    ss = np.random.SeedSequence([int(seed)] + [int(p) for p in parts])
    return int(ss.generate_state(1)[0])


def _cell_target(cfg: ExperimentConfig, kind: str, value) -> Target:
    tcfg = dict(cfg.target)
    if kind == "radius":
        tcfg["radius"] = float(value)
    elif kind == "dimension":
        tcfg["dim"] = int(value)
    return target_from_config(tcfg)


def _gt_proposal(target: Target, tcfg: dict):
    if target.gmm is not None:
        return mixture_proposal(target.gmm, inflate=3.0)
    kind = tcfg.get("kind")
    if kind == "gmm+annulus":
        base = target_from_config({**tcfg, "kind": "gmm"})
        # The ring penalty only lowers the density, so the plain mixture
        # dominates with M = 1.
        return mixture_proposal(base.gmm, inflate=1.0)
    if kind == "mueller-brown":
        return mueller_proposal(target)
    raise UnsupportedTargetError(f"no ground-truth proposal recipe for target kind {kind!r}")


def ground_truth_batch(cfg: ExperimentConfig, target: Target, tcfg: dict, out_dir: Path):
    """Exact reference samples, cached content-addressed by (target, seed, n)."""
    key_src = json.dumps(
        {"target": tcfg, "seed": cfg.seed, "n": cfg.ground_truth_n}, sort_keys=True
    )
    key = hashlib.sha256(key_src.encode()).hexdigest()[:16]
    cache = out_dir / "gt_cache" / f"gt_{key}.npy"
    if cache.exists():
        return np.load(cache)
    proposal = _gt_proposal(target, tcfg)
    ledger = QueryLedger()
    rng = np.random.default_rng(_cell_seed(cfg.seed, 0xB00))
    batch = ground_truth_rejection(target, proposal, cfg.ground_truth_n, ledger, rng)
    cache.parent.mkdir(parents=True, exist_ok=True)
    np.save(cache, batch.points)
    return batch.points


def _build_zodmc_config(algo: dict, cfg: ExperimentConfig, budget, seed: int) -> ZodmcConfig:
    sched_cfg = algo.get("schedule", {"kind": "exp_decay", "T": 2.0, "N": 25, "delta": 5e-3})
    sched = build_schedule(
        sched_cfg.get("kind", "exp_decay"),
        float(sched_cfg.get("T", 2.0)),
        int(sched_cfg.get("N", 25)),
        float(sched_cfg.get("delta", 5e-3)),
    )
    pol_cfg = algo.get("policy", {})
    policy = SampleCountPolicy(
        kind=pol_cfg.get("kind", "fixed"),
        n_fixed=int(pol_cfg.get("n_fixed", 10_000)),
        c=float(pol_cfg.get("c", 1.0)),
        eps=float(pol_cfg.get("eps", 0.5)),
        n_min=int(pol_cfg.get("n_min", 1)),
        n_max=int(pol_cfg.get("n_max", 10_000)),
    )
    budget_mode = algo.get("budget", "per_score")
    kwargs = {}
    if budget is not None:
        if budget_mode == "per_score":
            kwargs["max_proposals_per_score"] = int(budget)
        elif budget_mode == "total":
            kwargs["total_budget"] = int(budget)
        else:
            raise ConfigurationError(f"unknown zodmc budget mode {budget_mode!r}")
    return ZodmcConfig(
        schedule=sched,
        policy=policy,
        batch_size=int(algo.get("batch_size", cfg.n_output_samples)),
        seed=seed,
        starvation_retries=int(algo.get("starvation_retries", 3)),
        **kwargs,
    )


def run_cell(cfg: ExperimentConfig, kind: str, value, out_dir: Path) -> dict:
    """One sweep cell: run every algorithm, compare to ground truth, write files."""
    tcfg = dict(cfg.target)
    if kind == "radius":
        tcfg["radius"] = float(value)
    elif kind == "dimension":
        tcfg["dim"] = int(value)
    target = target_from_config(tcfg)
    gt = ground_truth_batch(cfg, target, tcfg, out_dir)
    mode_means = target.gmm.means if target.gmm is not None else None
    gt_weights = mode_weights(gt, mode_means) if mode_means is not None else None
    budget = value if kind == "budget" else (
        int(cfg.oracle_budget) if not isinstance(cfg.oracle_budget, (list, tuple)) else None
    )

    rows, cell_manifest, errors = [], {}, {}
    matched_total = None
    for ai, algo in enumerate(cfg.algorithms):
        name = algo.get("name")
        label = algo.get("label", name)
        seed = _cell_seed(cfg.seed, SWEEP_KINDS.index(kind), int(value * 1000) % 100000, ai)
        ledger = QueryLedger()
        try:
            if name == "zodmc":
                zc = _build_zodmc_config(algo, cfg, budget, seed)
                batch = run_zodmc(target, zc, ledger)
                matched_total = ledger.zeroth_order_count
                extra = {
                    "grid": zc.schedule.grid.tolist(),
                    "per_step_acceptance": batch.per_step_acceptance.tolist(),
                    "truncated_at_step": batch.truncated_at_step,
                }
            elif name == "ula":
                total = matched_total
                if algo.get("budget", "matched") == "total" or total is None:
                    total = int(budget) if budget is not None else 100_000
                n_chains = int(algo.get("n_chains", cfg.n_output_samples))
                n_steps = max(1, total // (2 * target.dim * n_chains))
                uc = UlaConfig(
                    step=float(algo.get("step", 0.01)),
                    n_steps=n_steps,
                    n_chains=n_chains,
                    init=algo.get("init", "origin"),
                    fd_step=float(algo.get("fd_step", 1e-5)),
                )
                batch = run_ula(target, uc, ledger, np.random.default_rng(seed))
                extra = {"matched_total": total, "n_steps": n_steps, "diverged": batch.diverged}
            else:
                raise ConfigurationError(f"unknown algorithm {name!r}")
        except Exception as exc:  # per-cell isolation: other cells proceed
            errors[label] = f"{type(exc).__name__}: {exc}"
            continue

        pts = batch.points
        if pts.shape[0] > cfg.n_output_samples:
            sub = np.random.default_rng(seed).choice(
                pts.shape[0], size=cfg.n_output_samples, replace=False
            )
            pts = pts[sub]
        report = compare_batches(
            pts, gt, mode_means=mode_means, w2_max_n=cfg.w2_max_n,
            rng=np.random.default_rng(_cell_seed(cfg.seed, 0xE7, ai)),
        )
        tv = None
        if gt_weights is not None and report.mode_weights is not None:
            tv = float(0.5 * np.sum(np.abs(np.asarray(report.mode_weights) - gt_weights)))
        row = {
            "sweep": kind,
            "value": value,
            "algorithm": label,
            "oracle_total": ledger.zeroth_order_count,
            "mmd": report.mmd,
            "w2": report.w2,
            "mean_error": report.mean_error,
            "cov_error": report.cov_error,
            "mode_weight_tv": tv,
        }
        rows.append(row)

        stem = f"{label}_{kind}{value:g}"
        header = ",".join(f"x{i}" for i in range(pts.shape[1]))
        np.savetxt(out_dir / f"{stem}_samples.csv", pts, delimiter=",",
                   header=header, comments="", fmt="%.17g")
        with open(out_dir / f"{stem}_metrics.json", "w") as fh:
            json.dump({**report.to_dict(), "mode_weight_tv": tv}, fh, indent=2, sort_keys=True)
        slack = None
        if budget is not None and name == "zodmc" and algo.get("budget") == "total":
            slack = max(0, ledger.zeroth_order_count - int(budget))
        cell_manifest[label] = {
            "seed": seed,
            "ledger": ledger.snapshot(),
            "budget": budget,
            "budget_slack": slack,
            **extra,
        }
    return {"rows": rows, "manifest": cell_manifest, "errors": errors,
            "kind": kind, "value": value}


def _cell_worker(raw_cfg: dict, kind: str, value, out_dir: str) -> dict:
    cfg = ExperimentConfig.from_dict(raw_cfg)
    return run_cell(cfg, kind, value, Path(out_dir))


def run_experiment(cfg: ExperimentConfig, raw_cfg: dict = None) -> int:
    """Run every sweep cell; returns a process exit code (0 ok, 3 all failed)."""
    out_dir = Path(cfg.output_dir) / cfg.name
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = cfg.sweep_cells()

    # Materialize ground truth up front so parallel cells share the cache.
    seen = set()
    for kind, value in cells:
        tkey = (kind, value) if kind in ("radius", "dimension") else ("fixed", 0)
        if tkey in seen:
            continue
        seen.add(tkey)
        target = _cell_target(cfg, kind, value)
        tcfg = dict(cfg.target)
        if kind == "radius":
            tcfg["radius"] = float(value)
        elif kind == "dimension":
            tcfg["dim"] = int(value)
        ground_truth_batch(cfg, target, tcfg, out_dir)

    results = []
    if cfg.workers > 1 and raw_cfg is not None and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futs = [pool.submit(_cell_worker, raw_cfg, k, v, str(out_dir)) for k, v in cells]
            results = [f.result() for f in futs]
    else:
        for kind, value in cells:
            results.append(run_cell(cfg, kind, value, out_dir))

    results.sort(key=lambda r: (str(r["kind"]), float(r["value"])))
    rows = [row for r in results for row in r["rows"]]
    errors = {f"{r['kind']}={r['value']}": r["errors"] for r in results if r["errors"]}

    columns = ["sweep", "value", "algorithm", "oracle_total",
               "mmd", "w2", "mean_error", "cov_error", "mode_weight_tv"]
    with open(out_dir / "curves.csv", "w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[c]) for c in columns) + "\n")

    manifest = {
        "name": cfg.name,
        "seed": cfg.seed,
        "versions": {"zodmc": __version__, "numpy": np.__version__, "scipy": scipy.__version__},
        "config": raw_cfg,
        "cells": {f"{r['kind']}={r['value']}": r["manifest"] for r in results},
        "errors": errors,
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)

    if rows:
        return 0
    return 3


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def run_score_error_study(cfg: ExperimentConfig) -> int:
    """Score-error curve (t, mean, std) over the schedule grid, written as CSV."""
    out_dir = Path(cfg.output_dir) / cfg.name
    out_dir.mkdir(parents=True, exist_ok=True)
    target = target_from_config(dict(cfg.target))
    if target.analytic_score_at_time is None:
        raise UnsupportedTargetError(
            "score-error study needs a target with analytic scores (Gaussian mixtures)"
        )
    algo = next((a for a in cfg.algorithms if a.get("name") == "zodmc"), None)
    if algo is None:
        raise ConfigurationError("score-error study needs a zodmc algorithm entry")
    budget = cfg.oracle_budget if not isinstance(cfg.oracle_budget, (list, tuple)) else None
    zc = _build_zodmc_config(algo, cfg, budget, _cell_seed(cfg.seed, 0x5C))
    n_eval = int(algo.get("n_eval_points", 64))

    ledger = QueryLedger()
    tracker = find_potential_min(target, np.zeros(target.dim), ledger)
    rng = np.random.default_rng(_cell_seed(cfg.seed, 0x5D))

    def estimator(t, x):
        return estimate_score(
            target, tracker, t, x, zc.policy, ledger, rng,
            max_proposals=zc.max_proposals_per_score,
        ).value

    grid = zc.schedule.grid
    times = [zc.schedule.T - grid[k] for k in range(zc.schedule.N)]
    with open(out_dir / "score_error.csv", "w") as fh:
        fh.write("t,mean_sq_error,std_sq_error\n")
        for t in times:
            mean, std = score_l2_error(target, t, estimator, n_eval, rng)
            fh.write(f"{t:.17g},{mean:.17g},{std:.17g}\n")
    return 0


def run_acceptance_study(cfg: ExperimentConfig) -> int:
    """Mean accepted proposals per probe block at each grid time, written as CSV."""
    out_dir = Path(cfg.output_dir) / cfg.name
    out_dir.mkdir(parents=True, exist_ok=True)
    target = target_from_config(dict(cfg.target))
    algo = next((a for a in cfg.algorithms if a.get("name") == "zodmc"), None)
    if algo is None:
        raise ConfigurationError("acceptance study needs a zodmc algorithm entry")
    budget = cfg.oracle_budget if not isinstance(cfg.oracle_budget, (list, tuple)) else None
    zc = _build_zodmc_config(algo, cfg, budget, _cell_seed(cfg.seed, 0xAC))
    zc.record_trace = True
    n_traj = int(algo.get("n_trajectories", 1000))
    probes = int(algo.get("probes_per_step", 10_000))
    zc.batch_size = n_traj

    ledger = QueryLedger()
    batch = run_zodmc(target, zc, ledger)
    trace = batch.trace
    tracker_point = np.asarray(batch.meta["vstar_point"])
    tracker = find_potential_min(target, tracker_point, ledger, max_iters=0)

    rng = np.random.default_rng(_cell_seed(cfg.seed, 0xAD))
    grid = zc.schedule.grid
    rows = []
    chunk = max(1, int(2_000_000 // probes))
    for k in range(zc.schedule.N):
        t = zc.schedule.T - grid[k]
        states = trace[k]
        accepted = 0
        for lo in range(0, states.shape[0], chunk):
            part = states[lo : lo + chunk]
            res = rgo_sample_many(
                target, tracker, t, part, probes + 1, probes, ledger, rng,
                batch0=probes, batch_cap=probes,
            )
            accepted += sum(r.samples.shape[0] for r in res)
        rows.append((t, accepted / states.shape[0]))
    with open(out_dir / "acceptance.csv", "w") as fh:
        fh.write("t,mean_accepted_per_block,probes_per_block\n")
        for t, mean_acc in rows:
            fh.write(f"{t:.17g},{mean_acc:.17g},{probes}\n")
    return 0


def validate_config(path) -> list:
    """Build everything a run would need; return a list of problems (empty if ok)."""
    problems = []
    try:
        cfg = load_config(path)
    except (ConfigurationError, OSError, yaml.YAMLError) as exc:
        return [str(exc)]
    try:
        cells = cfg.sweep_cells()
    except ConfigurationError as exc:
        return [str(exc)]
    for kind, value in cells[:1]:
        try:
            _cell_target(cfg, kind, value)
        except Exception as exc:
            problems.append(f"target: {exc}")
    for algo in cfg.algorithms:
        name = algo.get("name")
        if name not in ("zodmc", "ula"):
            problems.append(f"algorithm {name!r} has no runner")
        elif name == "zodmc":
            try:
                _build_zodmc_config(algo, cfg, None, 0)
            except Exception as exc:
                problems.append(f"zodmc config: {exc}")
    budgets = cfg.oracle_budget if isinstance(cfg.oracle_budget, (list, tuple)) else [cfg.oracle_budget]
    if any(int(b) <= 0 for b in budgets):
        problems.append("oracle budgets must be positive")
    return problems
