"""Single runs and perturbation folds comparing the rover with tuned baselines."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from ..anglenet import log_uniform, random_start
from ..baselines import METHODS, BaselineConfig, baseline_run, grid_search_tune
from ..errors import RejectedInput
from ..fields import DEFAULT_STARTS, ScalarField, field_by_name
from ..highdim import PairBudget, default_budget, run_highdim
from ..protogen import MODALITIES, sample_proto
from ..steppolicy import TRAIN_ALPHA, TRAIN_DELTA, run_episode
from .records import RunRecord, from_baseline
from .svgplot import line_plot

log = logging.getLogger(__name__)

ROSTER_2D = ("rover", "gd", "nesterov", "newton", "nelder_mead", "cmaes")
OPTIMIZERS = ("rover",) + METHODS


@dataclass
class ExperimentSpec:
    field: str = "rosenbrock"
    theta0: Optional[tuple] = None
    radius: float = 0.1
    folds: int = 20
    horizon: int = 50
    roster: tuple = ROSTER_2D
    seed: int = 0
    output: Optional[str] = None
    alpha0: Optional[float] = None
    delta0: Optional[float] = None
    tune: bool = True

    def __post_init__(self):
        if self.folds < 1:
            raise RejectedInput("fold count must be at least 1")
        if not self.roster:
            raise RejectedInput("optimizer roster is empty")
        unknown = [o for o in self.roster if o not in OPTIMIZERS]
        if unknown:
            raise RejectedInput(f"unknown optimizers {unknown}; choose from {OPTIMIZERS}")
        if self.horizon < 0 or self.radius < 0:
            raise RejectedInput("horizon and perturbation radius must be non-negative")


def resolve_field(name: str, seed: int = 0):
    """Field plus default start: a seeded prototypical landscape or a named field."""
    if name in MODALITIES:
        rng = np.random.default_rng([seed, 7])
        f = sample_proto(name, rng, seed=seed)
        return f, random_start(f.center, rng)
    f = field_by_name(name)
    start = DEFAULT_STARTS.get(name)
    return f, None if start is None else np.array(start, dtype=float)


def initial_controls(spec: ExperimentSpec):
    """Initial step size and resolution: given, or drawn from the training ranges."""
    rng = np.random.default_rng([spec.seed, 11])
    alpha = spec.alpha0 if spec.alpha0 is not None else log_uniform(rng, *TRAIN_ALPHA)
    delta = spec.delta0 if spec.delta0 is not None else log_uniform(rng, *TRAIN_DELTA)
    return float(alpha), float(delta)


# ---------------------------------------------------------------------------
# single runs

def rover_run(f: ScalarField, theta0, angle, actor, horizon: int, alpha0: float, delta0: float,
              budget: Optional[PairBudget] = None, seed: int = 0) -> RunRecord:
    theta0 = np.asarray(theta0, dtype=float)
    if horizon == 0:
        return RunRecord("rover", theta0[None], [f.value(theta0)], [alpha0], [delta0])
    if f.dim == 2:
        ep = run_episode(actor, angle, f, (theta0, alpha0, delta0), horizon, mode="raw")
        return RunRecord("rover", ep.thetas, ep.values, ep.alphas, ep.deltas, diverged=ep.terminated)
    budget = budget or default_budget(f.dim)
    run = run_highdim(f, theta0, budget, angle, actor, horizon, alpha0, delta0, np.random.default_rng(seed))
    return RunRecord("rover", run.thetas, run.values, diverged=run.diverged,
                     meta={"strategy": budget.strategy, "pairs_per_step": run.pairs_per_step})


def candidate_grid(method: str, horizon: int, seed: int = 0) -> list:
    """Hyperparameter candidates searched when tuning a baseline."""
    base = BaselineConfig(method=method, iterations=max(1, horizon), seed=seed)
    if method in ("gd", "nesterov", "adam"):
        return [replace(base, step_size=float(s)) for s in np.logspace(-5, 0, 11)]
    if method == "newton":
        return [replace(base, damping=float(l)) for l in (0.0, 1e-3, 1e-2, 1e-1, 1.0, 10.0)]
    if method == "nelder_mead":
        return [replace(base, simplex_step=float(s)) for s in (0.05, 0.1, 0.25, 0.5, 1.0, 2.0)]
    return [replace(base, sigma0=float(s)) for s in (0.05, 0.1, 0.25, 0.5, 1.0, 2.0)]


def tune_baseline(method: str, problems, horizon: int, seed: int = 0) -> BaselineConfig:
    return grid_search_tune(method, problems, candidate_grid(method, horizon, seed))


def run_optimizer(name: str, f: ScalarField, theta0, horizon: int, *, config: Optional[BaselineConfig] = None,
                  checkpoints=None, alpha0: float = 0.1, delta0: float = 0.1, seed: int = 0,
                  budget: Optional[PairBudget] = None) -> RunRecord:
    if name == "rover":
        if checkpoints is None:
            raise RejectedInput("the rover needs (angle, actor) checkpoints")
        angle, actor = checkpoints
        return rover_run(f, theta0, angle, actor, horizon, alpha0, delta0, budget, seed)
    if horizon == 0:
        theta0 = np.asarray(theta0, dtype=float)
        return RunRecord(name, theta0[None], [f.value(theta0)])
    cfg = replace(config or BaselineConfig(method=name), method=name, iterations=horizon)
    return from_baseline(baseline_run(name, f, theta0, cfg))


# ---------------------------------------------------------------------------
# folds

@dataclass
class FoldResult:
    spec: ExperimentSpec
    runs: dict
    configs: dict = field(default_factory=dict)
    failures: int = 0

    def curves(self, optimizer: str):
        """Per-step mean, min and max of f over the fold (steps 0..horizon)."""
        V = np.stack([r.padded_values(self.spec.horizon + 1) for r in self.runs[optimizer]])
        with np.errstate(all="ignore"):
            ok = np.isfinite(V)
            cnt = ok.sum(axis=0)
            mean = np.where(cnt > 0, np.where(ok, V, 0).sum(axis=0) / np.maximum(cnt, 1), np.nan)
            lo = np.where(cnt > 0, np.where(ok, V, np.inf).min(axis=0), np.nan)
            hi = np.where(cnt > 0, np.where(ok, V, -np.inf).max(axis=0), np.nan)
        return mean, lo, hi, cnt

    def finals(self, optimizer: str) -> np.ndarray:
        return np.array([r.final if not r.diverged else np.inf for r in self.runs[optimizer]])


def perturbed_starts(theta0, radius: float, folds: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 3])
    theta0 = np.asarray(theta0, dtype=float)
    return theta0 + radius * rng.standard_normal((folds, len(theta0)))


def run_fold(spec: ExperimentSpec, checkpoints=None, write: bool = True, f: Optional[ScalarField] = None,
             theta0=None) -> FoldResult:
    """Run every roster optimizer from each perturbed start; failures become gaps."""
    if f is None:
        f, default_start = resolve_field(spec.field, spec.seed)
        theta0 = spec.theta0 if spec.theta0 is not None else (theta0 if theta0 is not None else default_start)
    if theta0 is None:
        raise RejectedInput(f"no start point for {spec.field!r}; pass theta0")
    starts = perturbed_starts(theta0, spec.radius, spec.folds, spec.seed)
    alpha0, delta0 = initial_controls(spec)
    problems = [(f, s) for s in starts]
    runs, configs, failures = {}, {}, 0
    for opt in spec.roster:
        cfg = None
        if opt != "rover" and spec.tune and spec.horizon > 0:
            cfg = tune_baseline(opt, problems, spec.horizon, spec.seed)
            configs[opt] = cfg
        runs[opt] = []
        for m, s in enumerate(starts):
            member_cfg = None if cfg is None else replace(cfg, seed=spec.seed * 1000 + m)
            try:
                rec = run_optimizer(opt, f, s, spec.horizon, config=member_cfg, checkpoints=checkpoints,
                                    alpha0=alpha0, delta0=delta0, seed=spec.seed * 1000 + m)
            except Exception as exc:  # a failed member is a gap, not a failed fold
                log.warning("%s run %d on %s failed: %s", opt, m, spec.field, exc)
                failures += 1
                rec = RunRecord(opt, np.asarray(s)[None], [np.nan], diverged=True, meta={"error": str(exc)})
            runs[opt].append(rec)
    result = FoldResult(spec, runs, configs, failures)
    if write and spec.output:
        out = Path(spec.output)
        out.mkdir(parents=True, exist_ok=True)
        write_fold_csv(out / f"fold_{spec.field}.csv", result)
        plot_fold(out / f"fold_{spec.field}.svg", result)
    return result


FOLD_HEADER = ("optimizer", "step", "mean", "min", "max", "runs")


def write_fold_csv(path, result: FoldResult) -> None:
    """One row per optimizer and iteration ``1..horizon``."""
    with open(path, "w") as fh:
        fh.write(",".join(FOLD_HEADER) + "\n")
        for opt in result.spec.roster:
            mean, lo, hi, cnt = result.curves(opt)
            for t in range(1, result.spec.horizon + 1):
                fh.write(f"{opt},{t},{mean[t]!r},{lo[t]!r},{hi[t]!r},{int(cnt[t])}\n")


def plot_fold(path, result: FoldResult, title: Optional[str] = None) -> None:
    f_star = None
    series = {}
    for opt in result.spec.roster:
        mean, lo, hi, _ = result.curves(opt)
        series[opt] = (mean, lo, hi)
    # shift by the best value seen so the log axis shows the gap
    allv = np.concatenate([np.concatenate([m, l]) for m, l, _ in series.values()])
    allv = allv[np.isfinite(allv)]
    f_star = float(allv.min()) if allv.size else 0.0
    shifted = {k: tuple(None if a is None else a - f_star + 1e-12 for a in v) for k, v in series.items()}
    line_plot(path, shifted, title or f"{result.spec.field} ({result.spec.folds} perturbed starts)",
              ylabel="f - min f", log_y=True)


# ---------------------------------------------------------------------------
# single-run entry point

def optimize(field_name: str, optimizer: str, theta0=None, horizon: int = 50, *, checkpoints=None,
             alpha0: float = 0.1, delta0: float = 0.1, seed: int = 0, config: Optional[BaselineConfig] = None,
             budget: Optional[PairBudget] = None) -> RunRecord:
    if optimizer not in OPTIMIZERS:
        raise RejectedInput(f"unknown optimizer {optimizer!r}; choose from {OPTIMIZERS}")
    f, start = resolve_field(field_name, seed)
    theta0 = start if theta0 is None else np.asarray(theta0, dtype=float)
    if theta0 is None:
        rng = np.random.default_rng(seed)
        theta0 = 0.1 * rng.standard_normal(f.dim)
    if len(theta0) != f.dim:
        raise RejectedInput(f"start point has {len(theta0)} coordinates, field has {f.dim}")
    if horizon < 0:
        raise RejectedInput("horizon must be non-negative")
    return run_optimizer(optimizer, f, theta0, horizon, config=config, checkpoints=checkpoints,
                         alpha0=alpha0, delta0=delta0, seed=seed, budget=budget)


def normalized_gap(values, f_star: float) -> float:
    d0 = values[0] - f_star
    if abs(d0) < 1e-12:
        return 0.0
    return float((values[-1] - f_star) / d0) if math.isfinite(values[-1]) else math.inf
