"""Hand-designed reference optimizers and their hyperparameter tuning.

All methods share one trajectory format: the iterate after every iteration
and its noiseless loss.  For the population methods (Nelder-Mead, CMA-ES)
the recorded iterate is the best point seen so far.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import RejectedInput
from .fields import ScalarField, finite_difference_gradient, finite_difference_hessian
from .neuralcore import AdamState, adam_update

log = logging.getLogger(__name__)

METHODS = ("gd", "nesterov", "newton", "nelder_mead", "cmaes", "adam")
# a run counts as diverged once its loss exceeds the start by this factor
BLOWUP = 1e6
EIG_FLOOR = 1e-14


@dataclass(frozen=True)
class BaselineConfig:
    method: str = "gd"
    step_size: float = 0.1
    momentum: float = 0.9
    damping: float = 0.0
    reflection: float = 1.0
    expansion: float = 2.0
    contraction: float = 0.5
    shrink: float = 0.5
    simplex_step: float = 0.5
    population: Optional[int] = None
    sigma0: float = 0.5
    iterations: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise RejectedInput(f"unknown baseline {self.method!r}; choose from {METHODS}")
        if not (self.step_size > 0 and self.sigma0 > 0 and self.simplex_step > 0):
            raise RejectedInput("step sizes must be positive")
        if self.iterations < 1:
            raise RejectedInput("iteration budget must be positive")
        if self.damping < 0:
            raise RejectedInput("Newton damping must be non-negative")


@dataclass
class Trajectory:
    method: str
    thetas: np.ndarray
    values: np.ndarray
    diverged: bool = False

    @property
    def final(self) -> float:
        return float(self.values[-1])


def _gradient(f: ScalarField, x):
    return np.asarray(f.grad(x), dtype=float) if f.grad is not None else finite_difference_gradient(f, x)


def _hessian(f: ScalarField, x):
    return np.asarray(f.hess(x), dtype=float) if f.hess is not None else finite_difference_hessian(f, x)


class _Recorder:
    def __init__(self, method, f, theta0):
        self.method, self.f = method, f
        self.thetas = [np.array(theta0, dtype=float)]
        self.values = [f.value(theta0)]
        self.limit = self.values[0] + BLOWUP * (1.0 + abs(self.values[0]))
        self.diverged = False

    def push(self, theta, value=None) -> bool:
        """Record one iterate; false once the run has diverged."""
        value = self.f.value(theta) if value is None else value
        if not (np.all(np.isfinite(theta)) and math.isfinite(value)) or value > self.limit:
            self.diverged = True
            log.info("%s diverged after %d iterations", self.method, len(self.values) - 1)
            return False
        self.thetas.append(np.array(theta, dtype=float))
        self.values.append(float(value))
        return True

    def result(self) -> Trajectory:
        return Trajectory(self.method, np.array(self.thetas), np.array(self.values), self.diverged)


def _gd(f, x, cfg, rec):
    for _ in range(cfg.iterations):
        x = x - cfg.step_size * _gradient(f, x)
        if not rec.push(x):
            return


def _nesterov(f, x, cfg, rec):
    v = np.zeros_like(x)
    for _ in range(cfg.iterations):
        ahead = x + cfg.momentum * v
        v = cfg.momentum * v - cfg.step_size * _gradient(f, ahead)
        x = x + v
        if not rec.push(x):
            return


def _newton(f, x, cfg, rec):
    eye = np.eye(len(x))
    for _ in range(cfg.iterations):
        g = _gradient(f, x)
        H = _hessian(f, x) + cfg.damping * eye
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        x = x - step
        if not rec.push(x):
            return


def _adam(f, x, cfg, rec):
    state = AdamState.zeros(len(x))
    for _ in range(cfg.iterations):
        x, state = adam_update(x, _gradient(f, x), state, cfg.step_size)
        if not rec.push(x):
            return


def _nelder_mead(f, x, cfg, rec):
    d = len(x)
    simplex = np.vstack([x, x + cfg.simplex_step * np.eye(d)])
    vals = f.batch(simplex)
    for _ in range(cfg.iterations):
        order = np.argsort(vals, kind="stable")
        simplex, vals = simplex[order], vals[order]
        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = centroid + cfg.reflection * (centroid - worst)
        fr = f.value(xr)
        if fr < vals[0]:
            xe = centroid + cfg.expansion * (xr - centroid)
            fe = f.value(xe)
            simplex[-1], vals[-1] = (xe, fe) if fe < fr else (xr, fr)
        elif fr < vals[-2]:
            simplex[-1], vals[-1] = xr, fr
        else:
            if fr < vals[-1]:
                xc = centroid + cfg.contraction * (xr - centroid)
            else:
                xc = centroid + cfg.contraction * (worst - centroid)
            fc = f.value(xc)
            if fc < min(fr, vals[-1]):
                simplex[-1], vals[-1] = xc, fc
            else:
                simplex[1:] = simplex[0] + cfg.shrink * (simplex[1:] - simplex[0])
                vals[1:] = f.batch(simplex[1:])
        best = int(np.argmin(vals))
        if not rec.push(simplex[best], float(vals[best])):
            return


def cmaes_weights(lam: int):
    mu = lam // 2
    w = math.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    return w / w.sum()


def _cmaes(f, x, cfg, rec):
    d = len(x)
    rng = np.random.default_rng(cfg.seed)
    lam = cfg.population or 4 + int(3 * math.log(d))
    w = cmaes_weights(lam)
    mu = len(w)
    mueff = 1.0 / np.sum(w**2)
    cc = (4 + mueff / d) / (d + 4 + 2 * mueff / d)
    cs = (mueff + 2) / (d + mueff + 5)
    c1 = 2 / ((d + 1.3) ** 2 + mueff)
    cmu = min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((d + 2) ** 2 + mueff))
    damps = 1 + 2 * max(0.0, math.sqrt((mueff - 1) / (d + 1)) - 1) + cs
    chi_n = math.sqrt(d) * (1 - 1 / (4 * d) + 1 / (21 * d * d))

    mean, sigma = x.copy(), cfg.sigma0
    C = np.eye(d)
    pc, ps = np.zeros(d), np.zeros(d)
    best_x, best_f = x.copy(), rec.values[0]
    for gen in range(cfg.iterations):
        eigval, B = np.linalg.eigh(C)
        eigval = np.maximum(eigval, EIG_FLOOR)
        D = np.sqrt(eigval)
        z = rng.standard_normal((lam, d))
        y = (z * D) @ B.T
        X = mean + sigma * y
        fx = f.batch(X)
        fx = np.where(np.isfinite(fx), fx, np.inf)
        order = np.argsort(fx, kind="stable")
        if fx[order[0]] < best_f:
            best_x, best_f = X[order[0]].copy(), float(fx[order[0]])
        y_sel = y[order[:mu]]
        y_w = w @ y_sel
        mean = mean + sigma * y_w
        inv_sqrt = (B / D) @ B.T
        ps = (1 - cs) * ps + math.sqrt(cs * (2 - cs) * mueff) * (inv_sqrt @ y_w)
        hsig = np.linalg.norm(ps) / math.sqrt(1 - (1 - cs) ** (2 * (gen + 1))) / chi_n < 1.4 + 2 / (d + 1)
        pc = (1 - cc) * pc + hsig * math.sqrt(cc * (2 - cc) * mueff) * y_w
        rank_mu = (y_sel.T * w) @ y_sel
        C = ((1 - c1 - cmu) * C + c1 * (np.outer(pc, pc) + (1 - hsig) * cc * (2 - cc) * C)
             + cmu * rank_mu)
        C = 0.5 * (C + C.T)
        sigma *= math.exp((cs / damps) * (np.linalg.norm(ps) / chi_n - 1))
        if not rec.push(best_x, best_f):
            return
        if not (np.isfinite(sigma) and sigma > 0):
            rec.diverged = True
            return


_RUNNERS = {"gd": _gd, "nesterov": _nesterov, "newton": _newton, "adam": _adam,
            "nelder_mead": _nelder_mead, "cmaes": _cmaes}


def baseline_run(method: str, f: ScalarField, theta0, config: BaselineConfig = None) -> Trajectory:
    """Run one reference optimizer from ``theta0`` for ``config.iterations`` iterations."""
    config = replace(config or BaselineConfig(method=method), method=method)
    x = np.array(theta0, dtype=float)
    if x.shape != (f.dim,):
        raise RejectedInput(f"start point has shape {x.shape}, field dimension is {f.dim}")
    rec = _Recorder(method, f, x)
    _RUNNERS[method](f, x, config, rec)
    return rec.result()


def grid_search_tune(method: str, problems: Sequence, candidates: Sequence[BaselineConfig]) -> BaselineConfig:
    """Pick the candidate with the lowest mean final loss over ``problems``.

    ``problems`` is a sequence of ``(field, theta0)``; diverged runs count as
    infinite loss.  Ties keep the earliest candidate.
    """
    if not candidates:
        raise RejectedInput("empty candidate grid")
    best, best_score = None, math.inf
    for cand in candidates:
        finals = []
        for f, theta0 in problems:
            tr = baseline_run(method, f, theta0, cand)
            finals.append(math.inf if tr.diverged else tr.final)
        score = float(np.mean(finals))
        log.debug("%s candidate %s: mean final %.4g", method, cand, score)
        if best is None or score < best_score:
            best, best_score = cand, score
    return best


def step_grid(method: str, iterations: int, sizes=None, **fixed) -> list:
    """Candidate configs over a log-spaced step-size range."""
    sizes = np.logspace(-4, 0, 9) if sizes is None else sizes
    return [BaselineConfig(method=method, step_size=float(s), iterations=iterations, **fixed) for s in sizes]
