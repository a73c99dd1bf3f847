"""Desk-scale regeneration of the table and figures, each with a manifest."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from pathlib import Path

import numpy as np

from ..anglenet import TableConfig, angle_dissimilarity_matrix, write_table_csv
from ..baselines import BaselineConfig
from ..errors import RejectedInput
from ..fields import (DEFAULT_STARTS, TEST_FUNCTIONS, init_mlp_params, make_binary_classification_field,
                      make_iris_mlp_field)
from ..highdim import PairBudget
from ..neuralcore import save_checkpoint
from ..protogen import MODALITIES
from .checkpoints import ANGLE_FILE, load_rover
from .experiments import ExperimentSpec, rover_run, run_fold, run_optimizer, tune_baseline
from .records import write_run_csv
from .svgplot import line_plot

log = logging.getLogger(__name__)

EXPERIMENTS = ("table1", "fig4", "fig5", "fig6", "fig7")


def _jsonable(obj):
    if dataclasses.is_dataclass(obj):
        return {k: _jsonable(v) for k, v in dataclasses.asdict(obj).items()}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Manifest:
    """Seeds, configurations, checkpoint hashes, output hashes and runtimes of one experiment."""

    def __init__(self, experiment: str, out: Path):
        self.experiment, self.out = experiment, out
        self.seeds, self.configs, self.checkpoints, self.runtimes = {}, {}, {}, {}
        self.results = {}
        self._t0 = time.perf_counter()

    def content_hash(self) -> str:
        files = {p.name: file_digest(p) for p in sorted(self.out.iterdir())
                 if p.is_file() and p.name != "manifest.json" and p.suffix != ".svg"}
        blob = json.dumps(_jsonable({"experiment": self.experiment, "seeds": self.seeds,
                                     "configs": self.configs, "checkpoints": self.checkpoints,
                                     "results": self.results, "files": files}), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    def write(self) -> Path:
        self.runtimes["total_seconds"] = time.perf_counter() - self._t0
        doc = {"experiment": self.experiment, "seeds": self.seeds, "configs": self.configs,
               "checkpoints": self.checkpoints, "results": self.results, "runtimes": self.runtimes,
               "hash": self.content_hash()}
        path = self.out / "manifest.json"
        path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")
        return path


def reproduce(experiment: str, out_dir, checkpoint_dir=None, quick: bool = False, progress=None) -> Manifest:
    """Run one named experiment into ``out_dir``.  ``quick`` shrinks every budget for smoke runs."""
    if experiment not in EXPERIMENTS:
        raise RejectedInput(f"unknown experiment {experiment!r}; choose from {EXPERIMENTS}")
    out = Path(out_dir) / experiment
    out.mkdir(parents=True, exist_ok=True)
    man = Manifest(experiment, out)
    if experiment == "table1":
        _table1(man, quick, progress)
    else:
        angle, actor = load_rover(checkpoint_dir)
        man.checkpoints = {"angle": angle.digest(), "actor": actor.digest()}
        {"fig4": _fig4, "fig5": _fig5, "fig6": _fig6, "fig7": _fig7}[experiment](man, (angle, actor), quick, progress)
    man.write()
    return man


def _table1(man, quick, progress):
    cfg = TableConfig()
    if quick:
        cfg = dataclasses.replace(cfg, train_functions=40, test_functions=10, steps=5,
                                  train=dataclasses.replace(cfg.train, epochs=1))
    man.seeds["table"] = cfg.seed
    man.configs["table"] = cfg
    t = time.perf_counter()
    table, ckpts = angle_dissimilarity_matrix(cfg, progress)
    man.runtimes["table_seconds"] = time.perf_counter() - t
    write_table_csv(man.out / "table1.csv", table)
    ck_dir = man.out / "checkpoints"
    ck_dir.mkdir(exist_ok=True)
    for row, ck in ckpts.items():
        name = ANGLE_FILE if row == "all" else f"angle_{row}.rvck"
        save_checkpoint(ck_dir / name, ck)
        man.checkpoints[row] = ck.digest()
    man.results["table"] = table


def _fold_experiment(man, checkpoints, names, quick, progress, starts=None):
    for k, name in enumerate(names):
        spec = ExperimentSpec(field=name, folds=3 if quick else 20, horizon=10 if quick else 50, seed=k,
                              output=str(man.out), theta0=None if starts is None else starts.get(name))
        t = time.perf_counter()
        res = run_fold(spec, checkpoints)
        man.runtimes[name] = time.perf_counter() - t
        man.configs[name] = {"spec": spec, "tuned": res.configs}
        man.seeds[name] = spec.seed
        man.results[name] = {opt: float(np.median(res.finals(opt))) for opt in spec.roster}
        man.results[name]["failures"] = res.failures
        if progress:
            progress(name, man.results[name])


def _fig4(man, checkpoints, quick, progress):
    _fold_experiment(man, checkpoints, MODALITIES, quick, progress)


def _fig5(man, checkpoints, quick, progress):
    _fold_experiment(man, checkpoints, TEST_FUNCTIONS, quick, progress, starts=DEFAULT_STARTS)


def highdim_comparison(f, theta0, checkpoints, iterations, budget, baselines=("gd", "newton"),
                       alpha0=0.1, delta0=0.1, seed=0):
    """Rover under ``budget`` against tuned baselines from one start."""
    runs = {"rover": rover_run(f, theta0, *checkpoints, iterations, alpha0, delta0, budget, seed)}
    configs = {}
    for method in baselines:
        configs[method] = tune_baseline(method, [(f, theta0)], iterations, seed)
        runs[method] = run_optimizer(method, f, theta0, iterations, config=configs[method])
    return runs, configs


def _plot_runs(path, runs, title):
    best = min(float(np.nanmin(r.values)) for r in runs.values())
    series = {k: (r.values - best + 1e-12, None, None) for k, r in runs.items()}
    line_plot(path, series, title, ylabel="loss - best loss")


def _fig6(man, checkpoints, quick, progress):
    iterations = 20 if quick else 200
    for d in (10, 20, 50):
        f = make_binary_classification_field(d, seed=d)
        theta0 = np.zeros(f.dim)
        budget = PairBudget("uniform_k", k=10)
        t = time.perf_counter()
        runs, configs = highdim_comparison(f, theta0, checkpoints, iterations, budget, seed=d)
        man.runtimes[f"d{d}"] = time.perf_counter() - t
        man.seeds[f"d{d}"] = d
        man.configs[f"d{d}"] = {"budget": budget, "iterations": iterations, "tuned": configs}
        man.results[f"d{d}"] = {k: r.final for k, r in runs.items()}
        for k, r in runs.items():
            write_run_csv(man.out / f"d{d}_{k}.csv", r)
        _plot_runs(man.out / f"fig6_d{d}.svg", runs, f"binary classification, d={d}, k=10")
        if progress:
            progress(f"d{d}", man.results[f"d{d}"])


IRIS_STRATEGIES = {
    "pair": lambda blocks: PairBudget("uniform_k", k=10),
    "per_dimension": lambda blocks: PairBudget("per_dimension_l", l=1),
    "per_dimension_block": lambda blocks: PairBudget("block_l", l=1, blocks=tuple(tuple(b) for b in blocks)),
}


def iris_strategy_runs(checkpoints, seed: int, iterations: int, alpha0=0.1, delta0=0.1):
    f = make_iris_mlp_field()
    theta0 = init_mlp_params(np.random.default_rng(seed))
    return {name: rover_run(f, theta0, *checkpoints, iterations, alpha0, delta0,
                            make(f.meta["blocks"]), seed)
            for name, make in IRIS_STRATEGIES.items()}, f, theta0


def _fig7(man, checkpoints, quick, progress):
    iterations = 5 if quick else 100
    seed = 0
    t = time.perf_counter()
    runs, f, theta0 = iris_strategy_runs(checkpoints, seed, iterations)
    for method in ("gd", "adam"):
        cfg = tune_baseline(method, [(f, theta0)], iterations, seed)
        man.configs[method] = cfg
        runs[method] = run_optimizer(method, f, theta0, iterations, config=cfg)
    man.runtimes["iris"] = time.perf_counter() - t
    man.seeds["iris"] = seed
    man.configs["strategies"] = {k: make(f.meta["blocks"]) for k, make in IRIS_STRATEGIES.items()}
    man.results["iris"] = {k: r.final for k, r in runs.items()}
    for k, r in runs.items():
        write_run_csv(man.out / f"iris_{k}.csv", r)
    _plot_runs(man.out / "fig7_iris.svg", runs, "Iris MLP (d=193), pair sampling strategies")
    if progress:
        progress("iris", man.results["iris"])
