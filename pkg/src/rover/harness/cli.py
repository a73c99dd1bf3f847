"""Command-line entry point ``rover``.

Exit codes: 0 when every run completed, 1 when some runs failed or
diverged, 2 for rejected input, 3 for a missing checkpoint, 4 for a
training failure.  Relative output paths resolve under ``$ROVER_OUTPUT_ROOT``
(default ``./rover_runs``).  Any command taking ``--config FILE`` reads
``key = value`` lines; ``--set key=value`` overrides single keys.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .. import anglenet, steppolicy
from ..errors import (CheckpointError, IngestionError, MissingCheckpoint, ObservationError, RejectedInput,
                      TrainingError)
from ..gridsense import grid_sample, write_grid_csv
from ..kvconfig import apply_kv, dump_kv, parse_overrides, read_kv
from ..neuralcore import load_checkpoint, save_checkpoint
from ..protogen import MODALITIES, sample_proto_seeded
from .checkpoints import ACTOR_FILE, ANGLE_FILE, CRITIC_FILE, load_rover, output_root, require
from .experiments import OPTIMIZERS, ExperimentSpec, optimize, run_fold
from .records import write_run_csv
from .reproduce import EXPERIMENTS, reproduce

log = logging.getLogger("rover")

EXIT_OK, EXIT_FAILED_RUNS, EXIT_INPUT, EXIT_CHECKPOINT, EXIT_TRAINING = 0, 1, 2, 3, 4


def _out_path(value, default_name):
    p = Path(value) if value else Path(default_name)
    return p if p.is_absolute() else output_root() / p


def _configured(config, args):
    values = {}
    if getattr(args, "config", None):
        values.update(read_kv(args.config))
    values.update(parse_overrides(getattr(args, "set", None)))
    return apply_kv(config, values)


def _floats(text):
    return None if text is None else np.array([float(x) for x in text.split(",")])


def _modalities(text):
    mods = tuple(m.strip() for m in text.split(",")) if text else MODALITIES
    bad = [m for m in mods if m not in MODALITIES]
    if bad:
        raise RejectedInput(f"unknown modalities {bad}; choose from {MODALITIES}")
    return mods


# ---------------------------------------------------------------------------
# commands

def cmd_gen_landscapes(args):
    out = _out_path(args.out, "landscapes")
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for mod in _modalities(args.modalities):
        for k in range(args.count):
            seed = args.seed + k
            f = sample_proto_seeded(mod, seed)
            g = grid_sample(f, f.center, args.delta, args.n)
            write_grid_csv(out / f"{mod}_{seed}.csv", g)
            rows.append((mod, seed, *np.asarray(f.minimizer).tolist(), f.min_value))
    with open(out / "landscapes.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("modality", "seed", "argmin0", "argmin1", "min_value"))
        w.writerows(rows)
    print(f"wrote {len(rows)} landscapes to {out}")
    return EXIT_OK


def cmd_collect(args):
    rng = np.random.default_rng(args.seed)
    ds = anglenet.collect_imitation_dataset(args.functions, args.steps, rng, modalities=_modalities(args.modalities))
    out = _out_path(args.out, "imitation.bin")
    out.parent.mkdir(parents=True, exist_ok=True)
    anglenet.save_dataset(out, ds)
    print(f"wrote {len(ds)} samples ({int(ds.labels.sum())} positive) to {out}")
    return EXIT_OK


def cmd_train_angle(args):
    cfg = _configured(anglenet.AngleTrainConfig(), args)
    if args.data:
        ds = anglenet.load_dataset(args.data)
    else:
        rng = np.random.default_rng([cfg.seed, 0])
        ds = anglenet.collect_imitation_dataset(args.functions, args.steps, rng,
                                                modalities=_modalities(args.modalities))
    res = anglenet.train_angle_predictor(ds, cfg)
    out = _out_path(args.out, ANGLE_FILE)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, res.checkpoint)
    print(f"saved {out}; held-out {res.heldout}")
    return EXIT_OK


def cmd_train_policy(args):
    cfg = _configured(steppolicy.PolicyTrainConfig(), args)
    angle = load_checkpoint(args.angle) if args.angle else require(ANGLE_FILE)
    out = _out_path(args.out, "policy")
    out.mkdir(parents=True, exist_ok=True)
    (out / "policy_config.txt").write_text(dump_kv(cfg) + "\n")

    def progress(done, score, losses):
        print(f"episodes {done}: mean evaluation return {score:.4f}", flush=True)

    res = steppolicy.train_policy(angle, cfg, progress)
    save_checkpoint(out / ACTOR_FILE, res.actor)
    save_checkpoint(out / CRITIC_FILE, res.critic)
    with open(out / "evaluations.csv", "w") as fh:
        fh.write("episodes,mean_return\n")
        for done, score in res.evaluations:
            fh.write(f"{done},{score!r}\n")
    print(f"saved actor and critic to {out}")
    return EXIT_OK


def _checkpoints_for(optimizers, args):
    return load_rover(args.checkpoints) if "rover" in optimizers else None


def cmd_optimize(args):
    ck = _checkpoints_for([args.optimizer], args)
    rec = optimize(args.field, args.optimizer, _floats(args.theta0), args.horizon, checkpoints=ck,
                   alpha0=args.alpha0, delta0=args.delta0, seed=args.seed)
    out = _out_path(args.out, f"{args.field}_{args.optimizer}.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_run_csv(out, rec)
    print(f"{args.optimizer} on {args.field}: f0={rec.values[0]:.6g} final={rec.final:.6g} -> {out}")
    return EXIT_FAILED_RUNS if rec.diverged else EXIT_OK


def cmd_fold(args):
    spec = ExperimentSpec(field=args.field, theta0=None if args.theta0 is None else tuple(_floats(args.theta0)),
                          radius=args.radius, folds=args.folds, horizon=args.horizon,
                          roster=tuple(args.roster.split(",")), seed=args.seed,
                          output=str(_out_path(args.out, "folds")), alpha0=args.alpha0, delta0=args.delta0)
    spec = _configured(spec, args)
    res = run_fold(spec, _checkpoints_for(spec.roster, args))
    for opt in spec.roster:
        print(f"{opt:12s} median final f {np.median(res.finals(opt)):.6g}")
    return EXIT_FAILED_RUNS if res.failures else EXIT_OK


def _report(name, row):
    print(name, {k: (round(v, 4) if isinstance(v, float) else v) for k, v in row.items()}, flush=True)


def cmd_reproduce(args):
    man = reproduce(args.experiment, _out_path(args.out, "reproduce"), args.checkpoints, args.quick, _report)
    print(f"manifest {man.out / 'manifest.json'} hash {man.content_hash()[:16]}")
    failures = sum(int(v.get("failures", 0)) for v in man.results.values() if isinstance(v, dict))
    return EXIT_FAILED_RUNS if failures else EXIT_OK


def cmd_table1(args):
    args.experiment = "table1"
    args.checkpoints = None
    return cmd_reproduce(args)


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rover", description="Learned zeroth-order optimizer: training and experiments.")
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="key = value configuration file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one configuration key")

    sp = sub.add_parser("gen-landscapes", help="sample prototypical landscapes and dump grids")
    sp.add_argument("--modalities")
    sp.add_argument("--count", type=int, default=5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--delta", type=float, default=0.5)
    sp.add_argument("--n", type=int, default=15)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_gen_landscapes)

    sp = sub.add_parser("collect-imitation", help="build a teacher-labelled imitation dataset")
    sp.add_argument("--functions", type=int, default=2000)
    sp.add_argument("--steps", type=int, default=10)
    sp.add_argument("--modalities")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_collect)

    sp = sub.add_parser("train-angle", help="train the direction network")
    sp.add_argument("--data", help="dataset from collect-imitation; collected on the fly when absent")
    sp.add_argument("--functions", type=int, default=2000)
    sp.add_argument("--steps", type=int, default=10)
    sp.add_argument("--modalities")
    sp.add_argument("--out")
    with_config(sp)
    sp.set_defaults(func=cmd_train_angle)

    sp = sub.add_parser("train-policy", help="train the step-size and resolution controller")
    sp.add_argument("--angle", help="direction network checkpoint")
    sp.add_argument("--out")
    with_config(sp)
    sp.set_defaults(func=cmd_train_policy)

    sp = sub.add_parser("optimize", help="one optimization run, logged per step")
    sp.add_argument("--field", required=True)
    sp.add_argument("--optimizer", default="rover", choices=OPTIMIZERS)
    sp.add_argument("--theta0", help="comma-separated start point")
    sp.add_argument("--horizon", type=int, default=50)
    sp.add_argument("--alpha0", type=float, default=0.1)
    sp.add_argument("--delta0", type=float, default=0.1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--checkpoints")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_optimize)

    sp = sub.add_parser("fold", help="perturbed-start comparison against tuned baselines")
    sp.add_argument("--field", required=True)
    sp.add_argument("--theta0")
    sp.add_argument("--radius", type=float, default=0.1)
    sp.add_argument("--folds", type=int, default=20)
    sp.add_argument("--horizon", type=int, default=50)
    sp.add_argument("--roster", default=",".join(ExperimentSpec().roster))
    sp.add_argument("--alpha0", type=float)
    sp.add_argument("--delta0", type=float)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--checkpoints")
    sp.add_argument("--out")
    with_config(sp)
    sp.set_defaults(func=cmd_fold)

    sp = sub.add_parser("reproduce", help="regenerate a table or figure with a manifest")
    sp.add_argument("experiment", choices=EXPERIMENTS)
    sp.add_argument("--quick", action="store_true", help="tiny budgets, for smoke testing")
    sp.add_argument("--checkpoints")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_reproduce)

    sp = sub.add_parser("table1", help="angle dissimilarity table (same as reproduce table1)")
    sp.add_argument("--quick", action="store_true")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_table1)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except MissingCheckpoint as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except TrainingError as exc:
        print(f"error: training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except (RejectedInput, IngestionError, ObservationError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
