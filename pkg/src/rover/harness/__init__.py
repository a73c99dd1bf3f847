"""Experiment orchestration, persistence, plots and the command line."""
from .checkpoints import load_rover, output_root, require
from .experiments import ExperimentSpec, FoldResult, optimize, rover_run, run_fold
from .records import RunRecord, read_run_csv, write_run_csv
from .reproduce import EXPERIMENTS, reproduce

__all__ = ["ExperimentSpec", "FoldResult", "RunRecord", "EXPERIMENTS", "load_rover", "optimize",
           "output_root", "read_run_csv", "require", "reproduce", "rover_run", "run_fold", "write_run_csv"]
