"""Run the trained rover and tuned baselines from perturbed starts on Rosenbrock.

Uses the bundled checkpoints (or $ROVER_CHECKPOINTS).  Writes a fold CSV and
an SVG plot under ./rover_runs/demo_fold.
Run: python demos/03_rover_vs_baselines.py
"""
import numpy as np

from rover.fields import DEFAULT_STARTS
from rover.harness import ExperimentSpec, load_rover, run_fold

spec = ExperimentSpec(field="rosenbrock", theta0=DEFAULT_STARTS["rosenbrock"], folds=10, horizon=50,
                      output="rover_runs/demo_fold")
result = run_fold(spec, load_rover())
for opt in spec.roster:
    print(f"{opt:12s} median final f = {np.median(result.finals(opt)):.3g}   tuned: {result.configs.get(opt)}")
print(f"plot: {spec.output}/fold_rosenbrock.svg")
