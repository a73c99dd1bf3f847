"""Optimize a 10-feature logistic regression through 2D slices and compare with tuned GD.

Run: python demos/04_high_dimensional.py
"""
import numpy as np

from rover.fields import make_binary_classification_field
from rover.harness import load_rover
from rover.harness.reproduce import highdim_comparison
from rover.highdim import PairBudget

f = make_binary_classification_field(10, seed=1)
runs, configs = highdim_comparison(f, np.zeros(f.dim), load_rover(), iterations=100,
                                   budget=PairBudget("uniform_k", k=10))
for name, run in runs.items():
    print(f"{name:7s} loss {run.values[0]:.4f} -> {run.final:.4f}")
print("tuned:", configs)
