"""Collect a small imitation dataset, train the direction network briefly, and score it.

A few minutes on one core; the full table uses `rover table1`.
Run: python demos/02_train_small_angle_net.py
"""
import numpy as np

from rover.anglenet import (AngleTrainConfig, collect_imitation_dataset, mean_dissimilarity,
                            train_angle_predictor)

rng = np.random.default_rng(0)
train = collect_imitation_dataset(200, 10, rng, modalities=["quadratic"])
test = collect_imitation_dataset(40, 10, np.random.default_rng(1), modalities=["quadratic"])
print(f"{len(train)} training samples, {int(train.labels.sum())} expert steps")

res = train_angle_predictor(train, AngleTrainConfig(epochs=10, seed=0))
print(f"held-out imitation loss: {res.heldout}")
print(f"mean angle to the teacher on unseen bowls: {mean_dissimilarity(res.checkpoint, test):.1f} deg")
