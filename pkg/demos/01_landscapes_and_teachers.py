"""Sample one landscape per modality, look at its grid, and see which teacher labels it.

Run: python demos/01_landscapes_and_teachers.py
"""
import numpy as np

from rover.anglenet import TEACHER_NEWTON, random_start, teacher_step
from rover.gridsense import grid_sample
from rover.protogen import MODALITIES, sample_proto_seeded


def ascii_grid(g, width=15):
    shades = " .:-=+*#%@"
    idx = np.clip((g * (len(shades) - 1)).round().astype(int), 0, len(shades) - 1)
    return "\n".join("".join(shades[i] for i in row[:width]) for row in idx)


for mod in MODALITIES:
    f = sample_proto_seeded(mod, seed=3)
    theta = random_start(f.center, np.random.default_rng(3))
    g = grid_sample(f, theta, delta=0.3)
    step = teacher_step(f, theta)
    who = "Newton" if step.teacher == TEACHER_NEWTON else "gradient descent"
    print(f"{mod}: f(theta)={f.value(theta):.3f}, minimum {f.min_value:.3f}; teacher: {who}, "
          f"direction {np.round(step.direction / np.linalg.norm(step.direction), 3)}")
    print(ascii_grid(g.normalized))
    print()
