"""Adaptive-moment parameter updates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_update(params, grad, state: AdamState, step_size: float,
                beta1: float = BETA1, beta2: float = BETA2, eps: float = EPS):
    """One bias-corrected Adam step; returns ``(new_params, new_state)``."""
    t = state.t + 1
    m = beta1 * state.m + (1 - beta1) * grad
    v = beta2 * state.v + (1 - beta2) * grad * grad
    mhat = m / (1 - beta1**t)
    vhat = v / (1 - beta2**t)
    return params - step_size * mhat / (np.sqrt(vhat) + eps), AdamState(m, v, t)
