"""One trajectory format for every optimizer, and its CSV form.

Columns are ``step, f, alpha, delta, theta0 .. theta{d-1}``; baselines leave
``alpha`` and ``delta`` as ``nan``.  Floats are written with ``repr`` so a
file re-reads to the identical array.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import IngestionError

BASE_COLUMNS = ("step", "f", "alpha", "delta")


@dataclass
class RunRecord:
    optimizer: str
    thetas: np.ndarray
    values: np.ndarray
    alphas: Optional[np.ndarray] = None
    deltas: Optional[np.ndarray] = None
    diverged: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.thetas = np.atleast_2d(np.asarray(self.thetas, dtype=float))
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if len(self.thetas) != len(self.values):
            raise ValueError("thetas and values differ in length")

    def __len__(self):
        return len(self.values)

    @property
    def final(self) -> float:
        return float(self.values[-1])

    def padded_values(self, length: int) -> np.ndarray:
        """Loss per step, ``nan`` past the end of a truncated run."""
        out = np.full(length, np.nan)
        m = min(length, len(self.values))
        out[:m] = self.values[:m]
        return out


def from_baseline(tr) -> RunRecord:
    return RunRecord(tr.method, tr.thetas, tr.values, diverged=tr.diverged)


def _column(arr, n):
    return np.full(n, np.nan) if arr is None else np.asarray(arr, dtype=float)[:n]


def write_run_csv(path, run: RunRecord) -> None:
    n = len(run)
    d = run.thetas.shape[1]
    alphas, deltas = _column(run.alphas, n), _column(run.deltas, n)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BASE_COLUMNS + tuple(f"theta{i}" for i in range(d)))
        for t in range(n):
            w.writerow([t, repr(float(run.values[t])), repr(float(alphas[t])), repr(float(deltas[t]))]
                       + [repr(float(v)) for v in run.thetas[t]])


def read_run_csv(path, optimizer: Optional[str] = None) -> RunRecord:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0][:4]) != BASE_COLUMNS:
        raise IngestionError(f"{path}: missing trajectory header {','.join(BASE_COLUMNS)}")
    d = len(rows[0]) - 4
    body = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != d + 4:
            raise IngestionError(f"{path}:{lineno}: expected {d + 4} fields, got {len(row)}")
        try:
            body.append([float(x) for x in row])
        except ValueError:
            raise IngestionError(f"{path}:{lineno}: non-numeric field") from None
    arr = np.array(body, dtype=float).reshape(-1, d + 4)
    alphas = None if np.all(np.isnan(arr[:, 2])) else arr[:, 2]
    deltas = None if np.all(np.isnan(arr[:, 3])) else arr[:, 3]
    return RunRecord(optimizer or path.stem, arr[:, 4:], arr[:, 1], alphas, deltas)
