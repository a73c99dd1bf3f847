"""Grid observations of a field around an iterate, and 2D slices of d-dim fields."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ObservationError, RejectedInput
from .fields import ScalarField

DEFAULT_N = 15


@dataclass(frozen=True)
class GridSample:
    raw: np.ndarray
    normalized: np.ndarray
    center: np.ndarray
    delta: float
    n: int


def grid_offsets(n: int, strict: bool = False) -> np.ndarray:
    """Lattice offsets ``i - n/2`` (strict) or ``i - (n+1)/2`` (centered), i = 1..n."""
    i = np.arange(1, n + 1, dtype=float)
    return i - (n / 2 if strict else (n + 1) / 2)


def grid_points(theta, delta: float, n: int, strict: bool = False) -> np.ndarray:
    """``(n, n, 2)`` array whose entry (i, j) is ``theta - delta * (o_i, o_j)``."""
    o = grid_offsets(n, strict)
    theta = np.asarray(theta, dtype=float)
    return np.stack([
        theta[0] - delta * o[:, None] * np.ones((1, n)),
        theta[1] - delta * np.ones((n, 1)) * o[None, :],
    ], axis=-1)


def normalize_grid(raw) -> np.ndarray:
    """Rescale to [0, 1]; a constant grid maps to 0.5 everywhere."""
    raw = np.asarray(raw, dtype=float)
    axes = (-2, -1)
    lo = raw.min(axis=axes, keepdims=True)
    hi = raw.max(axis=axes, keepdims=True)
    span = hi - lo
    flat = span <= 0
    out = (raw - lo) / np.where(flat, 1.0, span)
    return np.where(flat, 0.5, out)


def _check_finite(raw, delta, n, strict, label=""):
    if np.all(np.isfinite(raw)):
        return
    i, j = np.argwhere(~np.isfinite(raw))[0][-2:]
    o = grid_offsets(n, strict)
    offset = (-delta * o[i], -delta * o[j])
    raise ObservationError(f"non-finite field value{label} at grid offset {offset}", offset=offset)


def grid_sample(f: ScalarField, theta, delta: float, n: int = DEFAULT_N, rng=None,
                strict: bool = False) -> GridSample:
    """Sample ``f`` on an ``n x n`` lattice of spacing ``delta`` around ``theta``."""
    if delta <= 0 or n < 2:
        raise RejectedInput("grid needs delta > 0 and n >= 2")
    if f.dim != 2:
        raise RejectedInput(f"grid_sample needs a 2D field, got dimension {f.dim}")
    theta = np.asarray(theta, dtype=float)
    raw = f.batch(grid_points(theta, delta, n, strict), rng=rng)
    _check_finite(raw, delta, n, strict)
    return GridSample(raw, normalize_grid(raw), theta.copy(), float(delta), n)


def slice_field(f: ScalarField, theta, i: int, j: int) -> ScalarField:
    """2D field ``g(u, v) = f(theta + u e_i + v e_j)``; indices are 0-based."""
    d = f.dim
    if not (0 <= i < d and 0 <= j < d) or i == j:
        raise RejectedInput(f"invalid slice pair ({i}, {j}) for dimension {d}")
    base = np.asarray(theta, dtype=float).copy()

    def func(U):
        U = np.asarray(U, dtype=float)
        X = np.broadcast_to(base, U.shape[:-1] + (d,)).copy()
        X[..., i] += U[..., 0]
        X[..., j] += U[..., 1]
        return f.batch(X)

    return ScalarField(2, func, noise_sigma=f.noise_sigma, name=f"{f.name}[{i},{j}]")


def embed_direction(dir2, i: int, j: int, d: int) -> np.ndarray:
    """``E_ij @ dir2``: zeros except coordinates i and j (0-based)."""
    if not (0 <= i < d and 0 <= j < d) or i == j:
        raise RejectedInput(f"invalid pair ({i}, {j}) for dimension {d}")
    out = np.zeros(d)
    out[i], out[j] = dir2[0], dir2[1]
    return out


def slice_grids(f: ScalarField, theta, pairs, deltas, n: int = DEFAULT_N, rng=None,
                check: bool = True) -> np.ndarray:
    """Raw grids of many 2D slices through ``theta`` in one batched evaluation.

    Returns ``(len(pairs), n, n)``.  Equivalent to ``grid_sample(slice_field(f,
    theta, i, j), (0, 0), delta)`` per pair.  With ``check=False`` non-finite
    grids are returned as they are and left to the caller.
    """
    theta = np.asarray(theta, dtype=float)
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
    deltas = np.asarray(deltas, dtype=float)
    o = grid_offsets(n)
    m = len(pairs)
    X = np.broadcast_to(theta, (m, n, n, f.dim)).copy()
    rows = np.arange(m)
    du = -deltas[:, None] * o[None, :]  # (m, n)
    X[rows, :, :, pairs[:, 0]] += du[:, :, None]
    X[rows, :, :, pairs[:, 1]] += du[:, None, :]
    raw = f.batch(X, rng=rng)
    if not check:
        return raw
    for k in range(m):
        _check_finite(raw[k], deltas[k], n, False, label=f" on slice {tuple(pairs[k])}")
    return raw


# ---------------------------------------------------------------------------
# CSV dump

def write_grid_csv(path, g: GridSample, normalized: bool = False) -> None:
    values = g.normalized if normalized else g.raw
    with open(path, "w") as fh:
        fh.write("# theta," + ",".join(repr(float(t)) for t in g.center) + "\n")
        fh.write(f"# delta,{g.delta!r}\n")
        fh.write(f"# n,{g.n}\n")
        for row in values:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_grid_csv(path) -> GridSample:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    theta = np.array([float(v) for v in lines[0].split(",")[1:]])
    delta = float(lines[1].split(",")[1])
    n = int(lines[2].split(",")[1])
    raw = np.array([[float(v) for v in ln.split(",")] for ln in lines[3:]])
    if raw.shape != (n, n):
        raise RejectedInput(f"grid CSV holds {raw.shape}, header says n={n}")
    return GridSample(raw, normalize_grid(raw), theta, delta, n)
