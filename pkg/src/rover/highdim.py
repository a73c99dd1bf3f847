"""Optimizing fields of dimension above two with the 2D networks.

Every pair of coordinates ``(i, j)`` defines a 2D slice through the current
iterate.  The angle network predicts a unit direction on each sampled slice,
each pair carries its own step size and resolution, and the per-pair moves
are merged into one update by least squares over the pair projections.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import RejectedInput
from .fields import ScalarField
from .gridsense import DEFAULT_N, normalize_grid, slice_grids
from .steppolicy import as_direction_fn, as_policy, clip_actions

log = logging.getLogger(__name__)

STRATEGIES = ("all_pairs", "uniform_k", "per_dimension_l", "block_l")
UNIFORM_READINGS = ("dimensions", "pairs")
NORMALIZERS = ("all_pairs", "budget", "count")


# ---------------------------------------------------------------------------
# per-pair state

@dataclass(frozen=True)
class PairState:
    pair: tuple
    alpha: float
    delta: float
    hidden: Optional[tuple] = None
    prev_action: np.ndarray = field(default_factory=lambda: np.zeros(2))
    last_visit: int = -1

    def __post_init__(self):
        i, j = self.pair
        if not i < j:
            raise RejectedInput(f"pair {self.pair} must satisfy i < j")
        if not (self.alpha > 0 and self.delta > 0):
            raise RejectedInput(f"pair {self.pair}: step size and resolution must be positive")


class PairStates:
    """Lazily materialized map from pair to :class:`PairState`.

    A state is created at ``(alpha0, delta0)`` with a zero hidden state the
    first time its pair is requested; untouched pairs cost nothing.
    """

    def __init__(self, d: int, alpha0: float, delta0: float, pairs: Optional[Iterable] = None):
        if d < 2:
            raise RejectedInput("need at least two dimensions")
        if not (alpha0 > 0 and delta0 > 0):
            raise RejectedInput("initial step size and resolution must be positive")
        self.d, self.alpha0, self.delta0 = d, float(alpha0), float(delta0)
        self.allowed = None if pairs is None else {_ordered(p) for p in pairs}
        self._states = {}

    @property
    def capacity(self) -> int:
        return len(self.allowed) if self.allowed is not None else self.d * (self.d - 1) // 2

    def __len__(self):
        return self.capacity

    @property
    def materialized(self) -> int:
        return len(self._states)

    def __contains__(self, pair):
        return _ordered(pair) in self._states

    def peek(self, pair) -> Optional[PairState]:
        return self._states.get(_ordered(pair))

    def get(self, pair) -> PairState:
        p = _ordered(pair)
        st = self._states.get(p)
        if st is None:
            if p[1] >= self.d or (self.allowed is not None and p not in self.allowed):
                raise RejectedInput(f"pair {p} is not tracked")
            st = PairState(p, self.alpha0, self.delta0)
            self._states[p] = st
        return st

    def set(self, st: PairState) -> None:
        self._states[st.pair] = st

    def items(self):
        return self._states.items()

    def staleness(self, step: int) -> dict:
        return {p: step - s.last_visit for p, s in self._states.items()}


def _ordered(pair) -> tuple:
    i, j = int(pair[0]), int(pair[1])
    if i == j:
        raise RejectedInput(f"pair ({i}, {j}) repeats a dimension")
    return (i, j) if i < j else (j, i)


def init_pair_states(d_or_pairs, alpha0: float, delta0: float) -> PairStates:
    """All pairs of ``d`` dimensions, or an explicit pair list, at ``(alpha0, delta0)``."""
    if isinstance(d_or_pairs, (int, np.integer)):
        return PairStates(int(d_or_pairs), alpha0, delta0)
    pairs = [_ordered(p) for p in d_or_pairs]
    if not pairs:
        raise RejectedInput("empty pair list")
    d = max(j for _, j in pairs) + 1
    return PairStates(d, alpha0, delta0, pairs)


# ---------------------------------------------------------------------------
# budgets and pair sampling

@dataclass(frozen=True)
class PairBudget:
    strategy: str = "all_pairs"
    k: int = 10
    l: int = 2
    blocks: Optional[tuple] = None
    reading: str = "dimensions"
    normalizer: Optional[str] = None

    def validate(self, d: int) -> None:
        if self.strategy not in STRATEGIES:
            raise RejectedInput(f"unknown pair strategy {self.strategy!r}; choose from {STRATEGIES}")
        if d < 3:
            raise RejectedInput("pair budgets apply to dimension 3 and above")
        if self.normalizer is not None and self.normalizer not in NORMALIZERS:
            raise RejectedInput(f"unknown normalizer {self.normalizer!r}; choose from {NORMALIZERS}")
        if self.strategy == "uniform_k":
            if self.reading not in UNIFORM_READINGS:
                raise RejectedInput(f"unknown uniform_k reading {self.reading!r}")
            limit = d if self.reading == "dimensions" else d * (d - 1) // 2
            low = 2 if self.reading == "dimensions" else 1
            if not low <= self.k <= limit:
                raise RejectedInput(f"uniform_k budget k={self.k} impossible for d={d} ({self.reading} reading)")
        elif self.strategy == "per_dimension_l":
            if not 1 <= self.l <= d - 1:
                raise RejectedInput(f"per_dimension_l needs 1 <= l <= {d - 1}, got {self.l}")
        elif self.strategy == "block_l":
            if self.l < 1:
                raise RejectedInput("block_l needs l >= 1")
            if not self.blocks:
                raise RejectedInput("block_l needs a block partition")
            seen = sorted(i for b in self.blocks for i in b)
            if seen != list(range(d)):
                raise RejectedInput("blocks must partition the dimensions disjointly")
            if min(len(b) for b in self.blocks) < 2:
                raise RejectedInput("every block needs at least two dimensions")

    def default_normalizer(self) -> str:
        if self.normalizer is not None:
            return self.normalizer
        return {"all_pairs": "all_pairs", "uniform_k": "budget"}.get(self.strategy, "count")


def default_budget(d: int, k: int = 10, l: int = 2) -> PairBudget:
    """All pairs for small problems, uniform dimension sampling up to 20, per-dimension beyond."""
    if d * (d - 1) // 2 <= k * (k - 1) // 2:
        return PairBudget("all_pairs")
    if d <= 20:
        return PairBudget("uniform_k", k=k)
    return PairBudget("per_dimension_l", l=l)


def _all_pairs(dims) -> list:
    dims = sorted(int(i) for i in dims)
    return [(a, b) for x, a in enumerate(dims) for b in dims[x + 1:]]


def sample_pairs(budget: PairBudget, d: int, rng) -> list:
    """Draw the pair set for one update, sorted, each pair with ``i < j``."""
    budget.validate(d)
    if budget.strategy == "all_pairs":
        return _all_pairs(range(d))
    if budget.strategy == "uniform_k":
        if budget.reading == "dimensions":
            return _all_pairs(rng.choice(d, size=budget.k, replace=False))
        rows, cols = np.triu_indices(d, 1)
        pick = np.sort(rng.choice(len(rows), size=budget.k, replace=False))
        return [(int(rows[p]), int(cols[p])) for p in pick]
    groups = [list(range(d))] if budget.strategy == "per_dimension_l" else [list(b) for b in budget.blocks]
    out = set()
    for group in groups:
        group = np.asarray(group)
        l = min(budget.l, len(group) - 1)
        for i in group:
            others = group[group != i]
            for j in rng.choice(others, size=l, replace=False):
                out.add(_ordered((i, j)))
    return sorted(out)


# ---------------------------------------------------------------------------
# recombination

def recombine(updates: Sequence, d: int, normalizer: str = "all_pairs", k: Optional[int] = None) -> np.ndarray:
    """Merge per-pair moves ``((i, j), alpha, dir2)`` into one ``d``-vector.

    ``all_pairs`` scales the sum by ``1/(d-1)``, the least-squares solution
    when every pair is present.  ``budget`` scales by ``1/(k-1)`` with ``k``
    defaulting to the number of updates; ``k = 1`` falls back to 1.
    ``count`` divides each coordinate by the number of pairs touching it.
    """
    if not updates:
        raise RejectedInput("nothing to recombine")
    if normalizer not in NORMALIZERS:
        raise RejectedInput(f"unknown normalizer {normalizer!r}; choose from {NORMALIZERS}")
    total = np.zeros(d)
    counts = np.zeros(d)
    for pair, alpha, dir2 in updates:
        i, j = pair
        if not (0 <= i < d and 0 <= j < d) or i == j:
            raise RejectedInput(f"invalid pair {pair} for dimension {d}")
        total[i] += alpha * dir2[0]
        total[j] += alpha * dir2[1]
        counts[i] += 1
        counts[j] += 1
    if normalizer == "all_pairs":
        return total / (d - 1)
    if normalizer == "count":
        return total / np.maximum(counts, 1)
    k = len(updates) if k is None else k
    if k <= 1:
        log.warning("budget normalizer with k=%d; using 1", k)
        return total
    return total / (k - 1)


def least_squares_update(updates: Sequence, d: int) -> np.ndarray:
    """Explicit minimum-norm solution of the pair-projection least squares."""
    rows, rhs = [], []
    for (i, j), alpha, dir2 in updates:
        for coord, val in ((i, dir2[0]), (j, dir2[1])):
            r = np.zeros(d)
            r[coord] = 1.0
            rows.append(r)
            rhs.append(alpha * val)
    return np.linalg.lstsq(np.array(rows), np.array(rhs), rcond=None)[0]


# ---------------------------------------------------------------------------
# one update

@dataclass
class HighdimStep:
    theta: np.ndarray
    pairs: list
    used: list
    skipped: list
    move: np.ndarray


def _policy_actions(policy, grids, states: Sequence[PairState]):
    m = len(states)
    policy.reset(m)
    if policy.hidden is not None:
        h, c = (np.array(a) for a in policy.hidden)
        for r, st in enumerate(states):
            if st.hidden is not None:
                h[r], c[r] = st.hidden
        policy.hidden = (h, c)
    prev = np.stack([st.prev_action for st in states])
    actions = clip_actions(np.asarray(policy.act(grids, prev), dtype=float))
    if policy.hidden is None:
        return actions, [None] * m
    h, c = policy.hidden
    return actions, [(h[r].copy(), c[r].copy()) for r in range(m)]


def highdim_step(f: ScalarField, theta, states: PairStates, budget: PairBudget, angle, policy, rng,
                 step: int = 0, n: int = DEFAULT_N, pairs=None) -> HighdimStep:
    """Move ``theta`` once and update the visited pairs of ``states`` in place.

    ``angle`` is an angle checkpoint or a callable on normalized grids;
    ``policy`` is an actor checkpoint or an object with ``reset``/``act``.
    Pairs whose slice grid is non-finite are skipped.
    """
    theta = np.asarray(theta, dtype=float)
    d = f.dim
    if d <= 2:
        raise RejectedInput("highdim_step needs dimension above two")
    if pairs is None:
        pairs = sample_pairs(budget, d, rng)
    pairs = [_ordered(p) for p in pairs]
    current = [states.get(p) for p in pairs]
    raw = slice_grids(f, theta, pairs, [s.delta for s in current], n, check=False)
    ok = np.all(np.isfinite(raw), axis=(1, 2))
    skipped = [p for p, good in zip(pairs, ok) if not good]
    if skipped:
        log.info("step %d: skipping %d pairs with non-finite slices", step, len(skipped))
    idx = np.flatnonzero(ok)
    if len(idx) == 0:
        log.warning("step %d: no usable pair; iterate unchanged", step)
        return HighdimStep(theta.copy(), pairs, [], skipped, np.zeros(d))

    dirs = as_direction_fn(angle)(normalize_grid(raw[idx]))
    updates = [(pairs[r], current[r].alpha, dirs[q]) for q, r in enumerate(idx)]
    k = budget.k if budget.strategy == "uniform_k" else None
    move = recombine(updates, d, budget.default_normalizer(), k=k)
    new_theta = theta + move

    # controller sees each used pair's slice at the landing point
    used = [pairs[r] for r in idx]
    used_states = [current[r] for r in idx]
    landing = slice_grids(f, new_theta, used, [s.delta for s in used_states], n, check=False)
    fine = np.flatnonzero(np.all(np.isfinite(landing), axis=(1, 2)))
    if len(fine):
        pol = as_policy(policy)
        sub = [used_states[r] for r in fine]
        actions, hidden = _policy_actions(pol, normalize_grid(landing[fine]), sub)
        for st, a, hid in zip(sub, actions, hidden):
            states.set(replace(st, alpha=st.alpha * (1.0 + a[0]), delta=st.delta * (1.0 + a[1]),
                               hidden=hid, prev_action=a.copy(), last_visit=step))
    if len(fine) < len(used):
        log.info("step %d: %d pairs keep their state (non-finite landing grid)", step, len(used) - len(fine))
    return HighdimStep(new_theta, pairs, used, skipped, move)


# ---------------------------------------------------------------------------
# full runs

@dataclass
class HighdimRun:
    thetas: np.ndarray
    values: np.ndarray
    pairs_per_step: list
    staleness: list
    diverged: bool = False


def run_highdim(f: ScalarField, theta0, budget: PairBudget, angle, policy, steps: int,
                alpha0: float, delta0: float, rng, n: int = DEFAULT_N) -> HighdimRun:
    """Iterate :func:`highdim_step`; stops early if the loss becomes non-finite."""
    theta = np.asarray(theta0, dtype=float)
    states = init_pair_states(f.dim, alpha0, delta0)
    thetas, values, counts, stale = [theta.copy()], [f.value(theta)], [], []
    diverged = False
    for t in range(steps):
        res = highdim_step(f, theta, states, budget, angle, policy, rng, step=t, n=n)
        value = f.value(res.theta)
        if not math.isfinite(value):
            diverged = True
            log.warning("step %d: loss is non-finite; stopping", t)
            break
        theta = res.theta
        thetas.append(theta.copy())
        values.append(value)
        counts.append(len(res.used))
        ages = list(states.staleness(t).values())
        stale.append(float(np.max(ages)) if ages else 0.0)
    return HighdimRun(np.array(thetas), np.array(values), counts, stale, diverged)
