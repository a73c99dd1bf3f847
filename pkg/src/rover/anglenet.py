"""Direction predictor learned by behavioral cloning of two descent teachers.

Teachers are gradient descent and damped Newton descent computed by finite
differences on the noiseless landscape.  Along each roll-out the better
teacher's direction is a positive example; a random direction from the
opposite half-plane is the matching negative.  A small conv net is trained
with the contrastive logistic loss and its normalized output is the update
direction.
"""
from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import RejectedInput, TrainingError
from .fields import ScalarField, finite_difference_gradient, finite_difference_hessian
from .gridsense import DEFAULT_N, grid_points, normalize_grid
from .neuralcore.layers import BN_MOMENTUM
from .neuralcore import AdamState, Checkpoint, adam_update, angle_net_spec, network
from .protogen import MODALITIES, sample_proto

log = logging.getLogger(__name__)

TEACHER_GD, TEACHER_NEWTON = 0, 1
TRIAL_STEP = 0.1
LADDER = TRIAL_STEP * 2.0 ** np.arange(7)
LOG_CLAMP = 1e-12
# wider than the library default: central differences are exact on quadratics,
# so a larger step only trims rounding error there
HESSIAN_FD_STEP = 1e-3


# ---------------------------------------------------------------------------
# teachers and negatives

@dataclass(frozen=True)
class TeacherStep:
    direction: np.ndarray     # unnormalized winning candidate
    teacher: int
    move: np.ndarray          # best step found along the winning direction
    decrease: float
    warning: bool = False
    candidates: tuple = ()


def newton_direction(g, H, floor: float = 1e-6):
    """``-(H + lam I)^-1 g`` with ``lam = max(0, floor - lambda_min(H))``."""
    lam = max(0.0, floor - float(np.linalg.eigvalsh(H).min()))
    return -np.linalg.solve(H + lam * np.eye(len(g)), g)


def _best_along(f: ScalarField, theta, f0, direction, trials, extra=()):
    norm = np.linalg.norm(direction)
    if norm == 0 or not np.isfinite(norm):
        return 0.0, np.zeros_like(theta)
    unit = direction / norm
    lengths = np.concatenate([np.asarray(trials, dtype=float), np.asarray(extra, dtype=float)])
    vals = f.batch(theta + lengths[:, None] * unit)
    vals = np.where(np.isfinite(vals), vals, np.inf)
    k = int(np.argmin(vals))
    return f0 - vals[k], lengths[k] * unit


def teacher_step(f: ScalarField, theta, trials=LADDER) -> TeacherStep:
    """Pick the better of the gradient and damped-Newton candidates at ``theta``.

    Each candidate is scored by the lowest value reached along its ray over
    the trial lengths ``trials``.  The default is a geometric ladder starting
    at 0.1, and the Newton ray is additionally tried at its full length, so an
    exact Newton step on a bowl is always among the trials.  Passing
    ``trials=(0.1,)`` scores both candidates by a single fixed step only.
    Ties go to gradient descent.
    """
    full_newton = len(trials) > 1
    theta = np.asarray(theta, dtype=float)
    g = finite_difference_gradient(f, theta)
    H = finite_difference_hessian(f, theta, h=HESSIAN_FD_STEP)
    d_gd = -g
    d_nt = newton_direction(g, H)
    f0 = f.value(theta)
    dec_gd, move_gd = _best_along(f, theta, f0, d_gd, trials)
    dec_nt, move_nt = _best_along(f, theta, f0, d_nt, trials,
                                  extra=[np.linalg.norm(d_nt)] if full_newton else ())
    warn = dec_gd <= 0 and dec_nt <= 0
    tol = 1e-12 * (1.0 + abs(f0))
    if not warn and dec_nt > dec_gd + tol:
        return TeacherStep(d_nt, TEACHER_NEWTON, move_nt, dec_nt, False, (d_gd, d_nt))
    return TeacherStep(d_gd, TEACHER_GD, move_gd, dec_gd, warn, (d_gd, d_nt))


def sample_negative(d_star, rng) -> np.ndarray:
    """Unit vector uniform over the open half-circle opposite to ``d_star``."""
    d_star = np.asarray(d_star, dtype=float)
    norm = np.linalg.norm(d_star)
    if norm == 0 or not np.isfinite(norm):
        raise RejectedInput("negative sampling needs a nonzero finite direction")
    a = d_star / norm
    while True:
        phi = rng.uniform(-0.5 * np.pi, 0.5 * np.pi)
        c, s = math.cos(phi), math.sin(phi)
        neg = -np.array([c * a[0] - s * a[1], s * a[0] + c * a[1]])
        if neg @ a < 0:
            return neg / np.linalg.norm(neg)


# ---------------------------------------------------------------------------
# dataset

@dataclass(frozen=True)
class ImitationSample:
    grid: np.ndarray
    action: np.ndarray
    label: int


@dataclass
class ImitationDataset:
    """Column store of imitation samples; row ``k`` is one (grid, action, label)."""

    grids: np.ndarray
    actions: np.ndarray
    labels: np.ndarray
    function_ids: np.ndarray
    modalities: np.ndarray
    teachers: np.ndarray
    n: int = DEFAULT_N

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, k) -> ImitationSample:
        return ImitationSample(self.grids[k], self.actions[k], int(self.labels[k]))

    def subset(self, mask) -> "ImitationDataset":
        return ImitationDataset(self.grids[mask], self.actions[mask], self.labels[mask],
                                self.function_ids[mask], self.modalities[mask], self.teachers[mask], self.n)

    def positives(self) -> "ImitationDataset":
        return self.subset(self.labels == 1)

    @classmethod
    def concat(cls, parts: Sequence["ImitationDataset"]) -> "ImitationDataset":
        return cls(*(np.concatenate([getattr(p, k) for p in parts]) for k in
                     ("grids", "actions", "labels", "function_ids", "modalities", "teachers")),
                   n=parts[0].n)


def random_start(center, rng, r_min: float = 2.0, r_max: float = 4.0):
    """Point on a ring of radius in ``[r_min, r_max]`` around ``center``."""
    r = rng.uniform(r_min, r_max)
    phi = rng.uniform(0.0, 2 * np.pi)
    return np.asarray(center, dtype=float) + r * np.array([math.cos(phi), math.sin(phi)])


def log_uniform(rng, lo, hi):
    return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))


def collect_imitation_dataset(num_functions: int, steps_per_function: int, rng, *,
                              modalities: Sequence[str] = MODALITIES, n: int = DEFAULT_N,
                              delta_range=(0.05, 0.5), follow_range=(0.25, 0.75),
                              id_offset: int = 0) -> ImitationDataset:
    """Roll out the best teacher on freshly sampled landscapes.

    Each step stores one positive and one negative sample.  The iterate moves
    by a random fraction ``follow_range`` of the teacher's best step, so
    roll-outs approach the minimum without landing on it exactly (directions
    at an exact stationary point are undefined).
    """
    if num_functions < 1 or steps_per_function < 1:
        raise RejectedInput("need at least one function and one step")
    mod_codes = {m: MODALITIES.index(m) for m in modalities}
    grids, actions, labels, fids, mods, teachers = [], [], [], [], [], []
    for k in range(num_functions):
        modality = modalities[k % len(modalities)]
        try:
            f = sample_proto(modality, rng)
        except Exception as exc:  # noqa: BLE001 - a failed draw only skips this function
            log.warning("skipping function %d (%s): %s", k, modality, exc)
            continue
        delta = log_uniform(rng, *delta_range)
        theta = random_start(f.center, rng)
        for _ in range(steps_per_function):
            step = teacher_step(f, theta)
            norm = np.linalg.norm(step.direction)
            if norm == 0 or not np.isfinite(norm):
                break
            a_star = step.direction / norm
            raw = f.batch(grid_points(theta, delta, n))
            grid = normalize_grid(raw)
            neg = sample_negative(a_star, rng)
            for action, label in ((a_star, 1), (neg, 0)):
                grids.append(grid)
                actions.append(action)
                labels.append(label)
                fids.append(id_offset + k)
                mods.append(mod_codes[modality])
                teachers.append(step.teacher)
            theta = theta + rng.uniform(*follow_range) * step.move
    return ImitationDataset(np.array(grids).reshape(-1, n, n), np.array(actions).reshape(-1, 2),
                            np.array(labels, dtype=np.int8), np.array(fids, dtype=np.int64),
                            np.array(mods, dtype=np.int8), np.array(teachers, dtype=np.int8), n)


DATASET_MAGIC = b"RVRIMIT\0"


def save_dataset(path, ds: ImitationDataset) -> None:
    """Length-prefixed binary: header, then one record per sample."""
    rec = struct.Struct(f"<{ds.n * ds.n}d2dbqbb")
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<IQ", ds.n, len(ds)))
        for k in range(len(ds)):
            fh.write(rec.pack(*ds.grids[k].ravel(), *ds.actions[k], int(ds.labels[k]),
                              int(ds.function_ids[k]), int(ds.modalities[k]), int(ds.teachers[k])))


def load_dataset(path) -> ImitationDataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != DATASET_MAGIC:
        raise RejectedInput(f"{path}: not an imitation dataset")
    n, count = struct.unpack_from("<IQ", blob, 8)
    rec = struct.Struct(f"<{n * n}d2dbqbb")
    if len(blob) != 20 + count * rec.size:
        raise RejectedInput(f"{path}: size does not match {count} records")
    rows = list(rec.iter_unpack(blob[20:]))
    arr = np.array(rows, dtype=float).reshape(count, -1)
    nn = n * n
    return ImitationDataset(arr[:, :nn].reshape(-1, n, n), arr[:, nn:nn + 2], arr[:, nn + 2].astype(np.int8),
                            arr[:, nn + 3].astype(np.int64), arr[:, nn + 4].astype(np.int8),
                            arr[:, nn + 5].astype(np.int8), n)


# ---------------------------------------------------------------------------
# loss, training, prediction

def _softplus(z):
    return np.logaddexp(0.0, z)


def imitation_loss_head(actions, labels):
    """Loss head for :meth:`Network.value_and_grad`: mean negative log-likelihood of the contrastive labels."""
    actions = np.asarray(actions, dtype=float)
    t = np.asarray(labels, dtype=float)
    floor = -math.log(LOG_CLAMP)

    def head(y):
        z = np.sum(y * actions, axis=1)
        neg_log_p = _softplus(-z)      # -log sigma
        neg_log_q = _softplus(z)       # -log (1 - sigma)
        lp = np.minimum(neg_log_p, floor)
        lq = np.minimum(neg_log_q, floor)
        loss = np.mean(t * lp + (1 - t) * lq)
        sig = 0.5 * (1.0 + np.tanh(0.5 * z))
        dz = t * (sig - 1.0) * (neg_log_p < floor) + (1 - t) * sig * (neg_log_q < floor)
        return float(loss), (dz / len(z))[:, None] * actions

    return head


def imitation_loss(ckpt_or_params, batch, spec=None, buffers=None, train: bool = False) -> float:
    """Mean of ``-[t log s + (1-t) log(1-s)]``, ``s = sigmoid(y(grid) . a)``.

    ``batch`` is an :class:`ImitationDataset` or a sequence of samples.
    """
    params, spec, buffers = _unpack_model(ckpt_or_params, spec, buffers)
    grids, actions, labels = _batch_arrays(batch)
    if len(labels) == 0:
        raise RejectedInput("imitation loss needs a nonempty batch")
    out, _, _, _ = network(spec).forward(params, grids[:, None], train=train, buffers=buffers)
    return imitation_loss_head(actions, labels)(out)[0]


def _batch_arrays(batch):
    if isinstance(batch, ImitationDataset):
        return batch.grids, batch.actions, batch.labels
    grids = np.array([s.grid for s in batch])
    return grids, np.array([s.action for s in batch]), np.array([s.label for s in batch])


def _unpack_model(model, spec, buffers):
    if isinstance(model, Checkpoint):
        return model.params, model.spec, model.buffers
    return np.asarray(model), spec or angle_net_spec(), buffers


def dihedral(grids, actions, k: int):
    """Apply symmetry ``k`` in 0..7 of the square to grids and their actions.

    Transposing a grid swaps the two coordinates of an action; flipping grid
    axis ``m`` negates action coordinate ``m`` (centered offsets only).
    """
    g, a = grids, actions.copy()
    if k & 1:
        g = np.swapaxes(g, -1, -2)
        a = a[:, ::-1].copy()
    if k & 2:
        g = g[..., ::-1, :]
        a[:, 0] = -a[:, 0]
    if k & 4:
        g = g[..., :, ::-1]
        a[:, 1] = -a[:, 1]
    return np.ascontiguousarray(g), a


@dataclass
class AngleTrainConfig:
    epochs: int = 50
    batch_size: int = 128
    step_size: float = 1e-3
    final_step_size: float = 1e-4
    seed: int = 0
    holdout_fraction: float = 0.1
    augment: bool = True
    max_steps: Optional[int] = None
    log_every: int = 0


@dataclass
class AngleTrainResult:
    checkpoint: Checkpoint
    history: list = field(default_factory=list)
    heldout: dict = field(default_factory=dict)


def split_by_function(ds: ImitationDataset, fraction: float, rng):
    ids = np.unique(ds.function_ids)
    n_hold = int(round(fraction * len(ids)))
    if n_hold == 0 or n_hold == len(ids):
        return ds, None
    held = rng.choice(ids, size=n_hold, replace=False)
    mask = np.isin(ds.function_ids, held)
    return ds.subset(~mask), ds.subset(mask)


def train_angle_predictor(ds: ImitationDataset, config: AngleTrainConfig = None) -> AngleTrainResult:
    """Minibatch Adam on the imitation loss; returns the final checkpoint and metrics."""
    config = config or AngleTrainConfig()
    rng = np.random.default_rng(config.seed)
    spec = angle_net_spec(ds.n)
    net = network(spec)
    params, buffers = net.init_params(rng)
    train, held = split_by_function(ds, config.holdout_fraction, rng)
    state = AdamState.zeros(net.n_params)
    N = len(train)
    bs = min(config.batch_size, N)
    per_epoch = max(1, N // bs)
    total = config.epochs * per_epoch
    if config.max_steps is not None:
        total = min(total, config.max_steps)
    history = []
    last_good = Checkpoint(spec, params.copy(), buffers.copy(), {"seed": config.seed, "steps": 0})
    step = 0
    while step < total:
        order = rng.permutation(N)
        for b in range(per_epoch):
            if step >= total:
                break
            idx = order[b * bs:(b + 1) * bs]
            grids, acts = train.grids[idx], train.actions[idx]
            if config.augment:
                grids, acts = dihedral(grids, acts, int(rng.integers(8)))
            head = imitation_loss_head(acts, train.labels[idx])
            loss, grad, _, new_buffers = net.value_and_grad(params, grids[:, None], head, train=True,
                                                            buffers=buffers)
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise TrainingError(f"imitation loss diverged at step {step}", last_good=last_good)
            frac = step / max(1, total - 1)
            lr = config.step_size * (config.final_step_size / config.step_size) ** frac
            params, state = adam_update(params, grad, state, lr)
            buffers = new_buffers
            history.append(loss)
            step += 1
            if config.log_every and step % config.log_every == 0:
                log.info("angle step %d/%d loss %.4f", step, total, np.mean(history[-config.log_every:]))
                last_good = Checkpoint(spec, params.copy(), buffers.copy(), {"seed": config.seed, "steps": step})
    # refresh running statistics on the training set before switching to inference mode
    buffers = _recalibrate_batchnorm(net, params, buffers, train.grids, rng)
    meta = {"seed": config.seed, "steps": step, "loss": float(np.mean(history[-50:])) if history else None,
            "train_samples": int(N)}
    ckpt = Checkpoint(spec, params, buffers, meta)
    heldout = evaluate_predictor(ckpt, held) if held is not None and len(held) else {}
    ckpt.metadata.update({f"heldout_{k}": v for k, v in heldout.items()})
    return AngleTrainResult(ckpt, history, heldout)


def _recalibrate_batchnorm(net, params, buffers, grids, rng, batches: int = 20, bs: int = 256):
    if net.n_buffers == 0 or len(grids) == 0:
        return buffers
    sums = None
    for _ in range(batches):
        idx = rng.choice(len(grids), size=min(bs, len(grids)), replace=False)
        _, _, nb, _ = net.forward(params, grids[idx][:, None], train=True, buffers=buffers)
        # undo the momentum blend to recover the batch statistic
        stat = (nb - BN_MOMENTUM * buffers) / (1 - BN_MOMENTUM)
        sums = stat if sums is None else sums + stat
    return sums / batches


def network_outputs(ckpt: Checkpoint, grids, chunk: int = 1024) -> np.ndarray:
    grids = np.asarray(grids, dtype=float)
    net = ckpt.net
    outs = []
    for s in range(0, len(grids), chunk):
        out, _, _, _ = net.forward(ckpt.params, grids[s:s + chunk, None], buffers=ckpt.buffers)
        outs.append(out)
    return np.concatenate(outs) if outs else np.zeros((0, 2))


def predict_directions(ckpt: Checkpoint, grids):
    """Unit directions for a stack of normalized grids, plus a degeneracy mask."""
    y = network_outputs(ckpt, grids)
    norm = np.linalg.norm(y, axis=1)
    degenerate = norm < 1e-12
    out = np.where(degenerate[:, None], np.array([1.0, 0.0]), y / np.where(degenerate, 1.0, norm)[:, None])
    return out, degenerate


def predict_direction(ckpt: Checkpoint, grid):
    """``y / ||y||`` for one grid (a :class:`GridSample` or normalized array)."""
    arr = getattr(grid, "normalized", grid)
    d, degenerate = predict_directions(ckpt, np.asarray(arr)[None])
    return d[0], bool(degenerate[0])


def angle_degrees(u, v) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    cos = np.sum(u * v, axis=-1) / (np.linalg.norm(u, axis=-1) * np.linalg.norm(v, axis=-1))
    return np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))


def evaluate_predictor(ckpt: Checkpoint, ds: ImitationDataset) -> dict:
    y = network_outputs(ckpt, ds.grids)
    z = np.sum(y * ds.actions, axis=1)
    acc = float(np.mean((z > 0) == (ds.labels == 1)))
    pos = ds.labels == 1
    d, _ = predict_directions(ckpt, ds.grids[pos])
    return {"accuracy": acc, "mean_angle": float(np.mean(angle_degrees(d, ds.actions[pos]))),
            "loss": imitation_loss_head(ds.actions, ds.labels)(y)[0]}


# ---------------------------------------------------------------------------
# angle-dissimilarity table

TABLE_ROWS = ("quadratic", "valley", "saddle", "plateau_cliff", "all")


@dataclass
class TableConfig:
    train_functions: int = 2000
    test_functions: int = 200
    steps: int = 10
    seed: int = 0
    train: AngleTrainConfig = field(default_factory=AngleTrainConfig)


def mean_dissimilarity(ckpt: Checkpoint, ds: ImitationDataset) -> float:
    pos = ds.positives()
    d, _ = predict_directions(ckpt, pos.grids)
    return float(np.mean(angle_degrees(d, pos.actions)))


def angle_dissimilarity_matrix(config: TableConfig = None, progress=None):
    """Train one predictor per row and score it on held-out functions of each modality.

    Returns ``(table, checkpoints)`` with ``table[row][column]`` in degrees.
    """
    config = config or TableConfig()
    test_sets = {}
    for ci, mod in enumerate(MODALITIES):
        rng = np.random.default_rng([config.seed, 1000 + ci])
        test_sets[mod] = collect_imitation_dataset(config.test_functions, config.steps, rng, modalities=[mod])
    table, ckpts = {}, {}
    for ri, row in enumerate(TABLE_ROWS):
        mods = MODALITIES if row == "all" else (row,)
        rng = np.random.default_rng([config.seed, ri])
        ds = collect_imitation_dataset(config.train_functions, config.steps, rng, modalities=mods)
        res = train_angle_predictor(ds, config.train)
        ckpts[row] = res.checkpoint
        table[row] = {mod: mean_dissimilarity(res.checkpoint, test_sets[mod]) for mod in MODALITIES}
        if progress:
            progress(row, table[row])
    return table, ckpts


def write_table_csv(path, table) -> None:
    with open(path, "w") as fh:
        fh.write("train," + ",".join(MODALITIES) + "\n")
        for row in TABLE_ROWS:
            if row in table:
                fh.write(row + "," + ",".join(f"{table[row][m]:.2f}" for m in MODALITIES) + "\n")
