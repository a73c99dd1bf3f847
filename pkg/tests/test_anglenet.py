import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from helpers import central_diff, rel_err
from rover import anglenet as an
from rover.errors import RejectedInput
from rover.fields import ScalarField, quadratic_field
from rover.gridsense import grid_sample, normalize_grid
from rover.neuralcore import Checkpoint, angle_net_spec, network


def _field(fn, dim=2, name="f"):
    return ScalarField(dim, fn, name=name)


def _random_ckpt(seed=0):
    spec = angle_net_spec()
    params, buffers = network(spec).init_params(np.random.default_rng(seed))
    return Checkpoint(spec, params, buffers)


@pytest.fixture(scope="module")
def small_dataset():
    return an.collect_imitation_dataset(6, 4, np.random.default_rng(3))


# ---------------------------------------------------------------------------
# teachers

@pytest.mark.parametrize("seed", range(5))
def test_newton_teacher_lands_on_bowl_minimum(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((2, 2)) + 2 * np.eye(2)
    b = rng.standard_normal(2)
    f = quadratic_field(A, b)
    theta = f.minimizer + rng.uniform(-3, 3, size=2)
    step = an.teacher_step(f, theta)
    assert step.teacher == an.TEACHER_NEWTON
    assert np.linalg.norm(theta + step.move - f.minimizer) < 1e-6


def test_collinear_candidates_tie_to_gradient():
    f = _field(lambda X: np.sum(X**2, axis=-1))
    step = an.teacher_step(f, np.array([1.0, 0.0]), trials=(an.TRIAL_STEP,))
    d_gd, d_nt = step.candidates
    assert d_gd[0] < 0 and abs(d_gd[1]) < 1e-8
    assert d_nt[0] < 0 and abs(d_nt[1]) < 1e-8
    assert step.teacher == an.TEACHER_GD


def test_saddle_fixed_trial_prefers_gradient():
    f = _field(lambda X: X[..., 0] ** 2 - X[..., 1] ** 2)
    theta = np.array([1.0, 0.1])
    step = an.teacher_step(f, theta, trials=(0.1,))
    # unit gradient step: decrease about 0.2; damped Newton heads along x2: about 0.05
    u = np.array([-2.0, 0.2]) / math.hypot(2.0, 0.2)
    expected = f.value(theta) - f.value(theta + 0.1 * u)
    assert step.teacher == an.TEACHER_GD
    assert step.decrease == pytest.approx(expected, rel=1e-9)


def test_saddle_ladder_prefers_escape_direction():
    f = _field(lambda X: X[..., 0] ** 2 - X[..., 1] ** 2)
    step = an.teacher_step(f, np.array([1.0, 0.1]))
    assert step.teacher == an.TEACHER_NEWTON
    assert abs(step.direction[1]) > abs(step.direction[0])


def test_both_candidates_increase_flags_warning():
    f = _field(lambda X: np.sum(X**2, axis=-1))
    step = an.teacher_step(f, np.array([1e-3, 0.0]), trials=(1.0,))
    assert step.warning and step.teacher == an.TEACHER_GD


def test_newton_damping_on_indefinite_hessian():
    g = np.array([1.0, 1.0])
    H = np.diag([1.0, -2.0])
    d = an.newton_direction(g, H)
    lam = 1e-6 + 2.0
    assert np.allclose(d, -g / np.array([1.0 + lam, -2.0 + lam]))


# ---------------------------------------------------------------------------
# negatives

def test_negative_in_opposite_half_plane_and_unit():
    rng = np.random.default_rng(0)
    for _ in range(500):
        d = rng.standard_normal(2) * rng.uniform(0.01, 10)
        neg = an.sample_negative(d, rng)
        assert neg @ d < 0
        assert abs(np.linalg.norm(neg) - 1) < 1e-9


def test_negative_angle_is_uniform():
    rng = np.random.default_rng(1)
    a = np.array([0.6, 0.8])
    angles = []
    for _ in range(10_000):
        neg = an.sample_negative(a, rng)
        ref = -a
        angles.append(math.atan2(ref[0] * neg[1] - ref[1] * neg[0], ref @ neg))
    ks = stats.kstest(np.array(angles), stats.uniform(loc=-np.pi / 2, scale=np.pi).cdf).statistic
    assert ks < 0.02


def test_negative_of_zero_rejected():
    with pytest.raises(RejectedInput):
        an.sample_negative(np.zeros(2), np.random.default_rng(0))


# ---------------------------------------------------------------------------
# dataset

def test_dataset_balanced_and_normalized(small_dataset):
    ds = small_dataset
    assert len(ds) == 2 * 6 * 4
    assert int(ds.labels.sum()) * 2 == len(ds)
    lo = ds.grids.min(axis=(1, 2))
    hi = ds.grids.max(axis=(1, 2))
    flat = np.all(ds.grids == 0.5, axis=(1, 2))
    assert np.all(flat | ((lo == 0) & (hi == 1)))
    assert np.allclose(np.linalg.norm(ds.actions, axis=1), 1, atol=1e-9)


def test_each_negative_opposes_its_positive(small_dataset):
    pos, neg = small_dataset.actions[0::2], small_dataset.actions[1::2]
    assert np.all(small_dataset.labels[0::2] == 1) and np.all(small_dataset.labels[1::2] == 0)
    assert np.all(np.sum(pos * neg, axis=1) < 0)


def test_dataset_binary_round_trip(tmp_path, small_dataset):
    path = tmp_path / "d.bin"
    an.save_dataset(path, small_dataset)
    back = an.load_dataset(path)
    for name in ("grids", "actions", "labels", "function_ids", "modalities", "teachers"):
        assert np.array_equal(getattr(back, name), getattr(small_dataset, name))


def test_truncated_dataset_file_rejected(tmp_path, small_dataset):
    path = tmp_path / "d.bin"
    an.save_dataset(path, small_dataset)
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(RejectedInput):
        an.load_dataset(path)


def test_collection_counts_rejected():
    with pytest.raises(RejectedInput):
        an.collect_imitation_dataset(0, 10, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# loss

def test_zero_output_loss_is_ln2():
    acts = np.array([[1.0, 0.0], [0.0, 1.0], [0.6, -0.8]])
    loss, _ = an.imitation_loss_head(acts, np.array([1, 0, 1]))(np.zeros((3, 2)))
    assert loss == pytest.approx(math.log(2), abs=1e-15)


def test_confident_positive_loss_vanishes():
    a = np.array([[0.6, 0.8]])
    loss, _ = an.imitation_loss_head(a, np.array([1]))(50.0 * a)
    assert loss < 1e-20


def test_confident_negative_loss_clamped():
    a = np.array([[0.6, 0.8]])
    loss, grad = an.imitation_loss_head(a, np.array([0]))(1e4 * a)
    assert loss == pytest.approx(-math.log(an.LOG_CLAMP))
    assert np.all(grad == 0)


def test_loss_head_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    acts = rng.standard_normal((6, 2))
    acts /= np.linalg.norm(acts, axis=1, keepdims=True)
    labels = rng.integers(0, 2, 6)
    y = rng.standard_normal((6, 2))
    head = an.imitation_loss_head(acts, labels)
    _, g = head(y)
    fd = central_diff(lambda v: head(v.reshape(6, 2))[0], y.ravel(), range(12)).reshape(6, 2)
    assert np.all(rel_err(g, fd) < 1e-6)


def test_end_to_end_loss_gradient(small_dataset):
    ck = _random_ckpt(1)
    net = ck.net
    batch = small_dataset.subset(np.arange(8))
    head = an.imitation_loss_head(batch.actions, batch.labels)
    _, grad, _, _ = net.value_and_grad(ck.params, batch.grids[:, None], head, train=False, buffers=ck.buffers)
    idx = np.random.default_rng(2).choice(net.n_params, 20, replace=False)
    fd = central_diff(lambda p: an.imitation_loss(p, batch, ck.spec, ck.buffers), ck.params, idx)
    assert np.all(rel_err(grad[idx], fd, floor=1e-8) < 1e-4)


# ---------------------------------------------------------------------------
# augmentation

def _permutation(k):
    P = np.eye(2)
    if k & 1:
        P = P[::-1]
    if k & 2:
        P = np.diag([-1.0, 1.0]) @ P
    if k & 4:
        P = np.diag([1.0, -1.0]) @ P
    return P


@pytest.mark.parametrize("k", range(8))
def test_dihedral_matches_transformed_field(k):
    f = _field(lambda X: np.sin(X[..., 0]) + 0.3 * X[..., 1] ** 3 + X[..., 0] * X[..., 1])
    P = _permutation(k)
    g = _field(lambda X: f.func(X @ P))        # g(x) = f(P^T x)
    theta = np.array([0.4, -0.7])
    a = np.array([0.6, -0.8])
    grid = grid_sample(f, theta, 0.2).raw
    out_g, out_a = an.dihedral(grid[None], a[None], k)
    assert np.allclose(out_g[0], grid_sample(g, P @ theta, 0.2).raw, atol=1e-12)
    assert np.allclose(out_a[0], P @ a)


# ---------------------------------------------------------------------------
# prediction

def test_predictions_are_unit():
    ck = _random_ckpt(3)
    grids = normalize_grid(np.random.default_rng(0).standard_normal((100, 15, 15)))
    dirs, degenerate = an.predict_directions(ck, grids)
    assert not degenerate.any()
    assert np.allclose(np.linalg.norm(dirs, axis=1), 1, atol=1e-9)


def test_prediction_invariant_to_affine_field_change():
    ck = _random_ckpt(4)
    f = _field(lambda X: np.cos(X[..., 0]) * X[..., 1] + X[..., 0] ** 2)
    h = _field(lambda X: 3 * f.func(X) + 7)
    theta = np.array([0.3, 1.1])
    d1, _ = an.predict_direction(ck, grid_sample(f, theta, 0.1))
    d2, _ = an.predict_direction(ck, grid_sample(h, theta, 0.1))
    assert np.allclose(d1, d2, atol=1e-12)


def test_zero_output_falls_back():
    ck = _random_ckpt(5)
    p = ck.params.copy()
    p[-(64 * 2 + 2):] = 0.0  # final dense weights and bias
    ck0 = Checkpoint(ck.spec, p, ck.buffers)
    d, degenerate = an.predict_direction(ck0, np.full((15, 15), 0.5))
    assert degenerate and np.array_equal(d, [1.0, 0.0])


def test_untrained_predictor_is_near_ninety_degrees():
    ds = an.collect_imitation_dataset(60, 5, np.random.default_rng(7))
    angles = [an.mean_dissimilarity(_random_ckpt(s), ds) for s in range(4)]
    assert abs(np.mean(angles) - 90) < 10


@given(st.lists(st.floats(-1, 1), min_size=2, max_size=2), st.lists(st.floats(-1, 1), min_size=2, max_size=2))
@settings(max_examples=100, deadline=None)
def test_angle_in_range(u, v):
    u, v = np.array(u) + [2.0, 0.0], np.array(v) - [0.0, 2.0]
    ang = an.angle_degrees(u, v)
    assert 0 <= ang <= 180


# ---------------------------------------------------------------------------
# training

def test_single_function_overfits():
    ds = an.collect_imitation_dataset(1, 10, np.random.default_rng(11), modalities=["quadratic"])
    cfg = an.AngleTrainConfig(epochs=10_000, batch_size=len(ds), holdout_fraction=0.0, max_steps=2000,
                              augment=False, step_size=1e-3, final_step_size=1e-3)
    res = an.train_angle_predictor(ds, cfg)
    first = res.history[0]
    assert np.mean(res.history[-20:]) < 0.1 * first


def test_training_is_deterministic(small_dataset):
    cfg = an.AngleTrainConfig(epochs=1, batch_size=8, max_steps=10, seed=5)
    a = an.train_angle_predictor(small_dataset, cfg).checkpoint
    b = an.train_angle_predictor(small_dataset, cfg).checkpoint
    assert np.array_equal(a.params, b.params) and np.array_equal(a.buffers, b.buffers)


def test_training_divergence_keeps_last_good(small_dataset, monkeypatch):
    from rover.errors import TrainingError
    real = an.imitation_loss_head

    def poisoned(actions, labels):
        head = real(actions, labels)
        return lambda y: (float("nan"), head(y)[1])

    monkeypatch.setattr(an, "imitation_loss_head", poisoned)
    with pytest.raises(TrainingError) as info:
        an.train_angle_predictor(small_dataset, an.AngleTrainConfig(max_steps=3))
    assert info.value.last_good is not None
