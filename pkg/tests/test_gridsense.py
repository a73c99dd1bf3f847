import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rover.errors import ObservationError, RejectedInput
from rover.fields import ScalarField, make_test_function
from rover.gridsense import (embed_direction, grid_offsets, grid_points, grid_sample, normalize_grid,
                             read_grid_csv, slice_field, slice_grids, write_grid_csv)

SPHERE = ScalarField(2, lambda X: np.sum(X**2, axis=-1), name="sphere")


def test_strict_three_by_three_example():
    g = grid_sample(SPHERE, [0, 0], 1.0, n=3, strict=True)
    assert sorted([g.raw[0, 0], g.raw[0, 2], g.raw[2, 0], g.raw[2, 2]]) == [0.5, 2.5, 2.5, 4.5]
    assert g.normalized[0, 0] == 0 and g.normalized[2, 2] == 1 and g.normalized[0, 2] == 0.5


def test_centered_grid_puts_theta_in_the_middle():
    g = grid_sample(SPHERE, [0.3, -0.2], 0.1)
    assert g.raw[7, 7] == SPHERE.value([0.3, -0.2])
    np.testing.assert_array_equal(grid_offsets(5), [-2, -1, 0, 1, 2])
    np.testing.assert_array_equal(grid_offsets(4, strict=True), [-1, 0, 1, 2])


def test_constant_field_normalizes_to_half():
    const = ScalarField(2, lambda X: np.full(X.shape[:-1], -4.0))
    assert np.all(grid_sample(const, [1, 1], 0.2).normalized == 0.5)


@settings(max_examples=40, deadline=None)
@given(a=st.floats(0.01, 100), b=st.floats(-100, 100), x=st.floats(-3, 3), y=st.floats(-3, 3))
def test_normalization_affine_invariance(a, b, x, y):
    f = make_test_function("beale")
    g = ScalarField(2, lambda X: a * f.func(X) + b)
    n1 = grid_sample(f, [x, y], 0.2).normalized
    n2 = grid_sample(g, [x, y], 0.2).normalized
    np.testing.assert_allclose(n1, n2, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(x=st.floats(-2, 2), y=st.floats(-2, 2), delta=st.floats(0.01, 1), n=st.integers(2, 9))
def test_strict_round_trip_is_bit_exact(x, y, delta, n):
    f = make_test_function("ackley")
    g = grid_sample(f, [x, y], delta, n=n, strict=True)
    o = np.arange(1, n + 1) - n / 2
    for i in range(n):
        for j in range(n):
            pt = np.array([x - delta * o[i], y - delta * o[j]])
            assert g.raw[i, j] == f.value(pt)
    norm = g.normalized
    if norm.max() > norm.min():
        assert norm.min() == 0 and norm.max() == 1


@settings(max_examples=30, deadline=None)
@given(cx=st.floats(-3, 3), cy=st.floats(-3, 3))
def test_translation_covariance(cx, cy):
    f = make_test_function("rosenbrock")
    c = np.array([cx, cy])
    shifted = ScalarField(2, lambda X: f.func(X - c))
    theta = np.array([0.4, -0.3])
    a = grid_sample(shifted, theta + c, 0.05).raw
    b = grid_sample(f, theta, 0.05).raw
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-9)


def test_non_finite_value_reports_offset():
    hole = ScalarField(2, lambda X: np.where(X[..., 0] > 0.25, np.nan, X[..., 1]))
    with pytest.raises(ObservationError) as exc:
        grid_sample(hole, [0, 0], 0.1, n=7)
    assert exc.value.offset[0] > 0.25


def test_grid_rejects_bad_arguments():
    with pytest.raises(RejectedInput):
        grid_sample(SPHERE, [0, 0], 0.0)
    with pytest.raises(RejectedInput):
        grid_sample(ScalarField(3, lambda X: X[..., 0]), [0, 0, 0], 0.1)


def test_slice_examples():
    f = ScalarField(3, lambda X: np.sum(X**2, axis=-1))
    g = slice_field(f, [0, 0, 1.0], 0, 1)
    assert g.value([0.5, -2]) == pytest.approx(0.25 + 4 + 1)
    rng = np.random.default_rng(0)
    theta = rng.standard_normal(5)
    w = rng.standard_normal(5)
    lin = ScalarField(5, lambda X: X @ w)
    s = slice_field(lin, theta, 1, 3)
    u, v = rng.standard_normal((2, 2))
    assert s.value(u + v) == pytest.approx(s.value(u) + s.value(v) - s.value([0, 0]))
    assert slice_field(make_test_function("beale"), [1.0, 2.0], 1, 0).value([0, 0]) == make_test_function("beale").value([1, 2])
    with pytest.raises(RejectedInput):
        slice_field(f, [0, 0, 0], 1, 1)
    with pytest.raises(RejectedInput):
        slice_field(f, [0, 0, 0], 0, 3)


def test_embed_direction():
    np.testing.assert_array_equal(embed_direction([1, 2], 0, 2, 4), [1, 0, 2, 0])
    assert np.all(embed_direction([0, 0], 1, 2, 3) == 0)
    v = np.array([0.3, -1.1])
    E = np.stack([embed_direction([1, 0], 1, 4, 6), embed_direction([0, 1], 1, 4, 6)], axis=1)
    np.testing.assert_array_equal(E.T @ embed_direction(v, 1, 4, 6), v)
    with pytest.raises(RejectedInput):
        embed_direction([1, 1], 2, 2, 4)


def test_slice_grids_match_per_pair_sampling():
    rng = np.random.default_rng(1)
    w = rng.standard_normal((6, 6))
    f = ScalarField(6, lambda X: np.sum((X @ w) ** 2, axis=-1) + np.sin(X[..., 0]))
    theta = rng.standard_normal(6)
    pairs = [(0, 1), (2, 5), (4, 3)]
    deltas = np.array([0.1, 0.3, 0.05])
    raw = slice_grids(f, theta, pairs, deltas)
    for k, (i, j) in enumerate(pairs):
        ref = grid_sample(slice_field(f, theta, i, j), [0, 0], deltas[k]).raw
        np.testing.assert_allclose(raw[k], ref, rtol=1e-13, atol=1e-13)


def test_grid_points_shape():
    P = grid_points([1.0, 2.0], 0.5, 4)
    assert P.shape == (4, 4, 2)


def test_normalize_stack():
    stack = np.random.default_rng(0).random((3, 5, 5))
    stack[1] = 7.0
    out = normalize_grid(stack)
    assert np.all(out[1] == 0.5) and out[0].min() == 0 and out[2].max() == 1


def test_grid_csv_round_trip(tmp_path):
    g = grid_sample(make_test_function("rastrigin"), [0.31, -1.7], 0.07, n=5)
    write_grid_csv(tmp_path / "g.csv", g)
    back = read_grid_csv(tmp_path / "g.csv")
    assert np.array_equal(back.raw, g.raw) and np.array_equal(back.center, g.center)
    assert back.delta == g.delta and back.n == 5
