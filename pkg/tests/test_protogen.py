import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rover.errors import GenerationError, RejectedInput
from rover.fields import finite_difference_gradient, finite_difference_hessian
from rover.protogen import (MODALITIES, AnchorSet, GPConditional, covariance, gp_conditional,
                            kernel_matrix, sample_proto, sample_proto_seeded)


def test_covariance_examples():
    S = np.array([[2.0, 0.3], [0.3, 1.0]])
    norm = 1 / math.sqrt(np.linalg.det(2 * np.pi * S))
    assert covariance([0, 0], [1.3, -2], S, form="verbatim") == pytest.approx(norm, rel=1e-14)
    assert covariance([1, 0], [1, 0], np.eye(2), form="verbatim") == pytest.approx(math.exp(-0.5) / (2 * math.pi))
    assert covariance([1, 2], [1, 2], np.eye(2)) == pytest.approx(1 / (2 * math.pi))


@pytest.mark.parametrize("form", ["standard", "verbatim"])
def test_covariance_is_symmetric(form):
    rng = np.random.default_rng(0)
    S = np.array([[1.5, 0.2], [0.2, 0.7]])
    for _ in range(100):
        x, y = rng.standard_normal((2, 2))
        assert covariance(x, y, S, form) == pytest.approx(covariance(y, x, S, form), rel=1e-14)


def test_covariance_rejects_bad_matrices():
    with pytest.raises(RejectedInput):
        covariance([0, 0], [1, 1], np.array([[1, 2], [2, 1.0]]))
    with pytest.raises(RejectedInput):
        covariance([0, 0], [1, 1], np.array([[1, 0.5], [0, 1.0]]))
    with pytest.raises(RejectedInput):
        kernel_matrix(np.zeros((1, 2)), np.zeros((1, 2)), np.eye(2), form="other")


@pytest.mark.parametrize("form", ["standard", "verbatim"])
def test_gp_interpolates_anchors(form):
    rng = np.random.default_rng(1)
    anchors = AnchorSet(rng.uniform(-1, 1, (4, 2)), rng.standard_normal(4) * 3, np.diag([0.3, 0.5]))
    for x, v in zip(anchors.points, anchors.values):
        assert gp_conditional(anchors, x, form=form) == pytest.approx(v, abs=1e-6)


def test_gp_mean_decays_far_from_anchor():
    anchors = AnchorSet(np.zeros((1, 2)), np.array([-5.0]), np.eye(2) * 0.2)
    assert abs(gp_conditional(anchors, [30.0, -40.0])) < 1e-12


def test_gp_variance_bounds_and_draws():
    rng = np.random.default_rng(2)
    anchors = AnchorSet(rng.uniform(-1, 1, (3, 2)), rng.standard_normal(3), np.eye(2) * 0.5)
    gp = GPConditional(anchors)
    X = rng.uniform(-3, 3, (200, 2))
    var = gp.variance(X)
    assert np.all(var >= 0) and np.all(var <= gp.prior_var + 1e-15)
    assert np.all(gp.variance(anchors.points) < 1e-6 * gp.prior_var)
    assert gp_conditional(anchors, X[0], rng=np.random.default_rng(0)) != gp.mean(X[:1])[0]


def test_singular_gram_matrix_is_generation_error():
    anchors = AnchorSet(np.zeros((2, 2)), np.array([1.0, 1.0]), np.eye(2))
    import rover.protogen as pg
    old = pg.JITTER
    pg.JITTER = 0.0
    try:
        with pytest.raises(GenerationError):
            GPConditional(anchors)
    finally:
        pg.JITTER = old


def test_gp_gradient_and_hessian_are_analytic():
    rng = np.random.default_rng(5)
    anchors = AnchorSet(rng.uniform(-1, 1, (4, 2)), rng.standard_normal(4), np.array([[0.4, 0.1], [0.1, 0.3]]))
    f = sample_proto("saddle", np.random.default_rng(0))
    gp = GPConditional(anchors)
    for x in rng.uniform(-1.5, 1.5, (5, 2)):
        num = finite_difference_gradient(type(f)(dim=2, func=gp.mean), x)
        np.testing.assert_allclose(gp.grad(x), num, atol=1e-7)
        np.testing.assert_allclose(gp.hess(x), finite_difference_hessian(type(f)(dim=2, func=gp.mean), x),
                                   atol=1e-4)


def test_valley_eigenvalue_ratio_and_anisotropy():
    rng = np.random.default_rng(7)
    for _ in range(100):
        f = sample_proto("valley", rng)
        ev = np.linalg.eigvalsh(f.anchors.S)
        assert 100 - 1e-9 <= ev[1] / ev[0] <= 200 + 1e-9
        assert f.anchors.points.tolist() == [[0.0, 0.0]] and -5 <= f.anchors.values[0] <= 0
        H = finite_difference_hessian(f, np.zeros(2), h=1e-4)
        assert np.linalg.cond(H) > 10


def test_quadratic_minimum_is_least_squares():
    rng = np.random.default_rng(8)
    for _ in range(20):
        f = sample_proto("quadratic", rng)
        A, b = f.meta["A"], f.meta["b"]
        np.testing.assert_allclose(f.minimizer, np.linalg.lstsq(A, b, rcond=None)[0])
        assert np.linalg.cond(A) <= 50
        assert np.all(f.min_value <= f.batch(rng.uniform(-5, 5, (100, 2))))


def test_saddle_sign_pattern():
    rng = np.random.default_rng(9)
    for _ in range(50):
        f = sample_proto("saddle", rng)
        pts = f.anchors.points
        # one anchor per quadrant in counter-clockwise order
        np.testing.assert_array_equal(np.sign(pts), [[1, 1], [-1, 1], [-1, -1], [1, -1]])
        assert np.all(np.abs(pts) <= 1)
        np.testing.assert_array_equal(np.sign(f.batch(pts)), [1, -1, 1, -1])


def test_plateau_value_is_negative():
    rng = np.random.default_rng(10)
    for _ in range(50):
        f = sample_proto("plateau_cliff", rng)
        assert f.anchors.values[0] < 0
        assert f.value([0, 0]) == pytest.approx(f.anchors.values[0], abs=1e-6)


@pytest.mark.parametrize("modality", MODALITIES)
def test_known_minimum_is_not_beaten_by_a_scan(modality):
    rng = np.random.default_rng(11)
    for _ in range(5):
        f = sample_proto(modality, rng)
        t = np.linspace(-6, 6, 121)
        G = np.stack(np.meshgrid(t, t, indexing="ij"), -1) + f.center
        assert f.min_value <= f.batch(G).min() + 1e-9
        assert f.value(f.minimizer) == pytest.approx(f.min_value, abs=1e-9)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), modality=st.sampled_from(MODALITIES))
def test_seeded_generation_is_bit_reproducible(seed, modality):
    a = sample_proto_seeded(modality, seed)
    b = sample_proto_seeded(modality, seed)
    X = np.random.default_rng(seed).uniform(-3, 3, (20, 2))
    assert np.array_equal(a.batch(X), b.batch(X))
    assert np.array_equal(a.batch(X), a.batch(X))


def test_noisy_fields_vary_only_with_a_stream():
    f = sample_proto("valley", np.random.default_rng(0), noisy=True)
    X = np.array([[0.5, 0.5], [2.0, 1.0]])
    assert np.array_equal(f.batch(X), f.func(X))
    rng = np.random.default_rng(1)
    assert not np.array_equal(f.batch(X, rng), f.batch(X, rng))
    q = sample_proto("quadratic", np.random.default_rng(0), noisy=True)
    assert q.noise_sigma > 0


def test_verbatim_kernel_sampling():
    f = sample_proto("saddle", np.random.default_rng(3), kernel_form="verbatim")
    assert f.gp.form == "verbatim" and f.grad is None
    assert np.isfinite(f.min_value)


def test_unknown_modality_rejected():
    with pytest.raises(RejectedInput):
        sample_proto("ridge", np.random.default_rng(0))
