import numpy as np
import pytest

from rover import baselines as bl
from rover.errors import RejectedInput
from rover.fields import ScalarField, make_test_function, quadratic_field


def random_bowl(seed):
    rng = np.random.default_rng(seed)
    while True:
        A = rng.standard_normal((2, 2))
        if np.linalg.cond(A) < 20:
            return quadratic_field(A, rng.standard_normal(2))


def stretched(rho):
    return ScalarField(2, lambda X: 0.5 * (X[..., 0] ** 2 + rho * X[..., 1] ** 2),
                       grad=lambda x: np.array([x[0], rho * x[1]]), known_minimum=(np.zeros(2), 0.0))


@pytest.mark.parametrize("seed", range(10))
def test_newton_one_step_on_bowls(seed):
    f = random_bowl(seed)
    tr = bl.baseline_run("newton", f, f.minimizer + 3.0, bl.BaselineConfig(iterations=1))
    assert np.linalg.norm(tr.thetas[1] - f.minimizer) <= 1e-8


def test_newton_with_finite_differences():
    f = random_bowl(3)
    fd = ScalarField(2, f.func)
    tr = bl.baseline_run("newton", fd, f.minimizer + 1.0, bl.BaselineConfig(iterations=1))
    assert np.linalg.norm(tr.thetas[1] - f.minimizer) < 1e-4


def test_gd_diverges_past_stability_bound():
    rho = 100.0
    unstable = bl.baseline_run("gd", stretched(rho), [1.0, 1.0], bl.BaselineConfig(step_size=2.2 / rho, iterations=500))
    stable = bl.baseline_run("gd", stretched(rho), [1.0, 1.0], bl.BaselineConfig(step_size=1.9 / rho, iterations=500))
    assert unstable.diverged and not stable.diverged
    assert np.all(np.isfinite(unstable.values))


def test_nan_truncates_trajectory():
    f = ScalarField(2, lambda X: np.where(X[..., 0] < -1, np.nan, np.sum(X**2, axis=-1)),
                    grad=lambda x: 2 * x)
    tr = bl.baseline_run("gd", f, [1.0, 0.0], bl.BaselineConfig(step_size=1.5, iterations=20))
    assert tr.diverged and len(tr.values) < 21


def test_nelder_mead_rosenbrock():
    tr = bl.baseline_run("nelder_mead", make_test_function("rosenbrock"), [-1.5, 2.0],
                         bl.BaselineConfig(iterations=500))
    assert tr.values.min() < 1e-4
    assert np.all(np.diff(tr.values) <= 0)


def test_cmaes_finds_rosenbrock_minimum_and_best_so_far():
    tr = bl.baseline_run("cmaes", make_test_function("rosenbrock"), [-1.5, 2.0],
                         bl.BaselineConfig(iterations=300, seed=1))
    assert tr.final < 1e-8
    assert np.all(np.diff(tr.values) <= 0)


def test_cmaes_weights():
    w = bl.cmaes_weights(6)
    assert len(w) == 3 and w.sum() == pytest.approx(1) and np.all(np.diff(w) < 0)


def test_cmaes_covariance_stays_positive_definite(monkeypatch):
    seen = []
    real = np.linalg.eigh

    def spy(C):
        vals, vecs = real(C)
        seen.append((np.allclose(C, C.T), vals.min()))
        return vals, vecs

    monkeypatch.setattr(bl.np.linalg, "eigh", spy)
    bl.baseline_run("cmaes", make_test_function("beale"), [-1.0, 2.0], bl.BaselineConfig(iterations=60))
    assert seen and all(sym and lo > 0 for sym, lo in seen)


@pytest.mark.parametrize("method,cfg", [
    ("gd", bl.BaselineConfig(step_size=0.1)),
    ("newton", bl.BaselineConfig()),
])
def test_monotone_on_strongly_convex_quadratics(method, cfg):
    for seed in range(50):
        rng = np.random.default_rng(seed)
        Q, _ = np.linalg.qr(rng.standard_normal((2, 2)))
        A = Q @ np.diag(rng.uniform(1.0, 4.0, 2)) @ Q.T
        f = ScalarField(2, lambda X, A=A: 0.5 * np.einsum("...i,ij,...j->...", X, A, X),
                        grad=lambda x, A=A: A @ x, hess=lambda x, A=A: A)
        tr = bl.baseline_run(method, f, rng.standard_normal(2) * 3, bl.replace(cfg, iterations=30))
        assert np.all(np.diff(tr.values) <= 1e-15)


def test_nesterov_beats_gd_on_ill_conditioned_bowl():
    cfg = bl.BaselineConfig(step_size=0.009, iterations=200)
    gd = bl.baseline_run("gd", stretched(100.0), [1.0, 1.0], cfg)
    nag = bl.baseline_run("nesterov", stretched(100.0), [1.0, 1.0], bl.replace(cfg, momentum=0.9))
    assert nag.final < 1e-3 * gd.final


def test_adam_reduces_loss():
    f = random_bowl(1)
    tr = bl.baseline_run("adam", f, f.minimizer + 2, bl.BaselineConfig(step_size=0.1, iterations=200))
    assert tr.final < 1e-2 * tr.values[0]


def test_tuning_returns_member_and_is_deterministic():
    problems = [(random_bowl(s), np.array([2.0, -1.0])) for s in range(3)]
    grid = bl.step_grid("gd", 20)
    a = bl.grid_search_tune("gd", problems, grid)
    b = bl.grid_search_tune("gd", problems, grid)
    assert a in grid and a == b


def test_tuned_gd_beats_default_on_held_out_bowls():
    tuned = bl.grid_search_tune("gd", [(random_bowl(s), np.array([2.0, 2.0])) for s in range(5)],
                                bl.step_grid("gd", 30, sizes=np.logspace(-3, 0, 13)))
    default = bl.BaselineConfig(step_size=1e-3, iterations=30)
    wins = 0
    for s in range(100, 120):
        f = random_bowl(s)
        t = bl.baseline_run("gd", f, [2.0, 2.0], tuned)
        d = bl.baseline_run("gd", f, [2.0, 2.0], default)
        wins += (t.final if not t.diverged else np.inf) < d.final
    assert wins >= 18


def test_config_validation():
    with pytest.raises(RejectedInput):
        bl.BaselineConfig(method="lbfgs")
    with pytest.raises(RejectedInput):
        bl.BaselineConfig(step_size=0)
    with pytest.raises(RejectedInput):
        bl.BaselineConfig(iterations=0)
    with pytest.raises(RejectedInput):
        bl.baseline_run("gd", random_bowl(0), [1.0, 2.0, 3.0])
    with pytest.raises(RejectedInput):
        bl.grid_search_tune("gd", [], [])
