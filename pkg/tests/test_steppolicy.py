import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rover import steppolicy as sp
from rover.errors import RejectedInput
from rover.fields import ScalarField, quadratic_field
from rover.neuralcore import Checkpoint
from rover.protogen import sample_proto_seeded


def bowl():
    return quadratic_field(np.array([[1.0, 0.2], [0.0, 2.0]]), np.array([0.5, -1.0]))


def fixed_direction(d=(1.0, 0.0)):
    d = np.asarray(d, dtype=float) / np.linalg.norm(d)
    return lambda grids: np.tile(d, (len(grids), 1))


def _ctx(f, theta):
    return sp.RewardContext(f.min_value, f.value(theta), "window", sp.HORIZON)


# ---------------------------------------------------------------------------
# transitions

def test_zero_action_moves_by_alpha():
    f = bowl()
    s = sp.NavState(np.array([1.0, 2.0]), 0.3, 0.1)
    nxt, obs, _, done = sp.env_step(s, sp.NavAction(0.0, 0.0), f, fixed_direction((3, 4)), _ctx(f, s.theta))
    assert nxt.alpha == 0.3 and nxt.delta == 0.1
    assert np.array_equal(nxt.theta, s.theta + 0.3 * np.array([0.6, 0.8]))
    assert obs.shape == (15, 15) and not done


def test_halving_twice_quarters():
    f = bowl()
    s = sp.NavState(np.array([1.0, 2.0]), 0.4, 0.2)
    ctx = _ctx(f, s.theta)
    for _ in range(2):
        s, _, _, _ = sp.env_step(s, sp.NavAction(-0.5, -0.5), f, fixed_direction(), ctx)
    assert s.alpha == pytest.approx(0.1, abs=0) and s.delta == pytest.approx(0.05, abs=0)


def test_doubling():
    f = bowl()
    s = sp.NavState(np.array([1.0, 2.0]), 0.4, 0.2)
    s, _, _, _ = sp.env_step(s, sp.NavAction(1.0, 1.0), f, fixed_direction(), _ctx(f, s.theta))
    assert (s.alpha, s.delta) == (0.8, 0.4)


def test_out_of_box_action_rejected():
    f = bowl()
    s = sp.NavState(np.array([1.0, 2.0]), 0.4, 0.2)
    with pytest.raises(RejectedInput):
        sp.env_step(s, (1.5, 0.0), f, fixed_direction(), _ctx(f, s.theta))
    assert sp.NavAction.clamped(2.0, -3.0) == sp.NavAction(1.0, -0.5)


def test_non_finite_landing_terminates():
    f = ScalarField(2, lambda X: np.where(X[..., 0] > 1.5, np.nan, X[..., 0] ** 2 + X[..., 1] ** 2))
    s = sp.NavState(np.array([0.0, 0.0]), 2.0, 0.01)
    nxt, obs, r, done = sp.env_step(s, (0.0, 0.0), f, fixed_direction(), sp.RewardContext(0.0, 0.0, "raw"))
    assert obs is None and done and r == sp.TERMINAL_PENALTY


def test_transition_is_deterministic():
    f = sample_proto_seeded("valley", 3)
    s = sp.NavState(f.center + np.array([2.0, 1.0]), 0.2, 0.1)
    angle = fixed_direction((1, -1))
    a = sp.env_step(s, (0.3, -0.2), f, angle, _ctx(f, s.theta))
    b = sp.env_step(s, (0.3, -0.2), f, angle, _ctx(f, s.theta))
    assert np.array_equal(a[0].theta, b[0].theta) and np.array_equal(a[1], b[1]) and a[2] == b[2]


# ---------------------------------------------------------------------------
# rewards

def test_reward_examples():
    assert sp.shaped_reward(2.0, 2.0, 5.0, 3.0, "norm") == (0.0, False)
    assert sp.shaped_reward(2.0, 2.0, 5.0, 3.0, "window") == (0.0, False)
    assert sp.shaped_reward(5.0, 2.0, 5.0, 3.0, "norm") == (-1.0, False)
    assert sp.shaped_reward(4.0, 2.0, 5.0, 3.0, "raw") == (-4.0, False)
    assert sp.shaped_reward(4.0, 2.0, 5.0, 3.0, "sparse", final=False) == (0.0, False)
    assert sp.shaped_reward(4.0, 2.0, 5.0, 3.0, "sparse", final=True) == (-4.0, False)


def test_vanishing_denominator_flagged():
    assert sp.shaped_reward(1.0, 1.0, 1.0, 1.0, "norm") == (-1.0, True)
    assert sp.shaped_reward(1.0, 1.0, 3.0, 1.0 + 1e-14, "window") == (-1.0, True)
    with pytest.raises(RejectedInput):
        sp.shaped_reward(1.0, 0.0, 2.0, 1.0, "dense")


@given(st.floats(0.01, 100), st.floats(-100, 100), st.lists(st.floats(0.1, 10), min_size=5, max_size=8),
       st.floats(-5, 0))
@settings(max_examples=200, deadline=None)
def test_shaped_rewards_affine_invariant(a, b, values, f_star):
    values = list(np.array(values) + f_star + 0.5)
    for mode in ("norm", "window"):
        ctx = sp.RewardContext(f_star, values[0], mode)
        tctx = sp.RewardContext(a * f_star + b, a * values[0] + b, mode)
        r, _ = ctx.reward(values, len(values) - 1)
        rt, _ = tctx.reward([a * v + b for v in values], len(values) - 1)
        assert abs(r - rt) <= 1e-12 * max(1.0, abs(r))


def test_window_reward_bounded():
    rng = np.random.default_rng(0)
    for _ in range(200):
        values = list(rng.uniform(0, 10, size=8))
        r, _ = sp.RewardContext(0.0, values[0], "window").reward(values, 7)
        assert -sp.WINDOW_K <= r <= 0


def test_unknown_optimum_falls_back_to_raw():
    r, flagged = sp.RewardContext(None, 3.0, "window").reward([3.0, 2.0], 1)
    assert (r, flagged) == (-2.0, True)


# ---------------------------------------------------------------------------
# episodes

def _inits(count, seed=0):
    cfg = sp.PolicyTrainConfig()
    out = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        f = sample_proto_seeded(("quadratic", "valley", "saddle", "plateau_cliff")[i % 4], 100 + i)
        out.append((f, sp.sample_init(f, rng, cfg)))
    return out


def test_zero_policy_keeps_controls():
    f, init = _inits(1)[0]
    ep = sp.run_episode(sp.ConstantPolicy((0.0, 0.0)), fixed_direction(), f, init, 30)
    assert len(ep) == 30
    assert ep.alphas[-1] == init[1] and ep.deltas[-1] == init[2]


def test_return_is_sum_of_rewards_and_raw_meta_loss():
    f, init = _inits(1)[0]
    ep = sp.run_episode(sp.ConstantPolicy((-0.1, 0.0)), fixed_direction((-1, 1)), f, init, 30, mode="raw")
    assert ep.total_return == pytest.approx(np.sum(ep.rewards), abs=0)
    assert -ep.total_return == pytest.approx(np.sum(ep.values[1:]), rel=1e-12)


def test_controls_stay_positive_and_probe_detects_recovery():
    f = bowl()
    probe = sp.probe_policy(sp.ConstantPolicy((1.0, -0.5)), fixed_direction(), f,
                            (np.array([3.0, 3.0]), 1e-4, 50.0), 20)
    assert np.all(probe["alpha"] > 0) and np.all(probe["delta"] > 0)
    assert sp.recovered(probe)
    stuck = sp.probe_policy(sp.ConstantPolicy((0.0, 0.0)), fixed_direction(), f,
                            (np.array([3.0, 3.0]), 1e-4, 50.0), 5)
    assert not sp.recovered(stuck)
    assert sp.bad_initialization() == (1e-4, 50.0)


def test_joint_recovery_needs_a_common_step():
    probe = {"alpha": np.array([1e-4, 0.1, 0.1]), "delta": np.array([0.1, 1e-3, 1e-3])}
    assert sp.recovered(probe) and not sp.recovered(probe, jointly=True)


def test_fresh_actor_starts_near_no_change():
    actor = sp.init_actor(np.random.default_rng(0))
    pol = sp.NetworkPolicy(actor)
    pol.reset(8)
    grids = np.random.default_rng(1).uniform(size=(8, 15, 15))
    a = pol.act(grids, np.zeros((8, 2)))
    assert np.all(np.abs(a) < 0.1)
    assert np.all(a >= sp.ACTION_LOW) and np.all(a <= sp.ACTION_HIGH)


def test_batched_rollout_matches_single():
    items = _inits(3, seed=2)
    actor = sp.init_actor(np.random.default_rng(4))
    angle = fixed_direction((1, 2))
    batch = sp.rollout(actor, angle, [f for f, _ in items], [i for _, i in items], 12)
    for (f, init), ep in zip(items, batch):
        single = sp.run_episode(actor, angle, f, init, 12)
        assert np.allclose(single.values, ep.values, rtol=1e-12, atol=1e-12)


def test_rollout_is_deterministic():
    items = _inits(4, seed=5)
    actor = sp.init_actor(np.random.default_rng(6))
    runs = []
    for _ in range(2):
        noise = sp.OUNoise((4, 2), np.random.default_rng(9))
        runs.append(sp.rollout(actor, fixed_direction(), [f for f, _ in items], [i for _, i in items], 10,
                               noise=noise))
    for a, b in zip(*runs):
        assert np.array_equal(a.thetas, b.thetas) and np.array_equal(a.actions, b.actions)


def test_trace_csv(tmp_path):
    f, init = _inits(1)[0]
    ep = sp.run_episode(sp.ConstantPolicy(), fixed_direction(), f, init, 5)
    path = tmp_path / "trace.csv"
    sp.write_trace_csv(path, ep)
    lines = path.read_text().splitlines()
    assert lines[0].startswith(",".join(sp.TRACE_HEADER)) and len(lines) == 7


# ---------------------------------------------------------------------------
# actor-critic

@pytest.fixture(scope="module")
def recorded():
    rng = np.random.default_rng(0)
    actor, critic = sp.init_actor(rng), sp.init_critic(rng)
    items = _inits(6, seed=8)
    eps = sp.rollout(actor, fixed_direction(), [f for f, _ in items], [i for _, i in items], 14,
                     noise=sp.OUNoise((6, 2), rng), critic=critic)
    replay = sp.ReplayBuffer(1000, fragment=5)
    for ep in eps:
        replay.add(ep)
    return actor, critic, replay


def test_critic_regression_with_zero_discount(recorded):
    actor, critic, replay = recorded
    batch = replay.sample(8, np.random.default_rng(1))
    state = sp.DDPGState.fresh(actor, critic)
    cfg = sp.DDPGConfig(gamma=0.0, actor_lr=0.0, critic_lr=1e-4, tau=0.0)
    losses = [sp.ddpg_update(state, batch, cfg)["critic_loss"] for _ in range(100)]
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_actor_gradient_vanishes_with_flat_critic(recorded):
    actor, critic, replay = recorded
    p = critic.params.copy()
    p[-(64 + 1):] = 0.0  # final dense layer: Q is constant in every input
    state = sp.DDPGState.fresh(actor, Checkpoint(critic.spec, p))
    before = state.actor.copy()
    sp.ddpg_update(state, replay.sample(4, np.random.default_rng(2)))
    assert np.array_equal(state.actor, before)


def test_soft_update_contracts():
    rng = np.random.default_rng(0)
    live, target = rng.standard_normal(50), rng.standard_normal(50)
    gaps = []
    for _ in range(20):
        target = sp.soft_update(target, live, 0.05)
        gaps.append(np.linalg.norm(target - live))
    assert all(b < a for a, b in zip(gaps, gaps[1:]))


def test_replay_fragments_and_bootstrap(recorded):
    _, _, replay = recorded
    batch = replay.sample(16, np.random.default_rng(3))
    assert batch.obs.shape == (16, 6, 15, 15)
    assert batch.actions.shape == (16, 5, 2)
    assert np.all(batch.bootstrap <= batch.mask)
    assert np.all(np.isfinite(batch.rewards))


def test_replay_rejects_non_finite_or_unrecorded(recorded):
    _, _, replay = recorded
    ep = replay.episodes[0]
    bad = sp.Episode(**{**ep.__dict__, "rewards": ep.rewards.copy()})
    bad.rewards[0] = np.nan
    with pytest.raises(RejectedInput):
        replay.add(bad)
    with pytest.raises(RejectedInput):
        replay.add(sp.Episode(**{**ep.__dict__, "actor_hidden": None}))


def test_replay_capacity_evicts_oldest(recorded):
    _, _, replay = recorded
    small = sp.ReplayBuffer(capacity_fragments=4, fragment=5)
    for ep in replay.episodes:
        small.add(ep)
    assert small._fragments <= 4 or len(small) == 1
    assert small.episodes[-1] is replay.episodes[-1]


def test_policy_training_is_deterministic():
    cfg = sp.PolicyTrainConfig(episodes=8, envs_per_round=4, updates_per_round=2, batch_size=2, fragment=4,
                               warmup_episodes=4, horizon=6, eval_every=1, eval_fields=2, hidden=8)
    angle = fixed_direction((1, 1))
    a = sp.train_policy(angle, cfg)
    b = sp.train_policy(angle, cfg)
    assert np.array_equal(a.actor.params, b.actor.params)
    assert a.evaluations == b.evaluations and len(a.evaluations) == 2
