"""Step-size and resolution controller.

The environment moves the iterate along the predicted direction with the
current step size, then rescales step size and grid resolution by the
controller's action.  The controller only sees the normalized grid (and its
own previous action); the critic additionally sees summary state features.
Both are recurrent and trained with deterministic policy gradients on
fragments of stored episodes.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .anglenet import predict_directions, random_start, log_uniform
from .errors import RejectedInput
from .fields import ScalarField
from .gridsense import DEFAULT_N, grid_points, normalize_grid
from .neuralcore import AdamState, Checkpoint, adam_update, network, recurrent_spec
from .protogen import MODALITIES, sample_proto

log = logging.getLogger(__name__)

REWARD_MODES = ("raw", "norm", "window", "sparse")
WINDOW_K = 5
HORIZON = 30
ACTION_LOW, ACTION_HIGH = -0.5, 1.0
TERMINAL_PENALTY = -2.0
DENOM_EPS = 1e-12
TRAIN_ALPHA = (1e-2, 1.0)
TRAIN_DELTA = (0.05, 0.5)
N_FEATURES = 6


# ---------------------------------------------------------------------------
# rewards

def shaped_reward(f_t, f_star, f_0, window_mean, mode: str = "window", final: bool = True):
    """Reward for reaching value ``f_t``; returns ``(reward, flagged)``.

    ``raw`` is ``-f_t``; ``norm`` divides the gap to the optimum by the initial
    gap; ``window`` divides it by the gap of the recent mean ``window_mean``;
    ``sparse`` pays ``-f_t`` on the final step only.  A vanishing denominator
    yields ``-1`` and sets the flag.
    """
    if mode == "raw":
        return -float(f_t), False
    if mode == "sparse":
        return (-float(f_t) if final else 0.0), False
    if mode == "norm":
        denom = f_0 - f_star
    elif mode == "window":
        denom = window_mean - f_star
    else:
        raise RejectedInput(f"unknown reward mode {mode!r}; choose from {REWARD_MODES}")
    if abs(denom) < DENOM_EPS:
        return -1.0, True
    return -float((f_t - f_star) / denom), False


# ---------------------------------------------------------------------------
# state, action, episode

@dataclass(frozen=True)
class NavAction:
    d_alpha: float
    d_delta: float

    @classmethod
    def clamped(cls, d_alpha, d_delta) -> "NavAction":
        return cls(float(np.clip(d_alpha, ACTION_LOW, ACTION_HIGH)), float(np.clip(d_delta, ACTION_LOW, ACTION_HIGH)))

    def as_array(self):
        return np.array([self.d_alpha, self.d_delta])


def clip_actions(a):
    return np.clip(a, ACTION_LOW, ACTION_HIGH)


@dataclass
class NavState:
    theta: np.ndarray
    alpha: float
    delta: float
    hidden: Optional[tuple] = None
    t: int = 0
    values: list = field(default_factory=list)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if not (self.alpha > 0 and self.delta > 0):
            raise RejectedInput("step size and resolution must be positive")


@dataclass
class RewardContext:
    """What the shaped reward needs beyond the current value."""

    f_star: Optional[float]
    f_0: float
    mode: str = "window"
    horizon: int = HORIZON
    k: int = WINDOW_K

    def reward(self, values, t_next):
        """Reward for the newest entry of ``values`` (the full value history)."""
        f_t = values[-1]
        if self.f_star is None and self.mode in ("norm", "window"):
            return -float(f_t), True
        window = float(np.mean(values[-self.k:]))
        return shaped_reward(f_t, self.f_star, self.f_0, window, self.mode, final=t_next >= self.horizon)


@dataclass
class Episode:
    """One trajectory.  Arrays index time; ``observations`` has one more row than ``actions``."""

    field: ScalarField
    horizon: int
    gamma: float
    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    thetas: np.ndarray
    alphas: np.ndarray
    deltas: np.ndarray
    values: np.ndarray
    flags: np.ndarray
    features: np.ndarray
    terminated: bool = False
    actor_hidden: Optional[np.ndarray] = None
    critic_hidden: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.actions)

    @property
    def total_return(self) -> float:
        return float(np.sum(self.rewards * self.gamma ** np.arange(len(self.rewards))))

    def records(self):
        """Per-step dicts (step, f, alpha, delta, reward, theta) for trace files."""
        out = []
        for t in range(len(self.values)):
            out.append({"step": t, "f": float(self.values[t]), "alpha": float(self.alphas[t]),
                        "delta": float(self.deltas[t]),
                        "reward": float(self.rewards[t - 1]) if t > 0 else 0.0,
                        "theta": self.thetas[t].copy()})
        return out


# ---------------------------------------------------------------------------
# policies and direction oracles

class ConstantPolicy:
    """Always emits the same action; useful as a reference controller."""

    def __init__(self, action=(0.0, 0.0)):
        self.action = clip_actions(np.asarray(action, dtype=float))
        self.hidden = None

    def reset(self, batch):
        self.hidden = None

    def act(self, grids, prev_actions):
        return np.tile(self.action, (len(grids), 1))


class NetworkPolicy:
    """Recurrent actor: grid plus previous action in, box-bounded action out."""

    def __init__(self, ckpt: Checkpoint):
        self.ckpt = ckpt
        self.net = ckpt.net
        self.hidden = None

    def reset(self, batch):
        self.hidden = self.net.zero_state(batch)

    def act(self, grids, prev_actions):
        x = np.asarray(grids, dtype=float)[:, None, None]
        side = np.asarray(prev_actions, dtype=float)[:, None, :]
        out, self.hidden, _, _ = self.net.forward(self.ckpt.params, x, side, self.hidden, buffers=self.ckpt.buffers)
        return out[:, 0, :]


def as_policy(policy):
    if isinstance(policy, Checkpoint):
        return NetworkPolicy(policy)
    if hasattr(policy, "act"):
        return policy
    raise RejectedInput("policy must be a Checkpoint or expose act()")


def as_direction_fn(angle) -> Callable:
    """Map an angle checkpoint (or callable on normalized grids) to ``grids -> unit directions``."""
    if isinstance(angle, Checkpoint):
        return lambda grids: predict_directions(angle, grids)[0]
    if callable(angle):
        return angle
    raise RejectedInput("direction source must be a Checkpoint or a callable")


class OUNoise:
    """Ornstein-Uhlenbeck exploration noise, one independent process per environment."""

    def __init__(self, shape, rng, theta: float = 0.15, sigma: float = 0.2):
        self.theta, self.sigma, self.rng = theta, sigma, rng
        self.state = np.zeros(shape)

    def sample(self):
        self.state = self.state - self.theta * self.state + self.sigma * self.rng.standard_normal(self.state.shape)
        return self.state


# ---------------------------------------------------------------------------
# environment

def observe(f: ScalarField, theta, delta, n: int = DEFAULT_N):
    raw = f.batch(grid_points(theta, delta, n))
    if not np.all(np.isfinite(raw)):
        return None
    return normalize_grid(raw)


def state_features(theta, alpha, delta, t, horizon, values, f_star, f_0, k=WINDOW_K, theta_star=None):
    """Summary of the full state for the critic (never shown to the actor)."""
    f_t = values[-1]
    if f_star is None:
        gap, ratio = 1.0, 1.0
    else:
        d0 = f_0 - f_star
        gap = (f_t - f_star) / d0 if abs(d0) >= DENOM_EPS else 1.0
        dw = float(np.mean(values[-k:])) - f_star
        ratio = (f_t - f_star) / dw if abs(dw) >= DENOM_EPS else 1.0
    dist = 1.0 if theta_star is None else float(np.linalg.norm(np.asarray(theta) - theta_star))
    return np.array([
        math.log(alpha) / 5.0, math.log(delta) / 5.0, t / horizon,
        math.log10(min(max(gap, 1e-12), 1e6)) / 6.0, min(max(ratio, 0.0), 5.0),
        math.log10(dist + 1e-12) / 6.0,
    ])


def env_step(state: NavState, action, f: ScalarField, angle, ctx: RewardContext, n: int = DEFAULT_N):
    """Apply one transition.  Returns ``(next_state, observation, reward, done)``.

    ``observation`` is the normalized grid at the new iterate and resolution,
    or ``None`` when the field is non-finite there (then ``done`` is true and
    the reward is the terminal penalty).
    """
    a = action.as_array() if isinstance(action, NavAction) else np.asarray(action, dtype=float)
    if np.any(a < ACTION_LOW) or np.any(a > ACTION_HIGH):
        raise RejectedInput(f"action {a} outside [{ACTION_LOW}, {ACTION_HIGH}]^2")
    grid = observe(f, state.theta, state.delta, n)
    if grid is None:
        raise RejectedInput("current iterate has a non-finite neighbourhood")
    direction = as_direction_fn(angle)(grid[None])[0]
    theta = state.theta + state.alpha * direction
    alpha = state.alpha * (1.0 + a[0])
    delta = state.delta * (1.0 + a[1])
    values = list(state.values) if state.values else [f.value(state.theta)]
    f_next = f.value(theta)
    obs = observe(f, theta, delta, n) if np.isfinite(f_next) else None
    nxt = NavState(theta, alpha, delta, state.hidden, state.t + 1, values + [f_next])
    if obs is None:
        return nxt, None, TERMINAL_PENALTY, True
    reward, _ = ctx.reward(nxt.values, nxt.t)
    return nxt, obs, reward, nxt.t >= ctx.horizon


def rollout(policy, angle, fields: Sequence[ScalarField], inits, horizon: int = HORIZON, *,
            mode: str = "window", gamma: float = 1.0, noise: Optional[OUNoise] = None,
            critic: Optional[Checkpoint] = None, n: int = DEFAULT_N) -> list:
    """Run ``len(fields)`` episodes side by side; network calls are batched across them.

    ``inits`` is a sequence of ``(theta0, alpha0, delta0)``.  When ``critic``
    is given its recurrent state is advanced along the taken actions and
    recorded, as is the actor's, so stored fragments can resume mid-episode.
    """
    if horizon < 1:
        raise RejectedInput("horizon must be at least 1")
    B = len(fields)
    policy = as_policy(policy)
    direction_fn = as_direction_fn(angle)
    policy.reset(B)
    theta = np.array([np.asarray(i[0], dtype=float) for i in inits])
    alpha = np.array([float(i[1]) for i in inits])
    delta = np.array([float(i[2]) for i in inits])
    if np.any(alpha <= 0) or np.any(delta <= 0):
        raise RejectedInput("initial step size and resolution must be positive")
    values = [[f.value(th)] for f, th in zip(fields, theta)]
    ctxs = [RewardContext(f.min_value, v[0], mode, horizon) for f, v in zip(fields, values)]
    stars = [f.minimizer for f in fields]
    obs = np.zeros((B, horizon + 1, n, n))
    acts = np.zeros((B, horizon, 2))
    rews = np.zeros((B, horizon))
    flags = np.zeros((B, horizon), dtype=bool)
    thetas = np.zeros((B, horizon + 1, 2))
    alphas = np.zeros((B, horizon + 1))
    deltas = np.zeros((B, horizon + 1))
    feats = np.zeros((B, horizon + 1, N_FEATURES))
    length = np.full(B, horizon)
    terminated = np.zeros(B, dtype=bool)
    alive = np.ones(B, dtype=bool)
    for b in range(B):
        g = observe(fields[b], theta[b], delta[b], n)
        if g is None:
            raise RejectedInput(f"episode {b}: non-finite field around the initial iterate")
        obs[b, 0] = g
    thetas[:, 0], alphas[:, 0], deltas[:, 0] = theta, alpha, delta
    for b in range(B):
        feats[b, 0] = state_features(theta[b], alpha[b], delta[b], 0, horizon, values[b], ctxs[b].f_star,
                                     ctxs[b].f_0, theta_star=stars[b])
    record = critic is not None
    if record:
        cnet = critic.net
        chid = cnet.zero_state(B)
        a_hid = np.zeros((B, horizon + 1, 2, policy.net.hidden_size))
        c_hid = np.zeros((B, horizon + 1, 2, cnet.hidden_size))
    prev = np.zeros((B, 2))
    for t in range(horizon):
        if record:
            a_hid[:, t] = np.stack(policy.hidden, axis=1)
            c_hid[:, t] = np.stack(chid, axis=1)
        a = policy.act(obs[:, t], prev)
        if noise is not None:
            a = a + noise.sample()
        a = clip_actions(a)
        if record:
            side = np.concatenate([a, feats[:, t]], axis=1)[:, None, :]
            _, chid, _, _ = cnet.forward(critic.params, obs[:, t, None, None], side, chid, buffers=critic.buffers)
        direction = direction_fn(obs[:, t])
        new_theta = theta + alpha[:, None] * direction
        alpha = alpha * (1.0 + a[:, 0])
        delta = delta * (1.0 + a[:, 1])
        theta = np.where(alive[:, None], new_theta, theta)
        acts[:, t] = a
        for b in np.flatnonzero(alive):
            f_next = fields[b].value(theta[b])
            g = observe(fields[b], theta[b], delta[b], n) if np.isfinite(f_next) else None
            values[b].append(f_next)
            if g is None:
                rews[b, t] = TERMINAL_PENALTY
                length[b] = t + 1
                terminated[b] = True
                alive[b] = False
                continue
            obs[b, t + 1] = g
            rews[b, t], flags[b, t] = ctxs[b].reward(values[b], t + 1)
            feats[b, t + 1] = state_features(theta[b], alpha[b], delta[b], t + 1, horizon, values[b],
                                             ctxs[b].f_star, ctxs[b].f_0, theta_star=stars[b])
        thetas[:, t + 1], alphas[:, t + 1], deltas[:, t + 1] = theta, alpha, delta
        prev = a
        if not alive.any():
            break
    if record:
        a_hid[:, horizon] = np.stack(policy.hidden, axis=1)
        c_hid[:, horizon] = np.stack(chid, axis=1)
    episodes = []
    for b in range(B):
        L = length[b]
        episodes.append(Episode(
            fields[b], horizon, gamma, obs[b, :L + 1], acts[b, :L], rews[b, :L], thetas[b, :L + 1],
            alphas[b, :L + 1], deltas[b, :L + 1], np.array(values[b][:L + 1]), flags[b, :L], feats[b, :L + 1],
            bool(terminated[b]),
            a_hid[b, :L + 1] if record else None, c_hid[b, :L + 1] if record else None))
    return episodes


def run_episode(policy, angle, f: ScalarField, init, horizon: int = HORIZON, noise: Optional[OUNoise] = None,
                mode: str = "window", gamma: float = 1.0, n: int = DEFAULT_N) -> Episode:
    """Single trajectory from ``init = (theta0, alpha0, delta0)`` with a fresh recurrent state."""
    return rollout(policy, angle, [f], [init], horizon, mode=mode, gamma=gamma, noise=noise, n=n)[0]


def probe_policy(policy, angle, f: ScalarField, init, horizon: int = HORIZON, n: int = DEFAULT_N) -> dict:
    """Step-size and resolution schedules along one noiseless trajectory."""
    ep = run_episode(policy, angle, f, init, horizon, n=n)
    return {"alpha": ep.alphas.copy(), "delta": ep.deltas.copy(), "f": ep.values.copy(), "episode": ep}


def recovered(probe: dict, alpha_range=TRAIN_ALPHA, delta_range=TRAIN_DELTA, jointly: bool = False) -> bool:
    """True when step size and resolution each re-enter their training range at some step.

    With ``jointly`` both must be inside their ranges at the same step.
    """
    a, d = probe["alpha"], probe["delta"]
    a_ok = (a >= alpha_range[0]) & (a <= alpha_range[1])
    d_ok = (d >= delta_range[0]) & (d <= delta_range[1])
    if jointly:
        return bool((a_ok & d_ok).any())
    return bool(a_ok.any() and d_ok.any())


def bad_initialization(alpha_range=TRAIN_ALPHA, delta_range=TRAIN_DELTA, factor: float = 100.0):
    """Step size ``factor`` below and resolution ``factor`` above the training ranges."""
    return alpha_range[0] / factor, delta_range[1] * factor


# ---------------------------------------------------------------------------
# actor-critic

def actor_spec(n: int = DEFAULT_N, hidden: int = 64):
    return recurrent_spec(n, side_dim=2, out=2, head="box", hidden=hidden)


def critic_spec(n: int = DEFAULT_N, hidden: int = 64):
    return recurrent_spec(n, side_dim=2 + N_FEATURES, out=1, hidden=hidden)


def init_actor(rng, n: int = DEFAULT_N, hidden: int = 64) -> Checkpoint:
    """Fresh actor whose initial output is close to the no-change action (0, 0)."""
    spec = actor_spec(n, hidden)
    net = network(spec)
    params, buffers = net.init_params(rng)
    # final dense layer: shrink weights, bias so that the box head maps to 0
    last = net._p_slices[[i for i, l in enumerate(spec.layers) if l["type"] == "dense"][-1]]
    (w0, w1, _), (b0, b1, _) = last
    params[w0:w1] *= 0.1
    params[b0:b1] = math.atanh(-1.0 / 3.0)
    return Checkpoint(spec, params, buffers, {"role": "actor"})


def init_critic(rng, n: int = DEFAULT_N, hidden: int = 64) -> Checkpoint:
    spec = critic_spec(n, hidden)
    params, buffers = network(spec).init_params(rng)
    return Checkpoint(spec, params, buffers, {"role": "critic"})


@dataclass
class DDPGState:
    actor: np.ndarray
    critic: np.ndarray
    actor_target: np.ndarray
    critic_target: np.ndarray
    actor_opt: AdamState
    critic_opt: AdamState
    actor_spec: object
    critic_spec: object

    @classmethod
    def fresh(cls, actor: Checkpoint, critic: Checkpoint):
        return cls(actor.params.copy(), critic.params.copy(), actor.params.copy(), critic.params.copy(),
                   AdamState.zeros(actor.params.size), AdamState.zeros(critic.params.size),
                   actor.spec, critic.spec)

    def actor_checkpoint(self, metadata=None) -> Checkpoint:
        return Checkpoint(self.actor_spec, self.actor.copy(), metadata=dict(metadata or {}, role="actor"))

    def critic_checkpoint(self, metadata=None) -> Checkpoint:
        return Checkpoint(self.critic_spec, self.critic.copy(), metadata=dict(metadata or {}, role="critic"))


@dataclass
class FragmentBatch:
    """``B`` fragments of length ``L``; observation-like arrays carry ``L + 1`` steps."""

    obs: np.ndarray          # (B, L+1, n, n)
    prev_actions: np.ndarray  # (B, L+1, 2): action taken before each step
    actions: np.ndarray      # (B, L, 2)
    rewards: np.ndarray      # (B, L)
    bootstrap: np.ndarray    # (B, L): 1 where the next state is not terminal
    mask: np.ndarray         # (B, L): 1 on real (non-padded) steps
    features: np.ndarray     # (B, L+1, F)
    actor_hidden: tuple
    critic_hidden: tuple


class ReplayBuffer:
    """Completed episodes, sampled as fixed-length fragments with stored recurrent state."""

    def __init__(self, capacity_fragments: int = 50_000, fragment: int = 10):
        self.capacity = capacity_fragments
        self.fragment = fragment
        self.episodes: list = []
        self._fragments = 0

    def __len__(self):
        return len(self.episodes)

    def add(self, ep: Episode):
        if not np.all(np.isfinite(ep.rewards)) or ep.actor_hidden is None or len(ep) == 0:
            raise RejectedInput("replay accepts only completed, finite episodes with recorded states")
        self.episodes.append(ep)
        self._fragments += max(1, len(ep) // self.fragment)
        while self._fragments > self.capacity and len(self.episodes) > 1:
            old = self.episodes.pop(0)
            self._fragments -= max(1, len(old) // self.fragment)

    def sample(self, batch: int, rng) -> FragmentBatch:
        L = self.fragment
        picks = rng.integers(0, len(self.episodes), size=batch)
        n = self.episodes[0].observations.shape[-1]
        F = self.episodes[0].features.shape[-1]
        Ha = self.episodes[0].actor_hidden.shape[-1]
        Hc = self.episodes[0].critic_hidden.shape[-1]
        obs = np.zeros((batch, L + 1, n, n))
        prev = np.zeros((batch, L + 1, 2))
        acts = np.zeros((batch, L, 2))
        rews = np.zeros((batch, L))
        boot = np.zeros((batch, L))
        mask = np.zeros((batch, L))
        feats = np.zeros((batch, L + 1, F))
        ah = np.zeros((batch, 2, Ha))
        ch = np.zeros((batch, 2, Hc))
        for k, e in enumerate(picks):
            ep = self.episodes[e]
            T = len(ep)
            s = int(rng.integers(0, max(1, T - L + 1)))
            m = min(L, T - s)
            obs[k, :m + 1] = ep.observations[s:s + m + 1]
            feats[k, :m + 1] = ep.features[s:s + m + 1]
            acts[k, :m] = ep.actions[s:s + m]
            prev[k, 1:m + 1] = ep.actions[s:s + m]
            if s > 0:
                prev[k, 0] = ep.actions[s - 1]
            rews[k, :m] = ep.rewards[s:s + m]
            mask[k, :m] = 1.0
            last = s + np.arange(m) + 1
            boot[k, :m] = last < T
            ah[k] = ep.actor_hidden[s]
            ch[k] = ep.critic_hidden[s]
        return FragmentBatch(obs, prev, acts, rews, boot, mask, feats,
                             (ah[:, 0].copy(), ah[:, 1].copy()), (ch[:, 0].copy(), ch[:, 1].copy()))


@dataclass
class DDPGConfig:
    gamma: float = 1.0
    tau: float = 0.005
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    grad_clip: float = 10.0


def _clip(g, limit):
    norm = float(np.linalg.norm(g))
    return g * (limit / norm) if limit and norm > limit else g


def soft_update(target, live, tau: float):
    return (1.0 - tau) * target + tau * live


def ddpg_update(state: DDPGState, batch: FragmentBatch, config: DDPGConfig = None) -> dict:
    """One critic step on the TD error and one actor step along ``dQ/da``; updates ``state`` in place."""
    config = config or DDPGConfig()
    anet, cnet = network(state.actor_spec), network(state.critic_spec)
    x = batch.obs[:, :, None]
    B, L1 = x.shape[:2]
    L = L1 - 1
    # targets over L+1 steps from the stored recurrent state
    mu_t, _, _, _ = anet.forward(state.actor_target, x, batch.prev_actions, batch.actor_hidden)
    side_t = np.concatenate([mu_t, batch.features], axis=2)
    q_t, _, _, _ = cnet.forward(state.critic_target, x, side_t, batch.critic_hidden)
    y = batch.rewards + config.gamma * batch.bootstrap * q_t[:, 1:, 0]
    count = max(1.0, batch.mask.sum())

    xs = x[:, :L]
    side = np.concatenate([batch.actions, batch.features[:, :L]], axis=2)
    q, _, _, cache = cnet.forward(state.critic, xs, side, batch.critic_hidden)
    td = (q[..., 0] - y) * batch.mask
    critic_loss = float(np.sum(td**2) / count)
    g_critic, _, _ = cnet.backward(state.critic, cache, (2.0 * td / count)[..., None])

    mu, _, _, acache = anet.forward(state.actor, xs, batch.prev_actions[:, :L], batch.actor_hidden)
    side_mu = np.concatenate([mu, batch.features[:, :L]], axis=2)
    q_mu, _, _, ccache = cnet.forward(state.critic, xs, side_mu, batch.critic_hidden)
    weights = (batch.mask / count)[..., None]
    _, dside, _ = cnet.backward(state.critic, ccache, -weights)
    dq_da = dside[..., :2]
    g_actor, _, _ = anet.backward(state.actor, acache, dq_da)
    actor_loss = float(-np.sum(q_mu[..., 0] * batch.mask) / count)

    if not (np.isfinite(critic_loss) and np.isfinite(actor_loss)
            and np.all(np.isfinite(g_critic)) and np.all(np.isfinite(g_actor))):
        log.warning("non-finite DDPG loss; update skipped")
        return {"critic_loss": critic_loss, "actor_loss": actor_loss, "skipped": True}
    state.critic, state.critic_opt = adam_update(state.critic, _clip(g_critic, config.grad_clip),
                                                 state.critic_opt, config.critic_lr)
    state.actor, state.actor_opt = adam_update(state.actor, _clip(g_actor, config.grad_clip),
                                               state.actor_opt, config.actor_lr)
    state.actor_target = soft_update(state.actor_target, state.actor, config.tau)
    state.critic_target = soft_update(state.critic_target, state.critic, config.tau)
    return {"critic_loss": critic_loss, "actor_loss": actor_loss, "skipped": False,
            "q_mean": float(np.sum(q[..., 0] * batch.mask) / count)}


# ---------------------------------------------------------------------------
# training

@dataclass
class PolicyTrainConfig:
    episodes: int = 3000
    envs_per_round: int = 16
    updates_per_round: int = 16
    batch_size: int = 32
    fragment: int = 10
    warmup_episodes: int = 64
    horizon: int = HORIZON
    reward_mode: str = "window"
    gamma: float = 1.0
    tau: float = 0.005
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    ou_theta: float = 0.15
    ou_sigma_start: float = 0.2
    ou_sigma_end: float = 0.02
    replay_capacity: int = 50_000
    alpha_min: float = TRAIN_ALPHA[0]
    alpha_max: float = TRAIN_ALPHA[1]
    delta_min: float = TRAIN_DELTA[0]
    delta_max: float = TRAIN_DELTA[1]
    start_radius_min: float = 2.0
    start_radius_max: float = 4.0
    modalities: tuple = MODALITIES
    hidden: int = 64
    n: int = DEFAULT_N
    seed: int = 0
    eval_every: int = 10
    eval_fields: int = 20


@dataclass
class PolicyTrainResult:
    actor: Checkpoint
    critic: Checkpoint
    evaluations: list = field(default_factory=list)
    losses: list = field(default_factory=list)


def sample_init(f, rng, config: PolicyTrainConfig):
    theta = random_start(f.center if getattr(f, "center", None) is not None else f.minimizer, rng,
                         config.start_radius_min, config.start_radius_max)
    return (theta, log_uniform(rng, config.alpha_min, config.alpha_max),
            log_uniform(rng, config.delta_min, config.delta_max))


def evaluation_set(count: int, config: PolicyTrainConfig, base_seed: int = 1_000_003):
    """Fixed held-out fields and starts, identical for every evaluation."""
    out = []
    for i in range(count):
        rng = np.random.default_rng([base_seed, i])
        f = sample_proto(config.modalities[i % len(config.modalities)], rng)
        out.append((f, sample_init(f, rng, config)))
    return out


def evaluate_policy(policy, angle, eval_set, config: PolicyTrainConfig) -> float:
    eps = rollout(policy, angle, [f for f, _ in eval_set], [i for _, i in eval_set], config.horizon,
                  mode=config.reward_mode, gamma=config.gamma, n=config.n)
    return float(np.mean([e.total_return for e in eps]))


def train_policy(angle, config: PolicyTrainConfig = None, progress=None) -> PolicyTrainResult:
    """DDPG over freshly sampled landscapes; one field per episode."""
    config = config or PolicyTrainConfig()
    rng = np.random.default_rng(config.seed)
    actor = init_actor(rng, config.n, config.hidden)
    critic = init_critic(rng, config.n, config.hidden)
    state = DDPGState.fresh(actor, critic)
    dcfg = DDPGConfig(config.gamma, config.tau, config.actor_lr, config.critic_lr)
    replay = ReplayBuffer(config.replay_capacity, config.fragment)
    eval_set = evaluation_set(config.eval_fields, config)
    evaluations, losses = [], []
    done = 0
    rounds = 0
    while done < config.episodes:
        B = min(config.envs_per_round, config.episodes - done)
        frac = done / max(1, config.episodes)
        sigma = config.ou_sigma_start + (config.ou_sigma_end - config.ou_sigma_start) * frac
        fields, inits = [], []
        for _ in range(B):
            mod = config.modalities[int(rng.integers(len(config.modalities)))]
            f = sample_proto(mod, rng)
            fields.append(f)
            inits.append(sample_init(f, rng, config))
        noise = OUNoise((B, 2), rng, config.ou_theta, sigma)
        live_actor = Checkpoint(state.actor_spec, state.actor)
        live_critic = Checkpoint(state.critic_spec, state.critic)
        for ep in rollout(live_actor, angle, fields, inits, config.horizon, mode=config.reward_mode,
                          gamma=config.gamma, noise=noise, critic=live_critic, n=config.n):
            if np.all(np.isfinite(ep.rewards)):
                replay.add(ep)
        done += B
        rounds += 1
        if done >= config.warmup_episodes:
            for _ in range(config.updates_per_round):
                stats = ddpg_update(state, replay.sample(config.batch_size, rng), dcfg)
                losses.append((stats["critic_loss"], stats["actor_loss"]))
        if config.eval_every and (rounds % config.eval_every == 0 or done >= config.episodes):
            score = evaluate_policy(Checkpoint(state.actor_spec, state.actor), angle, eval_set, config)
            evaluations.append((done, score))
            if progress:
                progress(done, score, losses[-1] if losses else None)
    meta = {"seed": config.seed, "episodes": done, "reward_mode": config.reward_mode}
    return PolicyTrainResult(state.actor_checkpoint(meta), state.critic_checkpoint(meta), evaluations, losses)


# ---------------------------------------------------------------------------
# trace files

TRACE_HEADER = ("step", "f", "alpha", "delta", "reward")


def write_trace_csv(path, episode: Episode) -> None:
    recs = episode.records()
    d = len(recs[0]["theta"]) if recs else 0
    with open(path, "w") as fh:
        fh.write(",".join(TRACE_HEADER + tuple(f"theta{i}" for i in range(d))) + "\n")
        for r in recs:
            fh.write(f"{r['step']},{r['f']!r},{r['alpha']!r},{r['delta']!r},{r['reward']!r},"
                     + ",".join(repr(float(v)) for v in r["theta"]) + "\n")
