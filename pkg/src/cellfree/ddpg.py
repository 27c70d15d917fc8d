"""Centralized DDPG beamforming learner.

The actor maps the observed SINR vector to the full beamforming matrix; the
critic scores (state, action) pairs. Targets track the live networks by
Polyak averaging after every learning step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigurationError, ContractError
from .nn import Adam, Mlp, polyak_update

log = logging.getLogger(__name__)


def observe(gamma) -> np.ndarray:
    """Network input for an SINR vector: per-UE rates log2(1 + gamma)."""
    return np.log2(1.0 + np.asarray(gamma, dtype=float))


@dataclass(frozen=True)
class Experience:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions with uniform sampling."""

    def __init__(self, capacity: int, s_dim: int, a_dim: int, rng=None):
        if capacity < 1:
            raise ConfigurationError("replay capacity must be >= 1")
        self.capacity = int(capacity)
        self.rng = np.random.default_rng(rng)
        # grown lazily so a 10^6 capacity costs nothing up front
        self._s = np.empty((0, s_dim))
        self._a = np.empty((0, a_dim))
        self._r = np.empty(0)
        self._s2 = np.empty((0, s_dim))
        self._next = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def _grow(self):
        n = min(self.capacity, max(1024, 2 * self._r.size))
        for name in ("_s", "_a", "_r", "_s2"):
            old = getattr(self, name)
            new = np.empty((n,) + old.shape[1:])
            new[: old.shape[0]] = old
            setattr(self, name, new)

    def push(self, s, a, r, s_next) -> None:
        if self._next >= self._r.size:
            self._grow()
        i = self._next
        self._s[i], self._a[i], self._r[i], self._s2[i] = s, a, r, s_next
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def add(self, exp: Experience) -> None:
        self.push(exp.s, exp.a, exp.r, exp.s_next)

    def experiences(self) -> list[Experience]:
        """Stored transitions, oldest first."""
        start = self._next if self.size == self.capacity else 0
        idx = (start + np.arange(self.size)) % self.capacity
        return [Experience(self._s[i].copy(), self._a[i].copy(), float(self._r[i]),
                           self._s2[i].copy()) for i in idx]

    def sample(self, n: int) -> tuple[np.ndarray, ...]:
        if self.size == 0:
            raise ContractError("cannot sample from an empty replay buffer")
        idx = self.rng.integers(0, self.size, size=n)
        return self._s[idx], self._a[idx], self._r[idx], self._s2[idx]


@dataclass
class DdpgHyper:
    zeta: float = 0.99
    lr_actor: float = 1e-3
    lr_critic: float = 1e-3
    tau: float = 0.005
    batch: int = 64
    noise_sigma: float = 0.1
    noise_sigma_final: float = 0.01
    episodes: int = 10
    steps_per_episode: int = 1000
    buffer_size: int = 1_000_000
    hidden: tuple = (256, 128)
    output: str = "softmax-columns"
    reward_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.zeta < 1.0:
            raise ConfigurationError("discount zeta must lie in [0, 1)")
        if self.batch < 1:
            raise ConfigurationError("batch size must be >= 1")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigurationError("tau must lie in [0, 1]")

    @property
    def total_steps(self) -> int:
        return self.episodes * self.steps_per_episode

    def sigma_at(self, t: int) -> float:
        """Exploration std, decayed linearly from ``noise_sigma`` to ``noise_sigma_final``."""
        T = self.total_steps
        if T <= 1:
            return self.noise_sigma
        frac = min(max(t / (T - 1), 0.0), 1.0)
        return self.noise_sigma + (self.noise_sigma_final - self.noise_sigma) * frac

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


def explore_action(actor: Mlp, s, noise_sigma: float, rng: np.random.Generator) -> np.ndarray:
    """mu(s) plus Gaussian noise, clamped to [0, 1]."""
    a = actor.forward(s, cache=False)
    if noise_sigma > 0:
        a = a + rng.normal(0.0, noise_sigma, size=a.shape)
    return np.clip(a, 0.0, 1.0)


def _loss_value(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


def critic_update(critic: Mlp, critic_opt: Adam, target_actor: Mlp, target_critic: Mlp,
                  batch, zeta: float):
    """One Adam step on the mean squared Bellman error; returns the loss."""
    s, a, r, s2 = batch
    n = np.shape(r)[-1]
    if n == 0:
        raise ContractError("empty batch")
    a2 = target_actor.forward(s2, cache=False)
    q_next = target_critic.forward(np.concatenate([s2, a2], axis=-1), cache=False)[..., 0]
    y = r + zeta * q_next
    q = critic.forward(np.concatenate([s, a], axis=-1))[..., 0]
    err = q - y
    grads, _ = critic.backward((2.0 / n) * err[..., None], need_input=False)
    critic_opt.step(grads)
    return _loss_value(np.mean(err ** 2, axis=-1))


def action_gradient(critic: Mlp, s: np.ndarray, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Q(s, a) and dQ/da for each row of the batch."""
    q = critic.forward(np.concatenate([s, a], axis=-1))
    _, dx = critic.backward(np.ones_like(q), param_grads=False)
    return q[..., 0], dx[..., s.shape[-1]:]


def actor_update(actor: Mlp, actor_opt: Adam, critic: Mlp, batch):
    """Deterministic policy-gradient ascent step; returns mean Q(s, mu(s))."""
    s = batch[0]
    n = s.shape[-2] if s.ndim > 1 else 0
    if n == 0:
        raise ContractError("empty batch")
    a = actor.forward(s)
    q, dq_da = action_gradient(critic, s, a)
    grads, _ = actor.backward(-dq_da / n, need_input=False)
    actor_opt.step(grads)
    return _loss_value(q.mean(axis=-1))


def agent_rng(seed: int, agent: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(agent), int(stream)])


class DdpgAgent:
    """Actor, critic, their targets, optimizers, replay and exploration noise."""

    def __init__(self, s_dim: int, a_dim: int, hyper: DdpgHyper, agent_index: int = 0,
                 action_shape=None):
        self.hyper = hyper
        h = list(hyper.hidden)
        self.actor = Mlp([s_dim] + h + [a_dim], hyper.output,
                         rng=agent_rng(hyper.seed, agent_index, 0), action_shape=action_shape)
        self.critic = Mlp([s_dim + a_dim] + h + [1], "linear",
                          rng=agent_rng(hyper.seed, agent_index, 1))
        self.target_actor = self.actor.copy()
        self.target_critic = self.critic.copy()
        self.actor_opt = Adam(self.actor, lr=hyper.lr_actor)
        self.critic_opt = Adam(self.critic, lr=hyper.lr_critic)
        self.noise_rng = agent_rng(hyper.seed, agent_index, 2)
        self.buffer = ReplayBuffer(hyper.buffer_size, s_dim, a_dim,
                                   rng=agent_rng(hyper.seed, agent_index, 3))
        self.t = 0

    def act(self, s, sigma: float | None = None) -> np.ndarray:
        if sigma is None:
            sigma = self.hyper.sigma_at(self.t)
        return explore_action(self.actor, s, sigma, self.noise_rng)

    def observe(self, s, a, r, s_next) -> tuple[float, float]:
        """Store a transition and, once warmed up, run one learning step."""
        self.buffer.push(s, a, r * self.hyper.reward_scale, s_next)
        self.t += 1
        if len(self.buffer) < self.hyper.batch:
            return float("nan"), float("nan")
        return self.learn()

    def learn(self) -> tuple[float, float]:
        hp = self.hyper
        batch = self.buffer.sample(hp.batch)
        loss = critic_update(self.critic, self.critic_opt, self.target_actor,
                             self.target_critic, batch, hp.zeta)
        objective = actor_update(self.actor, self.actor_opt, self.critic, batch)
        polyak_update(self.target_critic, self.critic, hp.tau)
        polyak_update(self.target_actor, self.actor, hp.tau)
        return loss, objective


@dataclass
class TrainResult:
    actor: Mlp
    rewards: list = field(default_factory=list)
    sum_rates: list = field(default_factory=list)
    feasible: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    objectives: list = field(default_factory=list)
    best_reward: list = field(default_factory=list)
    best_action: np.ndarray | None = None

    def curve_rows(self):
        for i, r in enumerate(self.rewards):
            yield {"step": i + 1, "reward": r, "loss_critic": self.losses[i],
                   "actor_objective": self.objectives[i]}


class BestTracker:
    """Best-so-far reward and the action that produced it."""

    def __init__(self):
        self.reward = -np.inf
        self.action = None

    def update(self, reward: float, action) -> float:
        if reward > self.reward:
            self.reward = reward
            self.action = np.array(action, copy=True)
        return self.reward


def ddpg_train(env, hyper: DdpgHyper, callback=None) -> TrainResult:
    """Run ``hyper.episodes`` x ``hyper.steps_per_episode`` explore/store/learn steps."""
    M, K = env.M, env.K
    agent = DdpgAgent(K, M * K, hyper, agent_index=0,
                      action_shape=(M, K) if hyper.output == "softmax-columns" else None)
    result = TrainResult(actor=agent.actor)
    best = BestTracker()
    for episode in range(hyper.episodes):
        s = observe(env.reset())
        for _ in range(hyper.steps_per_episode):
            a = agent.act(s)
            gamma, r, info = env.step(a.reshape(M, K))
            s2 = observe(gamma)
            loss, obj = agent.observe(s, a, r, s2)
            result.rewards.append(r)
            result.sum_rates.append(info["sum_rate"])
            result.feasible.append(info["feasible"])
            result.losses.append(loss)
            result.objectives.append(obj)
            result.best_reward.append(best.update(r, a))
            if callback is not None:
                callback(agent.t, r, info)
            s = s2
        log.debug("ddpg episode %d mean reward %.3f", episode,
                  np.mean(result.rewards[-hyper.steps_per_episode:]))
    result.best_action = None if best.action is None else best.action.reshape(M, K)
    return result
