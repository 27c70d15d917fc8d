"""Distributed distributional DDPG (D4PG) beamforming learner.

One learner owns a categorical critic over fixed value atoms, N-step
targets and a prioritized replay buffer. Several actor workers, each with
its own environment instance, policy replica and noise stream, push
experience through a shared sink.

Two execution modes:

* ``deterministic=True`` (default): workers are stepped in a fixed order
  once per learner step and the sink is drained round-robin, so a seeded
  run is reproducible bit for bit.
* ``deterministic=False``: workers run free in threads and the learner
  drains whatever has arrived.
"""

from __future__ import annotations

import collections
import logging
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .ddpg import BestTracker, DdpgHyper, agent_rng, observe
from .errors import ConfigurationError, ContractError, DimensionError
from .nn import Adam, Mlp, hard_update, softmax

log = logging.getLogger(__name__)


# -- value distributions --------------------------------------------------------

@dataclass(frozen=True)
class DistributionSupport:
    num_atoms: int = 51
    v_min: float = -20.0
    v_max: float = 100.0

    def __post_init__(self):
        if self.num_atoms < 2:
            raise ConfigurationError("need at least two atoms")
        if not self.v_min < self.v_max:
            raise ConfigurationError("v_min must be < v_max")

    @property
    def atoms(self) -> np.ndarray:
        return np.linspace(self.v_min, self.v_max, self.num_atoms)

    @property
    def delta(self) -> float:
        return (self.v_max - self.v_min) / (self.num_atoms - 1)


def expected_value(probs, support: DistributionSupport) -> np.ndarray:
    return np.asarray(probs) @ support.atoms


def categorical_projection(target_probs, shifted_atoms, support: DistributionSupport) -> np.ndarray:
    """Project mass sitting at ``shifted_atoms`` back onto the fixed support.

    Both arguments have shape ``(..., num_atoms)`` (broadcastable). Each
    shifted atom is clamped into ``[v_min, v_max]`` and its mass split
    linearly between the two neighbouring support atoms.
    """
    probs = np.asarray(target_probs, dtype=float)
    tz = np.clip(np.asarray(shifted_atoms, dtype=float), support.v_min, support.v_max)
    probs, tz = np.broadcast_arrays(probs, tz)
    n = support.num_atoms
    b = (tz - support.v_min) / support.delta
    b = np.clip(b, 0.0, n - 1)
    lo = np.floor(b).astype(int)
    hi = np.ceil(b).astype(int)
    m_lo = probs * (hi - b)
    m_hi = probs * (b - lo)
    same = lo == hi
    m_lo = np.where(same, probs, m_lo)   # exact hit: whole mass on one atom

    lead = probs.shape[:-1]
    rows = int(np.prod(lead)) if lead else 1
    out = np.zeros((rows, n))
    offs = (np.arange(rows) * n)[:, None]
    np.add.at(out.reshape(-1), (lo.reshape(rows, n) + offs).ravel(), m_lo.reshape(-1))
    np.add.at(out.reshape(-1), (hi.reshape(rows, n) + offs).ravel(), m_hi.reshape(-1))
    return out.reshape(lead + (n,))


def bce_loss(target, probs, eps: float = 1e-12) -> np.ndarray:
    """Binary cross-entropy between two atom distributions, summed over atoms."""
    p = np.clip(probs, eps, 1.0 - eps)
    return -(target * np.log(p) + (1.0 - target) * np.log1p(-p)).sum(axis=-1)


def bce_logit_grad(target, probs, eps: float = 1e-12) -> np.ndarray:
    """d bce_loss / d logits when ``probs = softmax(logits)``."""
    p = np.clip(probs, eps, 1.0 - eps)
    # p * dL/dp, written without dividing by p
    pg = -target + p * (1.0 - target) / (1.0 - p)
    return pg - probs * pg.sum(axis=-1, keepdims=True)


# -- trajectories and N-step targets ----------------------------------------------

@dataclass
class Trajectory:
    """Up to N consecutive steps ``(s_i, a_i, r_i)`` plus the final state ``s_N``."""

    states: np.ndarray    # (n + 1, s_dim)
    actions: np.ndarray   # (n, a_dim)
    rewards: np.ndarray   # (n,)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.actions = np.asarray(self.actions, dtype=float)
        self.rewards = np.asarray(self.rewards, dtype=float)
        n = self.rewards.shape[0]
        if n < 1 or self.actions.shape[0] != n or self.states.shape[0] != n + 1:
            raise DimensionError("trajectory needs n actions/rewards and n + 1 states")
        if not np.all(np.isfinite(self.rewards)):
            raise ContractError("trajectory rewards must be finite")

    def __len__(self) -> int:
        return self.rewards.shape[0]


@dataclass
class TrajectoryBatch:
    s0: np.ndarray        # (B, s_dim)
    a0: np.ndarray        # (B, a_dim)
    rewards: np.ndarray   # (B, N), zero-padded after ``length``
    length: np.ndarray    # (B,) number of valid rewards
    s_last: np.ndarray    # (B, s_dim)

    @classmethod
    def from_trajectories(cls, trajs, N: int) -> "TrajectoryBatch":
        rewards = np.zeros((len(trajs), N))
        for i, tr in enumerate(trajs):
            if len(tr) > N:
                raise DimensionError(f"trajectory of length {len(tr)} exceeds N={N}")
            rewards[i, :len(tr)] = tr.rewards
        return cls(s0=np.stack([tr.states[0] for tr in trajs]),
                   a0=np.stack([tr.actions[0] for tr in trajs]),
                   rewards=rewards,
                   length=np.array([len(tr) for tr in trajs]),
                   s_last=np.stack([tr.states[-1] for tr in trajs]))


def discounted_prefix(rewards, length, zeta: float) -> tuple[np.ndarray, np.ndarray]:
    """``sum_{n < length} zeta^n r_n`` and the bootstrap factor ``zeta^length``."""
    rewards = np.atleast_2d(np.asarray(rewards, dtype=float))
    length = np.asarray(length)
    powers = zeta ** np.arange(rewards.shape[1])
    mask = np.arange(rewards.shape[1])[None, :] < length[:, None]
    ret = (np.where(mask, rewards, 0.0) * powers).sum(axis=1)
    return ret, zeta ** length.astype(float)


def critic_probs(critic: Mlp, s, a, cache: bool = False) -> np.ndarray:
    logits = critic.forward(np.concatenate([s, a], axis=-1), cache=cache)
    return softmax(logits, axis=-1)


def nstep_target(batch, zeta: float, target_actor: Mlp, target_critic: Mlp,
                 support: DistributionSupport, reward_scale: float = 1.0,
                 bootstrap: bool = True, N: int | None = None) -> np.ndarray:
    """Projected N-step target distributions.

    ``Y = sum_n zeta^n r_n + zeta^n_len Z'(s_N, mu'(s_N))``, projected onto
    the support. ``batch`` is a :class:`TrajectoryBatch` or a single
    :class:`Trajectory`. With ``bootstrap=False`` the tail value is dropped
    and the target is the projection of the discounted reward sum.
    """
    if isinstance(batch, Trajectory):
        if N is not None and len(batch) != N:
            raise DimensionError(f"trajectory length {len(batch)} != N={N}")
        batch = TrajectoryBatch.from_trajectories([batch], len(batch))
    ret, disc = discounted_prefix(batch.rewards, batch.length, zeta)
    ret = reward_scale * ret
    z = support.atoms
    if bootstrap:
        a_next = target_actor.forward(batch.s_last, cache=False)
        probs = critic_probs(target_critic, batch.s_last, a_next)
        shifted = ret[:, None] + disc[:, None] * z[None, :]
    else:
        probs = np.full((ret.size, z.size), 1.0 / z.size)
        shifted = np.repeat(ret[:, None], z.size, axis=1)
    return categorical_projection(probs, shifted, support)


class NStepAccumulator:
    """Sliding window turning a step stream into N-step trajectories."""

    def __init__(self, N: int):
        if N < 1:
            raise ConfigurationError("N must be >= 1")
        self.N = N
        self._steps = collections.deque()

    def push(self, s, a, r, s_next) -> list[Trajectory]:
        self._steps.append((np.asarray(s, dtype=float), np.asarray(a, dtype=float), float(r),
                            np.asarray(s_next, dtype=float)))
        if len(self._steps) < self.N:
            return []
        out = [self._make(list(self._steps))]
        self._steps.popleft()
        return out

    def flush(self) -> list[Trajectory]:
        """Emit the shorter tail trajectories left at an episode boundary."""
        steps = list(self._steps)
        self._steps.clear()
        return [self._make(steps[i:]) for i in range(len(steps))]

    @staticmethod
    def _make(steps) -> Trajectory:
        states = [st[0] for st in steps] + [steps[-1][3]]
        return Trajectory(states=np.stack(states), actions=np.stack([st[1] for st in steps]),
                          rewards=np.array([st[2] for st in steps]))


# -- prioritized replay ------------------------------------------------------------

class PrioritizedBuffer:
    """Proportional prioritized replay of trajectories (FIFO eviction)."""

    def __init__(self, capacity: int, s_dim: int, a_dim: int, N: int, eps: float = 1e-3):
        if capacity < 1:
            raise ConfigurationError("replay capacity must be >= 1")
        if eps <= 0:
            raise ConfigurationError("priority floor must be > 0")
        self.capacity = int(capacity)
        self.N = int(N)
        self.eps = float(eps)
        self._dims = (s_dim, a_dim)
        self._alloc(0)
        self._next = 0
        self.size = 0

    def _alloc(self, n):
        s_dim, a_dim = self._dims
        new = {"s0": np.empty((n, s_dim)), "a0": np.empty((n, a_dim)),
               "rewards": np.zeros((n, self.N)), "length": np.zeros(n, dtype=int),
               "s_last": np.empty((n, s_dim)), "priority": np.zeros(n)}
        for key, arr in new.items():
            old = getattr(self, "_" + key, None)
            if old is not None:
                arr[:old.shape[0]] = old
            setattr(self, "_" + key, arr)

    def __len__(self) -> int:
        return self.size

    @property
    def priorities(self) -> np.ndarray:
        return self._priority[:self.size].copy()

    @property
    def max_priority(self) -> float:
        return float(self._priority[:self.size].max()) if self.size else 1.0

    def add(self, traj: Trajectory, priority: float | None = None) -> int:
        """Store ``traj``; new items enter at the current maximum priority."""
        if len(traj) > self.N:
            raise DimensionError(f"trajectory of length {len(traj)} exceeds N={self.N}")
        p = self.max_priority if priority is None else float(priority)
        if self._next >= self._priority.shape[0]:
            self._alloc(min(self.capacity, max(1024, 2 * self._priority.shape[0])))
        i = self._next
        n = len(traj)
        self._s0[i] = traj.states[0]
        self._a0[i] = traj.actions[0]
        self._rewards[i] = 0.0
        self._rewards[i, :n] = traj.rewards
        self._length[i] = n
        self._s_last[i] = traj.states[-1]
        self._priority[i] = max(p, self.eps)
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return i

    def set_priorities(self, indices, values) -> None:
        self._priority[np.asarray(indices)] = np.maximum(np.asarray(values, dtype=float), self.eps)

    def batch(self, indices) -> TrajectoryBatch:
        idx = np.asarray(indices)
        return TrajectoryBatch(s0=self._s0[idx], a0=self._a0[idx], rewards=self._rewards[idx],
                               length=self._length[idx], s_last=self._s_last[idx])


def per_sample(buffer: PrioritizedBuffer, P: int, rng: np.random.Generator):
    """Draw ``P`` indices with probability proportional to priority.

    Returns ``(indices, batch, weights)`` with importance weights
    ``(R p_i)^-1``, where ``R`` is the number of stored items and ``p_i``
    the sampling probability.
    """
    R = len(buffer)
    if R < P or P < 1:
        raise ContractError(f"cannot draw {P} samples from a buffer holding {R}")
    pri = buffer._priority[:R]
    cum = np.cumsum(pri)
    total = cum[-1]
    idx = np.searchsorted(cum, rng.random(P) * total, side="right")
    idx = np.minimum(idx, R - 1)
    prob = pri[idx] / total
    return idx, buffer.batch(idx), 1.0 / (R * prob)


# -- actors, sink and weight replication ------------------------------------------

class SinkClosed(Exception):
    """Raised to a worker pushing into a closed experience sink."""


@dataclass
class StepRecord:
    worker: int
    step: int
    reward: float
    sum_rate: float
    feasible: bool
    action: np.ndarray | None = None
    trajectories: list = field(default_factory=list)


class ExperienceSink:
    """Per-worker FIFO queues drained round-robin by the learner.

    Draining one item per worker in turn keeps a fast worker from
    dominating the replay buffer.
    """

    def __init__(self, num_workers: int):
        self._queues = [collections.deque() for _ in range(num_workers)]
        self._lock = threading.Lock()
        self._closed = False
        self.received = 0

    @property
    def closed(self) -> bool:
        return self._closed

    def put(self, worker: int, record: StepRecord) -> None:
        with self._lock:
            if self._closed:
                raise SinkClosed()
            self._queues[worker].append(record)
            self.received += 1

    def close(self) -> None:
        with self._lock:
            self._closed = True

    def drain(self, limit: int | None = None) -> list[StepRecord]:
        out = []
        with self._lock:
            while limit is None or len(out) < limit:
                moved = False
                for q in self._queues:
                    if q and (limit is None or len(out) < limit):
                        out.append(q.popleft())
                        moved = True
                if not moved:
                    break
        return out


class WeightBoard:
    """Latest published actor weights as an immutable, versioned snapshot."""

    def __init__(self, flat: np.ndarray):
        self._lock = threading.Lock()
        self.version = 0
        self._flat = None
        self.publish(flat)

    def publish(self, flat: np.ndarray) -> int:
        snap = np.array(flat, copy=True)
        snap.flags.writeable = False
        with self._lock:
            self._flat = snap
            self.version += 1
            return self.version

    def latest(self) -> tuple[int, np.ndarray]:
        with self._lock:
            return self.version, self._flat


class ActorWorker:
    """One explore/act/observe loop: own env, policy replica and noise stream."""

    def __init__(self, index: int, actor: Mlp, env, hyper: "D4pgHyper", board: WeightBoard | None = None):
        self.index = index
        self.actor = actor.copy()
        self.env = env
        self.hyper = hyper
        self.board = board
        self.version = board.version if board is not None else 0
        self.rng = agent_rng(hyper.seed, index, 4)
        self.nstep = NStepAccumulator(hyper.n_step)
        self.t = 0
        self._episode_t = 0
        self.s = None

    def refresh(self) -> bool:
        if self.board is None:
            return False
        version, flat = self.board.latest()
        if version == self.version:
            return False
        self.actor.flat[...] = flat
        self.version = version
        return True

    def step(self) -> StepRecord:
        hp = self.hyper
        self.refresh()
        if self.s is None:
            self.s = observe(self.env.reset())
            self._episode_t = 0
        a = self.actor.forward(self.s, cache=False)
        sigma = hp.sigma_at(self.t)
        if sigma > 0:
            a = a + self.rng.normal(0.0, sigma, size=a.shape)
        a = np.clip(a, 0.0, 1.0)
        gamma, r, info = self.env.step(a.reshape(self.env.M, self.env.K))
        s2 = observe(gamma)
        trajs = self.nstep.push(self.s, a, r, s2)
        self.t += 1
        self._episode_t += 1
        self.s = s2
        if self._episode_t >= hp.steps_per_episode:
            trajs += self.nstep.flush()
            self.s = None
        return StepRecord(worker=self.index, step=self.t, reward=float(r),
                          sum_rate=float(info["sum_rate"]), feasible=bool(info["feasible"]),
                          action=a, trajectories=trajs)


def actor_worker(worker: ActorWorker, sink: ExperienceSink, stop: threading.Event,
                 max_steps: int | None = None) -> int:
    """Step ``worker`` into ``sink`` until ``stop`` is set or the sink closes.

    Returns the number of experiences emitted.
    """
    emitted = 0
    while not stop.is_set() and (max_steps is None or emitted < max_steps):
        record = worker.step()
        try:
            sink.put(worker.index, record)
        except SinkClosed:
            break
        emitted += 1
    return emitted


# -- learner -----------------------------------------------------------------------

@dataclass
class D4pgHyper(DdpgHyper):
    n_step: int = 5
    num_atoms: int = 51
    v_min: float = -20.0
    v_max: float = 100.0
    t_target: int = 100
    t_actors: int = 100
    num_actors: int | None = None       # None: one actor per eAP
    eps_priority: float = 1e-3
    deterministic: bool = True

    def __post_init__(self):
        super().__post_init__()
        if self.n_step < 1:
            raise ConfigurationError("n_step must be >= 1")
        if self.t_target < 1 or self.t_actors < 1:
            raise ConfigurationError("t_target and t_actors must be >= 1")
        DistributionSupport(self.num_atoms, self.v_min, self.v_max)

    @property
    def support(self) -> DistributionSupport:
        return DistributionSupport(self.num_atoms, self.v_min, self.v_max)


def distributional_critic_update(critic: Mlp, critic_opt: Adam, target: np.ndarray,
                                 batch: TrajectoryBatch, weights: np.ndarray):
    """Importance-weighted BCE step; returns per-sample losses."""
    logits = critic.forward(np.concatenate([batch.s0, batch.a0], axis=-1))
    probs = softmax(logits, axis=-1)
    losses = bce_loss(target, probs)
    P = len(weights)
    dz = bce_logit_grad(target, probs) * (weights / P)[:, None]
    grads, _ = critic.backward(dz, need_input=False)
    critic_opt.step(grads)
    return losses


def distributional_action_gradient(critic: Mlp, s, a, support: DistributionSupport):
    """``E[Z(s, a)]`` and its action gradient ``sum_i z_i d p_i / d a``."""
    probs = critic_probs(critic, s, a, cache=True)
    z = support.atoms
    q = probs @ z
    dz = probs * (z[None, :] - q[:, None])   # softmax backward of <z, p>
    _, dx = critic.backward(dz, param_grads=False)
    return q, dx[:, s.shape[-1]:]


def distributional_actor_update(actor: Mlp, actor_opt: Adam, critic: Mlp, s,
                                support: DistributionSupport) -> float:
    a = actor.forward(s)
    q, dq_da = distributional_action_gradient(critic, s, a, support)
    grads, _ = actor.backward(-dq_da / len(s), need_input=False)
    actor_opt.step(grads)
    return float(q.mean())


class D4pgLearner:
    def __init__(self, s_dim: int, a_dim: int, hyper: D4pgHyper, action_shape=None):
        self.hyper = hyper
        self.support = hyper.support
        h = list(hyper.hidden)
        self.actor = Mlp([s_dim] + h + [a_dim], hyper.output, rng=agent_rng(hyper.seed, 0, 0),
                         action_shape=action_shape)
        self.critic = Mlp([s_dim + a_dim] + h + [hyper.num_atoms], "linear",
                          rng=agent_rng(hyper.seed, 0, 1))
        self.target_actor = self.actor.copy()
        self.target_critic = self.critic.copy()
        self.actor_opt = Adam(self.actor, lr=hyper.lr_actor)
        self.critic_opt = Adam(self.critic, lr=hyper.lr_critic)
        self.buffer = PrioritizedBuffer(hyper.buffer_size, s_dim, a_dim, hyper.n_step,
                                        eps=hyper.eps_priority)
        self.rng = agent_rng(hyper.seed, 0, 3)
        self.board = WeightBoard(self.actor.flat)
        self.t = 0

    def ready(self) -> bool:
        return len(self.buffer) >= self.hyper.batch

    def learn(self) -> tuple[float, float, float]:
        """One learner step; returns (weighted loss, mean loss, actor objective)."""
        hp = self.hyper
        idx, batch, weights = per_sample(self.buffer, hp.batch, self.rng)
        target = nstep_target(batch, hp.zeta, self.target_actor, self.target_critic,
                              self.support, reward_scale=hp.reward_scale)
        losses = distributional_critic_update(self.critic, self.critic_opt, target, batch, weights)
        self.buffer.set_priorities(idx, np.abs(losses) + hp.eps_priority)
        objective = distributional_actor_update(self.actor, self.actor_opt, self.critic,
                                                batch.s0, self.support)
        self.t += 1
        if self.t % hp.t_target == 0:
            hard_update(self.target_actor, self.actor)
            hard_update(self.target_critic, self.critic)
        if self.t % hp.t_actors == 0:
            self.board.publish(self.actor.flat)
        return float(np.mean(weights * losses)), float(np.mean(losses)), objective


@dataclass
class D4pgResult:
    actor: Mlp
    rewards: list = field(default_factory=list)       # mean actor reward per learner step
    sum_rates: list = field(default_factory=list)
    feasible: list = field(default_factory=list)
    actor_steps: list = field(default_factory=list)   # cumulative environment steps
    losses: list = field(default_factory=list)
    dist_losses: list = field(default_factory=list)
    objectives: list = field(default_factory=list)
    best_reward: list = field(default_factory=list)
    best_action: np.ndarray | None = None

    def curve_rows(self):
        for i, r in enumerate(self.rewards):
            yield {"step": i + 1, "actor_steps": self.actor_steps[i], "reward": r,
                   "loss_critic": self.losses[i], "dist_loss": self.dist_losses[i],
                   "actor_objective": self.objectives[i]}


def _absorb(buffer: PrioritizedBuffer, records, best) -> tuple[list, list, list]:
    rewards, rates, feas = [], [], []
    for rec in records:
        for tr in rec.trajectories:
            buffer.add(tr)
        rewards.append(rec.reward)
        rates.append(rec.sum_rate)
        feas.append(rec.feasible)
        best.update(rec.reward, rec.action)
    return rewards, rates, feas


def d4pg_train(env_factory, hyper: D4pgHyper, num_actors: int | None = None,
               callback=None) -> D4pgResult:
    """Train for ``hyper.episodes * hyper.steps_per_episode`` learner steps.

    ``env_factory(i)`` builds worker ``i``'s private environment.
    """
    envs = [env_factory(0)]
    M, K = envs[0].M, envs[0].K
    n_act = num_actors or hyper.num_actors or M
    if n_act < 1:
        raise ConfigurationError("num_actors must be >= 1")
    envs += [env_factory(i) for i in range(1, n_act)]
    shape = (M, K) if hyper.output == "softmax-columns" else None
    learner = D4pgLearner(K, M * K, hyper, action_shape=shape)
    workers = [ActorWorker(i, learner.actor, envs[i], hyper, learner.board) for i in range(n_act)]
    sink = ExperienceSink(n_act)
    result = D4pgResult(actor=learner.actor)
    best = BestTracker()
    T = hyper.total_steps

    threads, stop = [], threading.Event()
    if not hyper.deterministic:
        for w in workers:
            th = threading.Thread(target=actor_worker, args=(w, sink, stop), daemon=True)
            th.start()
            threads.append(th)
    total_actor_steps = 0
    try:
        while learner.t < T:
            if hyper.deterministic:
                for w in workers:
                    sink.put(w.index, w.step())
                records = sink.drain()
            else:
                records = sink.drain()
                if not records and not learner.ready():
                    time.sleep(1e-4)
                    continue
            rewards, rates, feas = _absorb(learner.buffer, records, best)
            total_actor_steps += len(records)
            if not learner.ready():
                continue
            loss, dist_loss, obj = learner.learn()
            result.rewards.append(float(np.mean(rewards)) if rewards else float("nan"))
            result.sum_rates.append(float(np.mean(rates)) if rates else float("nan"))
            result.feasible.append(float(np.mean(feas)) if feas else float("nan"))
            result.actor_steps.append(total_actor_steps)
            result.losses.append(loss)
            result.dist_losses.append(dist_loss)
            result.objectives.append(obj)
            result.best_reward.append(best.reward)
            if callback is not None:
                callback(learner.t, result.rewards[-1], {"actor_steps": total_actor_steps})
    finally:
        stop.set()
        sink.close()
        for th in threads:
            th.join()
    if best.action is not None:
        result.best_action = best.action.reshape(M, K)
    return result
