"""Fully distributed learning: one DDPG agent per eAP plus an ECP coordinator.

Agent ``m`` learns row ``m`` of the beamforming matrix while every other
row stays frozen at the last broadcast. After each local episode the agent
sends its best row to the coordinator, which waits for all ``M`` rows
(barrier), stacks them in agent order and broadcasts the new matrix.

Messages follow ``{"round": r, "agent_id": m, "row": [K floats]}``.
"""

from __future__ import annotations

import json
import logging
import queue
import socket
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .ddpg import BestTracker, DdpgAgent, DdpgHyper, observe
from .errors import ConfigurationError, ContractError, DimensionError, ProtocolError

log = logging.getLogger(__name__)


@dataclass
class AgentView:
    """What eAP ``m`` knows: its own row, the last broadcast and its best action."""

    index: int
    W_local: np.ndarray
    row: np.ndarray = None
    best_action: np.ndarray | None = None
    best_reward: float = -np.inf

    def __post_init__(self):
        self.W_local = np.array(self.W_local, dtype=float)
        if self.row is None:
            self.row = self.W_local[self.index].copy()

    def compose(self, row) -> np.ndarray:
        """Full matrix seen by this agent: ``W_local`` with its own row replaced."""
        W = self.W_local.copy()
        W[self.index] = row
        return W

    def receive(self, W_new: np.ndarray) -> None:
        self.W_local = np.array(W_new, dtype=float)
        self.row = self.W_local[self.index].copy()


def row_message(round_: int, agent_id: int, row) -> dict:
    return {"round": int(round_), "agent_id": int(agent_id),
            "row": [float(x) for x in np.asarray(row, dtype=float)]}


@dataclass
class CoordinatorState:
    """Rows received in the current round and the running broadcast count."""

    M: int
    K: int
    pending: dict = field(default_factory=dict)
    W_new: np.ndarray | None = None
    round: int = 0
    broadcasts: int = 0

    def receive(self, agent_id: int, row) -> None:
        if not 0 <= agent_id < self.M:
            raise ProtocolError(f"unknown agent id {agent_id}")
        if agent_id in self.pending:
            raise ProtocolError(f"duplicate row from agent {agent_id} in round {self.round}")
        row = np.asarray(row, dtype=float)
        if row.shape != (self.K,):
            raise DimensionError(f"row has shape {row.shape}, expected ({self.K},)")
        self.pending[agent_id] = row

    @property
    def complete(self) -> bool:
        return len(self.pending) == self.M

    @property
    def missing(self) -> list[int]:
        return [m for m in range(self.M) if m not in self.pending]


def coordinator_round(state: CoordinatorState, received_rows) -> np.ndarray | None:
    """Absorb ``(agent_id, row)`` pairs; broadcast once every agent has reported.

    Returns the assembled read-only ``W_new`` when the barrier is met and
    ``None`` otherwise (no partial matrix is ever released).
    """
    if isinstance(received_rows, dict):
        received_rows = received_rows.items()
    for msg in received_rows:
        if isinstance(msg, dict):
            if msg.get("round", state.round) != state.round:
                raise ProtocolError(f"message for round {msg['round']} during round {state.round}")
            agent_id, row = msg["agent_id"], msg["row"]
        else:
            agent_id, row = msg
        state.receive(int(agent_id), row)
    if not state.complete:
        return None
    W = np.stack([state.pending[m] for m in range(state.M)])
    W.flags.writeable = False
    state.W_new = W
    state.pending = {}
    state.round += 1
    state.broadcasts += 1
    return W


class Coordinator:
    """Blocking in-process transport around :func:`coordinator_round`."""

    def __init__(self, M: int, K: int):
        self.state = CoordinatorState(M=M, K=K)
        self._inbox: queue.Queue = queue.Queue()

    def send(self, message: dict) -> None:
        self._inbox.put(message)

    def collect(self, timeout: float | None = None) -> np.ndarray:
        """Block until every agent's row for this round has arrived.

        Raises ``TimeoutError`` (and broadcasts nothing) if the barrier is
        not met within ``timeout`` seconds.
        """
        while True:
            try:
                msg = self._inbox.get(timeout=timeout)
            except queue.Empty:
                raise TimeoutError(f"round {self.state.round}: no row from agents "
                                   f"{self.state.missing}") from None
            W = coordinator_round(self.state, [msg])
            if W is not None:
                return W


def serve_socket_round(state: CoordinatorState, host: str = "127.0.0.1", port: int = 0,
                       timeout: float = 10.0, ready=None) -> np.ndarray:
    """One coordinator round over line-delimited JSON on a TCP socket.

    Each agent connects, sends one message line and receives the broadcast
    matrix as a JSON line once all rows are in. ``ready`` (if given) is
    called with the bound port before accepting.
    """
    srv = socket.create_server((host, port))
    srv.settimeout(timeout)
    if ready is not None:
        ready(srv.getsockname()[1])
    conns = []
    try:
        W = None
        while W is None:
            conn, _ = srv.accept()
            conn.settimeout(timeout)
            conns.append(conn)
            line = conn.makefile("r").readline()
            W = coordinator_round(state, [json.loads(line)])
        payload = (json.dumps({"round": state.round, "W": W.tolist()}) + "\n").encode()
        for conn in conns:
            conn.sendall(payload)
        return W
    finally:
        for conn in conns:
            conn.close()
        srv.close()


def socket_send_row(port: int, message: dict, host: str = "127.0.0.1",
                    timeout: float = 10.0) -> np.ndarray:
    with socket.create_connection((host, port), timeout=timeout) as conn:
        conn.sendall((json.dumps(message) + "\n").encode())
        reply = json.loads(conn.makefile("r").readline())
    return np.asarray(reply["W"], dtype=float)


# -- local learning -------------------------------------------------------------

class RowTracker(BestTracker):
    """Best row of an episode: seeded by the first step, then strictly greater."""

    def update(self, reward: float, action) -> float:
        if self.action is None or reward > self.reward:
            self.reward = reward
            self.action = np.array(action, copy=True)
        return self.reward


@dataclass
class EpisodeLog:
    rewards: list = field(default_factory=list)
    sum_rates: list = field(default_factory=list)
    feasible: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    objectives: list = field(default_factory=list)


def local_episode(agent: AgentView, env, learner: DdpgAgent, steps: int) -> EpisodeLog:
    """Run one local DDPG episode on row ``agent.index`` and record its best row."""
    if steps < 1:
        raise ContractError("an episode needs at least one step")
    log_ = EpisodeLog()
    tracker = RowTracker()
    s = observe(env.reset())
    for _ in range(steps):
        a = learner.act(s)
        gamma, r, info = env.step(agent.compose(a))
        s2 = observe(gamma)
        loss, obj = learner.observe(s, a, r, s2)
        log_.rewards.append(r)
        log_.sum_rates.append(info["sum_rate"])
        log_.feasible.append(info["feasible"])
        log_.losses.append(loss)
        log_.objectives.append(obj)
        tracker.update(r, a)
        s = s2
    agent.best_action = tracker.action
    agent.best_reward = tracker.reward
    return log_


@dataclass
class DistResult:
    W: np.ndarray
    round_rewards: list = field(default_factory=list)     # reward of each broadcast W_new
    round_sum_rates: list = field(default_factory=list)
    agent_best: list = field(default_factory=list)        # per round: list of M best local rewards
    rewards: list = field(default_factory=list)           # per step, mean over agents
    sum_rates: list = field(default_factory=list)
    feasible: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    objectives: list = field(default_factory=list)
    agent_rewards: np.ndarray | None = None               # (steps, M)
    actors: list = field(default_factory=list)

    def curve_rows(self):
        for i, r in enumerate(self.rewards):
            yield {"step": i + 1, "reward": r, "loss_critic": self.losses[i],
                   "actor_objective": self.objectives[i]}

    def round_rows(self):
        for i, r in enumerate(self.round_rewards):
            row = {"round": i + 1, "assembled_reward": r}
            for m, b in enumerate(self.agent_best[i]):
                row[f"agent_{m + 1}_best"] = b
            yield row


def initial_matrix(M: int, K: int, seed: int) -> np.ndarray:
    return np.random.default_rng([int(seed), 7]).uniform(0.0, 1.0, size=(M, K))


def socket_round(state: CoordinatorState, messages: list, timeout: float = 10.0) -> list:
    """Run one round over localhost TCP; returns the matrix each agent received."""
    port = queue.Queue()
    box = {}

    def serve():
        try:
            box["W"] = serve_socket_round(state, timeout=timeout, ready=port.put)
        except Exception as exc:                      # surfaced below
            box["error"] = exc
            port.put(None)

    server = threading.Thread(target=serve, daemon=True)
    server.start()
    p = port.get(timeout=timeout)
    if p is None:
        raise box["error"]
    replies = [None] * len(messages)

    def send(i):
        replies[i] = socket_send_row(p, messages[i], timeout=timeout)

    senders = [threading.Thread(target=send, args=(i,), daemon=True) for i in range(len(messages))]
    for t in senders:
        t.start()
    for t in senders:
        t.join(timeout)
    server.join(timeout)
    if "error" in box:
        raise box["error"]
    if any(r is None for r in replies):
        raise TimeoutError(f"round {state.round}: socket exchange did not complete")
    return replies


def dist_train(env_factory, hyper: DdpgHyper, horizon_rounds: int, row_output: str = "softmax",
               workers: int = 1, round_timeout: float | None = None, transport: str = "inproc",
               callback=None) -> DistResult:
    """Alternate local episodes (all agents) and coordinator rounds.

    ``env_factory(m)`` builds agent ``m``'s private environment; all agents
    must see the same coherence block. A round is ``hyper.steps_per_episode``
    local steps per agent. ``row_output`` replaces the per-column softmax,
    which needs every eAP's logits and so cannot run inside one eAP.
    ``workers > 1`` runs the agents of a round on a thread pool; the result
    does not depend on it. ``transport="socket"`` exchanges rows and the
    broadcast as JSON over localhost TCP instead of an in-process queue.
    """
    if horizon_rounds < 0:
        raise ConfigurationError("horizon_rounds must be >= 0")
    if transport not in ("inproc", "socket"):
        raise ConfigurationError(f"unknown transport {transport!r}")
    envs = [env_factory(0)]
    M, K = envs[0].M, envs[0].K
    envs += [env_factory(m) for m in range(1, M)]
    output = row_output if hyper.output == "softmax-columns" else hyper.output
    hp = replace(hyper, output=output, episodes=max(horizon_rounds, 1))
    learners = [DdpgAgent(K, K, hp, agent_index=m) for m in range(M)]
    W0 = initial_matrix(M, K, hyper.seed)
    agents = [AgentView(index=m, W_local=W0) for m in range(M)]
    coord = Coordinator(M, K)
    result = DistResult(W=W0.copy(), actors=[ln.actor for ln in learners])
    per_step = []

    def run_agent(m):
        out = local_episode(agents[m], envs[m], learners[m], hp.steps_per_episode)
        if transport == "inproc":
            coord.send(row_message(coord.state.round, m, agents[m].best_action))
        return out

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for rnd in range(horizon_rounds):
            if pool is None:
                logs = [run_agent(m) for m in range(M)]
            else:
                logs = list(pool.map(run_agent, range(M)))
            if transport == "inproc":
                W_new = coord.collect(timeout=round_timeout)
                for ag in agents:
                    ag.receive(W_new)
            else:
                msgs = [row_message(coord.state.round, m, agents[m].best_action) for m in range(M)]
                replies = socket_round(coord.state, msgs, timeout=round_timeout or 10.0)
                for ag, W_m in zip(agents, replies):
                    ag.receive(W_m)
                W_new = coord.state.W_new
            res = envs[0].evaluate(W_new)
            result.W = np.array(W_new)
            result.round_rewards.append(res.reward)
            result.round_sum_rates.append(res.sum_rate)
            result.agent_best.append([ag.best_reward for ag in agents])
            per_step.append(np.array([lg.rewards for lg in logs]).T)
            result.rewards += np.mean([lg.rewards for lg in logs], axis=0).tolist()
            result.sum_rates += np.mean([lg.sum_rates for lg in logs], axis=0).tolist()
            result.feasible += np.mean([lg.feasible for lg in logs], axis=0).tolist()
            result.losses += np.mean([lg.losses for lg in logs], axis=0).tolist()
            result.objectives += np.mean([lg.objectives for lg in logs], axis=0).tolist()
            if callback is not None:
                callback(rnd + 1, res.reward, {"sum_rate": res.sum_rate})
            log.debug("round %d assembled reward %.3f", rnd + 1, res.reward)
    finally:
        if pool is not None:
            pool.shutdown()
    if per_step:
        result.agent_rewards = np.concatenate(per_step)
    return result
