import numpy as np
import pytest

from cellfree.channel import ScenarioConfig
from cellfree.ddpg import DdpgHyper, ddpg_train
from cellfree.distributed import (AgentView, Coordinator, CoordinatorState, RowTracker,
                                  coordinator_round, dist_train, initial_matrix, row_message,
                                  socket_round)
from cellfree.env import UplinkEnv
from cellfree.errors import ConfigurationError, DimensionError, ProtocolError


def _factory(M=3, K=2, seed=4):
    return lambda m=0: UplinkEnv(ScenarioConfig(M=M, K=K, seed=seed), enforce_sic=False)


def _hyper(**kw):
    base = dict(episodes=2, steps_per_episode=20, batch=4, hidden=(8,), seed=1)
    base.update(kw)
    return DdpgHyper(**base)


ROWS = {0: [0.1, 0.2], 1: [0.3, 0.4], 2: [0.5, 0.6]}


def test_assembly_in_agent_order():
    state = CoordinatorState(M=3, K=2)
    assert coordinator_round(state, [(2, ROWS[2]), (0, ROWS[0])]) is None
    W = coordinator_round(state, [(1, ROWS[1])])
    np.testing.assert_array_equal(W, [ROWS[0], ROWS[1], ROWS[2]])
    assert not W.flags.writeable and state.broadcasts == 1 and state.round == 1


def test_barrier_blocks_on_missing_agent():
    coord = Coordinator(3, 2)
    for m in (0, 2):
        coord.send(row_message(0, m, ROWS[m]))
    with pytest.raises(TimeoutError, match=r"\[1\]"):
        coord.collect(timeout=0.05)
    assert coord.state.broadcasts == 0 and coord.state.W_new is None


def test_protocol_violations():
    state = CoordinatorState(M=3, K=2)
    coordinator_round(state, [(0, ROWS[0])])
    with pytest.raises(ProtocolError):
        coordinator_round(state, [(0, ROWS[0])])
    with pytest.raises(ProtocolError):
        coordinator_round(state, [(5, ROWS[0])])
    with pytest.raises(DimensionError):
        coordinator_round(state, [(1, [0.1, 0.2, 0.3])])
    with pytest.raises(ProtocolError):
        coordinator_round(state, [row_message(3, 1, ROWS[1])])


def test_agent_view_receive_and_compose():
    W0 = initial_matrix(2, 1, 0)
    ag = AgentView(index=1, W_local=W0)
    W = ag.compose([0.9])
    assert W[1, 0] == 0.9 and W[0, 0] == W0[0, 0]
    W_new = np.array([[0.2], [0.7]])
    ag.receive(W_new)
    np.testing.assert_array_equal(ag.W_local, W_new)
    assert ag.row[0] == 0.7


def test_socket_round_matches_inproc():
    msgs = [row_message(0, m, ROWS[m]) for m in (1, 0, 2)]
    replies = socket_round(CoordinatorState(M=3, K=2), msgs, timeout=5.0)
    state = CoordinatorState(M=3, K=2)
    W = coordinator_round(state, msgs)
    for r in replies:
        np.testing.assert_array_equal(r, W)


def test_row_tracker_first_step_then_strict():
    tr = RowTracker()
    tr.update(-5.0, [1.0])
    assert tr.reward == -5.0 and tr.action[0] == 1.0
    tr.update(-5.0, [2.0])
    assert tr.action[0] == 1.0
    tr.update(-4.0, [3.0])
    assert tr.action[0] == 3.0


def test_zero_horizon_returns_initial_matrix():
    res = dist_train(_factory(), _hyper(), 0)
    np.testing.assert_array_equal(res.W, initial_matrix(3, 2, 1))
    assert res.round_rewards == [] and res.rewards == []


def test_bad_settings():
    with pytest.raises(ConfigurationError):
        dist_train(_factory(), _hyper(), -1)
    with pytest.raises(ConfigurationError):
        dist_train(_factory(), _hyper(), 1, transport="carrier-pigeon")


def test_rows_are_owned_and_broadcast():
    res = dist_train(_factory(), _hyper(), 2)
    assert len(res.round_rewards) == 2 and len(res.rewards) == 40
    assert res.agent_rewards.shape == (40, 3)
    # each agent's best local reward is the max of its own per-step rewards
    for rnd in range(2):
        block = res.agent_rewards[rnd * 20:(rnd + 1) * 20]
        np.testing.assert_allclose(res.agent_best[rnd], block.max(axis=0))
    # best rows are noisy softmax outputs clipped to the box
    assert np.all((res.W >= 0) & (res.W <= 1))
    env = _factory()()
    assert env.evaluate(res.W).reward == pytest.approx(res.round_rewards[-1])


def test_single_agent_reproduces_centralized():
    hp = _hyper(output="softmax")
    res = dist_train(_factory(M=1, K=3), hp, hp.episodes)
    ref = ddpg_train(_factory(M=1, K=3)(), hp)
    assert res.rewards == ref.rewards
    assert res.actors[0].flat.tobytes() == ref.actor.flat.tobytes()


def test_cross_coupling_two_agents_one_ue():
    # agent 1's broadcast row changes the reward agent 0 sees for the same local row
    env = _factory(M=2, K=1)()
    env.reset()
    a0 = AgentView(index=0, W_local=[[0.5], [0.0]])
    r_before = env.evaluate(a0.compose([0.5])).reward
    a0.receive([[0.5], [1.0]])
    r_after = env.evaluate(a0.compose([0.5])).reward
    assert r_before != r_after


@pytest.mark.parametrize("kw", [dict(transport="socket"), dict(workers=3)])
def test_transport_and_threads_do_not_change_results(kw):
    ref = dist_train(_factory(), _hyper(), 2)
    res = dist_train(_factory(), _hyper(), 2, **kw)
    assert res.rewards == ref.rewards and res.round_rewards == ref.round_rewards
    np.testing.assert_array_equal(res.W, ref.W)
