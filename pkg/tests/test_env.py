import csv
import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cellfree.channel import ScenarioConfig, generate_scenario
from cellfree.env import (UplinkEnv, check_sic_constraints, compute_sinr, env_reset, env_step,
                          evaluate, sic_margins, sic_order, sum_rate)
from cellfree.errors import ContractError, NumericalError
from cellfree.pilots import make_pilot_config

from oracles import random_block, sic_conditions_bruteforce, sinr_bruteforce


def test_sic_order_examples():
    np.testing.assert_array_equal(sic_order(np.ones((3, 1))), [0])
    np.testing.assert_array_equal(sic_order(np.array([[3.0, 1.0, 2.0]])), [1, 2, 0])
    np.testing.assert_array_equal(sic_order(np.array([[2.0, 1.0, 2.0, 1.0]])), [1, 3, 0, 2])


@given(st.lists(st.integers(0, 4), min_size=1, max_size=8))
def test_sic_order_matches_stable_sort(sums):
    G = np.array([sums], dtype=float)
    expect = sorted(range(len(sums)), key=lambda k: (sums[k], k))
    np.testing.assert_array_equal(sic_order(G), expect)


def test_sum_rate_examples():
    assert sum_rate(np.zeros(4)) == 0.0
    assert sum_rate([1.0, 3.0]) == pytest.approx(3.0, abs=1e-15)
    assert sum_rate([7.0]) == pytest.approx(3.0, abs=1e-15)


@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 2), st.booleans(), st.booleans())
def test_sinr_matches_term_oracle(seed, M, K, shared_pilot, sic):
    block = random_block(seed, M, K, tau_p=1 if shared_pilot else None)
    W = np.random.default_rng(seed).uniform(0, 1, (M, K))
    np.testing.assert_allclose(compute_sinr(W, block.link, sic), sinr_bruteforce(W, block, sic),
                               rtol=1e-9, atol=0)


def test_two_ue_orthogonal_contamination_zero():
    block = random_block(3, 2, 2)
    assert np.all(block.link.contamination == 0)
    W = np.array([[0.3, 1.0], [0.8, 0.2]])
    np.testing.assert_allclose(compute_sinr(W, block.link), sinr_bruteforce(W, block), rtol=1e-12)


def test_single_ue_no_interference():
    block = random_block(1, 4, 1)
    lp = block.link
    w = np.array([[0.2], [0.5], [1.0], [0.7]])
    expect = (w[:, 0] ** 2 * lp.desired[:, 0]).sum() / (w[:, 0] ** 2 * lp.noise).sum()
    assert compute_sinr(w, lp)[0] == pytest.approx(expect, rel=1e-12)


def test_zero_matrix_gives_zero_sinr():
    block = random_block(2, 3, 3, tau_p=2)
    np.testing.assert_array_equal(compute_sinr(np.zeros((3, 3)), block.link), 0.0)


def test_nonfinite_gains_raise():
    block = random_block(2, 2, 2)
    block.link.desired[0, 0] = np.nan
    with pytest.raises(NumericalError):
        compute_sinr(np.ones((2, 2)), block.link)


@given(st.integers(0, 10_000), st.floats(0.01, 1.0))
def test_single_ue_scaling_monotone(seed, c):
    block = random_block(seed, 3, 1)
    w = np.random.default_rng(seed).uniform(0.1, 1, (3, 1))
    # column scaling cancels against the noise normalization
    assert compute_sinr(c * w, block.link)[0] == pytest.approx(compute_sinr(w, block.link)[0], rel=1e-12)


@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(2, 4))
def test_sic_gain(seed, M, K):
    block = random_block(seed, M, K, tau_p=max(1, K - 1))
    W = np.random.default_rng(seed).uniform(0, 1, (M, K))
    assert np.all(compute_sinr(W, block.link, True) >= compute_sinr(W, block.link, False) - 1e-15)


@given(st.integers(0, 10_000), st.permutations(range(3)))
def test_permutation_equivariance(seed, perm):
    perm = list(perm)
    block = random_block(seed, 3, 3, tau_p=2)
    W = np.random.default_rng(seed).uniform(0, 1, (3, 3))
    est = dataclasses.replace(block.estimation, E=block.estimation.E[:, perm],
                              Ydot=block.estimation.Ydot[:, perm],
                              Ghat=block.estimation.Ghat[:, perm], g=block.estimation.g[:, perm])
    pil = dataclasses.replace(block.pilots, rho=block.pilots.rho[perm],
                              assignment=block.pilots.assignment[perm], Phi=block.pilots.Phi[:, perm])
    other = dataclasses.replace(block, estimation=est, pilots=pil, p=block.p[perm], p_mw=block.p_mw[perm])
    np.testing.assert_allclose(compute_sinr(W[:, perm], other.link), compute_sinr(W, block.link)[perm],
                               rtol=1e-12)


@pytest.mark.parametrize("K", [1, 2, 3, 4, 5, 6])
def test_sic_condition_count(K):
    rng = np.random.default_rng(K)
    W = rng.uniform(0, 1, (3, K))
    margins = sic_margins(W, rng.uniform(0, 1, (3, K)), np.ones(K), 1.0, np.arange(K))
    assert len(margins) == K * (K - 1) // 2


@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 5))
def test_sic_conditions_match_bruteforce(seed, M, K):
    rng = np.random.default_rng(seed)
    W, G2 = rng.uniform(0, 1, (M, K)), rng.uniform(0, 2, (M, K))
    p, order = rng.uniform(0.5, 2, K), rng.permutation(K)
    Ps = 0.05
    brute = sic_conditions_bruteforce(W, G2, p, Ps, order)
    violated = check_sic_constraints(W, G2, p, Ps, order)
    assert violated == [(l, d) for l, d, ok in brute if not ok]


def test_zero_matrix_violates_every_condition():
    K = 4
    v = check_sic_constraints(np.zeros((2, K)), np.ones((2, K)), np.ones(K), 0.1, np.arange(K))
    assert len(v) == K * (K - 1) // 2
    assert check_sic_constraints(np.zeros((2, 1)), np.ones((2, 1)), np.ones(1), 0.1, [0]) == []


def test_infeasible_action_gets_exact_penalty():
    block = random_block(4, 3, 3)
    res = evaluate(np.zeros((3, 3)), block, penalty=2.5)
    assert check_sic_constraints(np.zeros((3, 3)), block.fading.G2, block.p_mw,
                                 block.sensitivity_mw, block.link.order)
    assert not res.feasible and res.reward == -2.5


def test_feasible_reward_is_sum_rate():
    block = random_block(4, 3, 2)
    W = np.ones((3, 2))
    res = evaluate(W, block, enforce_sic=False)
    assert res.reward == sum_rate(compute_sinr(W, block.link))


def test_env_reset_and_step():
    cfg = ScenarioConfig(M=4, K=2, seed=8)
    sc = generate_scenario(cfg)
    pil = make_pilot_config(2, 2, cfg.pilot_snr)
    a, b = env_reset(sc, pil, 8), env_reset(sc, pil, 8)
    np.testing.assert_array_equal(a.gamma, b.gamma)
    c = env_reset(sc, pil, 9)
    assert not np.array_equal(a.block.fading.G2, c.block.fading.G2)
    nxt, r = env_step(a, np.zeros((4, 2)), enforce_sic=False)
    np.testing.assert_array_equal(nxt.gamma, 0.0)
    assert r == 0.0
    W = np.full((4, 2), 0.5)
    assert env_step(a, W)[1] == env_step(a, W)[1]
    with pytest.raises(ContractError):
        env_step(a, np.full((4, 2), 1.5))
    with pytest.raises(ContractError):
        env_step(a, np.ones((2, 4)))


def test_uplink_env_modes(tmp_path):
    cfg = ScenarioConfig(M=3, K=2, seed=1)
    env = UplinkEnv(cfg, csi_mode="fixed-block", trace_path=tmp_path / "t.csv")
    G = env.block.fading.G2.copy()
    env.reset()
    gamma, r, info = env.step(np.ones((3, 2)))
    env.reset()
    assert np.array_equal(env.block.fading.G2, G)
    env.close()
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows[0] == ["step", "reward", "gamma_1", "gamma_2", "feasible"]
    assert float(rows[1][1]) == r and set(info) == {"sum_rate", "feasible"}

    ep = UplinkEnv(cfg, csi_mode="per-episode")
    G0 = ep.block.fading.G2.copy()
    ep.reset()
    assert ep.block_index == 0 and np.array_equal(ep.block.fading.G2, G0)
    ep.reset()
    assert ep.block_index == 1 and not np.array_equal(ep.block.fading.G2, G0)
    with pytest.raises(ValueError):
        UplinkEnv(cfg, csi_mode="sometimes")
