"""Acceptance criteria, one test each.

A summary line per criterion is printed at the end of the session (see
``conftest.py``). Tolerances are the contract values; nothing is relaxed
to make a criterion pass.
"""

import os
import threading
import time

import numpy as np
import pytest

from cellfree.baselines import gradient_ascent
from cellfree.channel import ScenarioConfig
from cellfree.d4pg import (DistributionSupport, PrioritizedBuffer, Trajectory, categorical_projection,
                           critic_probs, expected_value, nstep_target, per_sample)
from cellfree.ddpg import DdpgHyper, ddpg_train, observe
from cellfree.distributed import AgentView, Coordinator, dist_train, row_message
from cellfree.env import UplinkEnv, compute_sinr, sic_margins
from cellfree.harness import ExperimentConfig, flops_report, rerun_from_manifest, run_experiment
from cellfree.nn import Mlp
from cellfree.pilots import complex_gains, estimation_constants, make_pilot_config, pilot_noise, project_pilots

from oracles import random_block, rel_error, sinr_bruteforce
from test_ddpg import chained_gradient_error
from test_nn import check_net_gradients


def test_criterion_01_estimator_optimality(record_property):
    rng = np.random.default_rng(2024)
    n, t0, worst = 100_000, time.perf_counter(), np.inf
    for _ in range(10):
        K = int(rng.integers(2, 5))
        tau = int(rng.integers(1, K + 1))
        pc = make_pilot_config(K, tau, 10 ** rng.uniform(0, 2, K), seed=int(rng.integers(1 << 30)))
        F_row = rng.uniform(0.1, 1.0, K)
        F = np.repeat(F_row[None, :], n, axis=0)
        g = complex_gains(F * rng.gamma(1.0, 1.0, size=F.shape), rng)
        Ydot = project_pilots(g, pc, pilot_noise(n, pc.tau_p, rng))
        E = estimation_constants(F[:1], pc, 1.0)[0]
        mse = lambda c: np.mean(np.abs(g - c[None, :] * Ydot) ** 2, axis=0)
        best = mse(E)
        for c in (0.5, 0.9, 1.1, 2.0):
            worst = min(worst, float(np.min(mse(c * E) - best)))
    elapsed = time.perf_counter() - t0
    record_property("detail", f"min MSE margin {worst:.3e}, {elapsed:.1f} s")
    assert worst >= 0 and elapsed < 30


def test_criterion_02_sinr_oracle(record_property):
    rng = np.random.default_rng(7)
    worst = 0.0
    for i in range(50):
        M, K = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        block = random_block(i, M, K, tau_p=int(rng.integers(1, K + 1)))
        W = rng.uniform(0, 1, (M, K))
        for sic in (True, False):
            worst = max(worst, rel_error(compute_sinr(W, block.link, sic), sinr_bruteforce(W, block, sic)))
    record_property("detail", f"max rel error {worst:.1e}")
    assert worst <= 1e-9


def test_criterion_03_constraint_count(record_property):
    counts = {}
    for K in range(2, 7):
        rng = np.random.default_rng(K)
        margins = sic_margins(rng.uniform(0, 1, (4, K)), rng.uniform(0, 1, (4, K)), np.ones(K), 0.5,
                              rng.permutation(K))
        counts[K] = len(margins)
    record_property("detail", f"counts {counts}")
    assert all(c == K * (K - 1) // 2 for K, c in counts.items())


def test_criterion_04_gradients(record_property):
    worst_net = worst_chain = 0.0
    outputs = ["linear", "sigmoid", "softmax", "softmax-columns"]
    for seed in range(100):
        rng = np.random.default_rng(seed)
        out = outputs[seed % 4]
        sizes = [int(rng.integers(1, 6)), int(rng.integers(2, 9)), int(rng.integers(2, 7)), 6]
        net = Mlp(sizes, out, rng=rng, action_shape=(3, 2) if out == "softmax-columns" else None)
        x = rng.normal(size=(3, sizes[0]))
        worst_net = max(worst_net, check_net_gradients(net, x, rng.normal(size=(3, 6))))
        worst_chain = max(worst_chain, chained_gradient_error(seed))
    record_property("detail", f"max rel error nets {worst_net:.1e}, chained {worst_chain:.1e}")
    assert worst_net <= 1e-4 and worst_chain <= 1e-4


def test_criterion_05_distributional(record_property):
    sup = DistributionSupport()
    rng = np.random.default_rng(5)
    p = rng.dirichlet(np.ones(51), size=1000)
    shifted = rng.uniform(-100, 200, (1000, 1)) + rng.uniform(0, 1.5, (1000, 1)) * sup.atoms
    mass_err = float(np.max(np.abs(categorical_projection(p, shifted, sup).sum(axis=1) - 1)))

    actor = Mlp([3, 16, 4], "sigmoid", rng=0)
    critic = Mlp([7, 16, 51], rng=1)
    states = rng.normal(size=(2, 3))
    tr = Trajectory(states, rng.uniform(size=(1, 4)), [2.3])
    probs = critic_probs(critic, states[1:], actor.forward(states[1:], cache=False))
    single = categorical_projection(probs, 2.3 + 0.99 * sup.atoms[None, :], sup)
    bitwise = nstep_target(tr, 0.99, actor, critic, sup, N=1).tobytes() == single.tobytes()

    tr5 = Trajectory(rng.normal(size=(6, 3)), rng.uniform(size=(5, 4)), [1.0] * 5)
    mean = float(expected_value(nstep_target(tr5, 0.99, actor, critic, sup, bootstrap=False), sup)[0])
    record_property("detail", f"mass err {mass_err:.1e}, N=1 bitwise {bitwise}, N=5 mean {mean:.5f}")
    assert mass_err <= 1e-9 and bitwise and abs(mean - 4.90099) <= sup.delta


def test_criterion_06_per_ratio(record_property):
    buf = PrioritizedBuffer(10, 1, 1, N=1)
    for p in (3.0, 1.0):
        buf.add(Trajectory(np.zeros((2, 1)), np.zeros((1, 1)), [0.0]), priority=p)
    rng = np.random.default_rng(6)
    n = 100_000
    idx = np.concatenate([per_sample(buf, 2, rng)[0] for _ in range(n // 2)])
    frac = float(np.mean(idx == 0))
    sigma = np.sqrt(0.75 * 0.25 / n)
    record_property("detail", f"ratio {frac:.4f} (3 sigma {3 * sigma:.4f})")
    assert abs(frac - 0.75) <= 3 * sigma


def test_criterion_07_flops(record_property):
    rep = flops_report(15, 5)
    record_property("detail", f"centralized {rep['centralized']}, distributed {rep['distributed']}")
    assert rep["centralized"] == 87_296 and rep["distributed"] == 69_376


def _trained_actor(M, K, steps=40):
    env = UplinkEnv(ScenarioConfig(M=M, K=K, seed=0), enforce_sic=False)
    hp = DdpgHyper(episodes=1, steps_per_episode=steps, batch=16, seed=0)
    return env, ddpg_train(env, hp).actor


def _latency(actor, s, repeats=20):
    actor.forward(s, cache=False)
    ts = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        actor.forward(s, cache=False)
        ts.append(time.perf_counter() - t0)
    return float(np.median(ts))


def test_criterion_08_latency(record_property):
    env, actor = _trained_actor(150, 50)
    t_big = _latency(actor, observe(env.state.gamma))
    env15, actor15 = _trained_actor(15, 5)
    t_small = _latency(actor15, observe(env15.state.gamma))
    t0 = time.perf_counter()
    gradient_ascent(env15.block, np.ones((15, 5)), lr=0.1, iters=100, enforce_sic=False)
    t_ga = time.perf_counter() - t0
    record_property("detail", f"inference M=150 {t_big * 1e3:.2f} ms, M=15 {t_small * 1e3:.3f} ms, "
                              f"grad ascent M=15 {t_ga * 1e3:.1f} ms ({t_ga / t_small:.0f}x)")
    assert t_big < 1.0 and t_ga >= 10 * t_small


@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk")
    cfg = ExperimentConfig(scenario="small", algos=("conjugate", "mmse", "ddpg", "d4pg", "dist"),
                           seeds=(0, 1, 2), episodes=6, steps_per_episode=1000,
                           workers=os.cpu_count() or 1, out_dir=str(out))
    t0 = time.perf_counter()
    summary = run_experiment(cfg)
    return summary, time.perf_counter() - t0


def test_criterion_09_method_ordering(record_property, desk_runs):
    summary, elapsed = desk_runs
    agg = {a: v["normalized_mean"] for a, v in summary["aggregate"].items()}
    drl = ("ddpg", "d4pg", "dist")
    checks = {
        "conjugate < each DRL": all(agg["conjugate"] < agg[a] for a in drl),
        "each DRL <= 1": all(agg[a] <= 1.0 for a in drl),
        "D4PG >= 0.7": agg["d4pg"] >= 0.7,
        "runtime <= 15 min": elapsed <= 900,
    }
    vals = ", ".join(f"{a} {v:.3f}" for a, v in agg.items())
    failed = [k for k, ok in checks.items() if not ok]
    record_property("detail", f"{vals}; {elapsed / 60:.1f} min; failed: {failed or 'none'}")
    assert not failed


def test_criterion_10_distributed_protocol(record_property):
    M, K = 3, 2
    rows = {m: np.full(K, 0.1 * (m + 1)) for m in range(M)}
    coord = Coordinator(M, K)
    senders = [threading.Thread(target=coord.send, args=(row_message(0, m, rows[m]),)) for m in (2, 0, 1)]
    for t in senders:
        t.start()
    W_new = coord.collect(timeout=5)
    order_ok = np.array_equal(W_new, np.stack([rows[m] for m in range(M)]))

    coord2 = Coordinator(M, K)
    coord2.send(row_message(0, 0, rows[0]))
    coord2.send(row_message(0, 2, rows[2]))
    try:
        coord2.collect(timeout=0.1)
        blocks = False
    except TimeoutError:
        blocks = coord2.state.broadcasts == 0

    agents = [AgentView(index=m, W_local=np.zeros((M, K))) for m in range(M)]
    for ag in agents:
        ag.receive(W_new)
    local_ok = all(np.array_equal(ag.W_local, W_new) for ag in agents)

    factory = lambda m=0: UplinkEnv(ScenarioConfig(M=1, K=3, seed=2), enforce_sic=False)
    hp = DdpgHyper(episodes=2, steps_per_episode=50, batch=8, hidden=(16,), output="softmax", seed=3)
    same = dist_train(factory, hp, 2).rewards == ddpg_train(factory(), hp).rewards
    record_property("detail", f"order {order_ok}, barrier {blocks}, W_local {local_ok}, M=1 curve {same}")
    assert order_ok and blocks and local_ok and same


def test_criterion_11_determinism(record_property, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    cfg = ExperimentConfig(scenario="small", algos=("conjugate", "mmse", "grad-ascent", "ddpg", "d4pg", "dist"),
                           seeds=(0, 1), episodes=2, steps_per_episode=100, ga_iters=10,
                           out_dir=str(a))
    run_experiment(cfg)
    rerun_from_manifest(a / "manifest.json", b)
    names = sorted(p.name for p in a.iterdir() if p.name != "timings.json")
    diff = [n for n in names if (a / n).read_bytes() != (b / n).read_bytes()]
    record_property("detail", f"{len(names)} files compared, {len(diff)} differ")
    assert not diff
