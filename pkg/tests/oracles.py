"""Independent reference evaluators used by several test modules."""

import numpy as np

from cellfree.channel import ScenarioConfig, block_rng, generate_scenario
from cellfree.env import make_channel_state
from cellfree.pilots import make_pilot_config


def random_block(seed, M, K, tau_p=None, **kw):
    cfg = ScenarioConfig(M=M, K=K, tau_p=tau_p, seed=seed, **kw)
    sc = generate_scenario(cfg)
    pilots = make_pilot_config(K, cfg.pilot_length, cfg.pilot_snr)
    return make_channel_state(sc, block_rng(seed, 0), pilots)


def sinr_bruteforce(W, block, sic=True):
    """Enumerate every labelled received-power term with explicit loops.

    For UE k the combined signal at eAP m carries (all scaled by w_mk^2):
    desired  tau rho_k p_k E_mk^2 |g_mk|^2,
    inter-UE tau rho_l p_l E_ml^2 |g_ml|^2 for interfering l,
    own pilot contamination tau rho_v p_k E_mk^2 |phi_k^H phi_v|^2 |g_mv|^2 (v != k),
    cross contamination tau rho_u p_q E_mq^2 |phi_q^H phi_u|^2 |g_mu|^2 (q != k, u != q),
    noise sum_z p_z E_mz^2 + 1.
    After ascending ordering by total desired power, UE k is interfered
    by the UEs decoded after it (all other UEs when ``sic`` is False).
    """
    est, pil = block.estimation, block.pilots
    E, g, p = est.E, est.g, block.p
    tau, rho, Phi = pil.tau_p, pil.rho, pil.Phi
    M, K = E.shape
    W = np.asarray(W, dtype=float)
    desired_tot = [sum(tau * rho[k] * p[k] * E[m, k] ** 2 * abs(g[m, k]) ** 2 for m in range(M))
                   for k in range(K)]
    order = sorted(range(K), key=lambda k: (desired_tot[k], k))
    pos = {k: i for i, k in enumerate(order)}
    xc = lambda a, b: abs(np.vdot(Phi[:, a], Phi[:, b])) ** 2
    gamma = np.zeros(K)
    for k in range(K):
        S = I = N = 0.0
        for m in range(M):
            w2 = W[m, k] ** 2
            S += w2 * tau * rho[k] * p[k] * E[m, k] ** 2 * abs(g[m, k]) ** 2
            for l in range(K):
                if l != k and (not sic or pos[l] > pos[k]):
                    I += w2 * tau * rho[l] * p[l] * E[m, l] ** 2 * abs(g[m, l]) ** 2
            for v in range(K):
                if v != k:
                    I += w2 * tau * rho[v] * p[k] * E[m, k] ** 2 * xc(k, v) * abs(g[m, v]) ** 2
            for q in range(K):
                if q == k:
                    continue
                for u in range(K):
                    if u != q:
                        I += w2 * tau * rho[u] * p[q] * E[m, q] ** 2 * xc(q, u) * abs(g[m, u]) ** 2
            N += w2 * (sum(p[z] * E[m, z] ** 2 for z in range(K)) + 1.0)
        gamma[k] = S / (I + N) if N > 0 else 0.0
    return gamma


def sic_conditions_bruteforce(W, G2, p_mw, Ps, order):
    """(l, d, satisfied) for every SIC condition, by direct summation."""
    out = []
    K = len(order)
    for l in range(2, K + 1):
        for d in range(1, l):
            lhs = 0.0
            for m in range(W.shape[0]):
                coeff = W[m, order[d - 1]] ** 2 - sum(W[m, order[i - 1]] ** 2 for i in range(d + 1, l + 1))
                lhs += coeff * p_mw[order[l - 1]] * G2[m, order[l - 1]]
            out.append((l, d, lhs >= Ps))
    return out


def rel_error(a, b):
    """Max-abs difference relative to the larger max-abs magnitude."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0))
    return 0.0 if scale == 0 else float(np.abs(a - b).max() / scale)


def fd_grad(f, x, h=1e-6):
    """Central differences of scalar ``f`` over every entry of array ``x`` (restored after)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        x0 = flat[i]
        flat[i] = x0 + h
        up = f()
        flat[i] = x0 - h
        down = f()
        flat[i] = x0
        gflat[i] = (up - down) / (2 * h)
    return g
