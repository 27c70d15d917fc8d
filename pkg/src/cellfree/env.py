"""SIC-ordered uplink SINR, sum-rate, SIC feasibility and the RL environment.

Every term of the received combined signal is evaluated from the sampled
instantaneous gains of the current coherence block. For UE ``k`` at eAP
``m`` the term powers are

* desired            ``D[m, k]     = tau rho_k p_k E_mk^2 |g_mk|^2``
* inter-UE (from l)  ``D[m, l]``
* own contamination  ``C[m, k, v]  = tau rho_v p_k E_mk^2 |phi_k^H phi_v|^2 |g_mv|^2``  (v != k)
* cross contamination ``C[m, q, u]`` summed over q != k, u != q
* noise              ``n[m]        = sum_z p_z E_mz^2 + 1``

All of UE k's terms are divided by ``sigma_dot_k = sum_m w_mk^2 n[m]`` so
the noise term in the SINR denominator is exactly 1. After ascending
ordering of the UEs by received desired power, UE ``k`` sees inter-UE
interference from the UEs ordered after it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .channel import (FadingBlock, Scenario, ScenarioConfig, block_rng,
                      generate_scenario, sample_fading)
from .errors import ContractError, NumericalError
from .pilots import EstimationResult, PilotConfig, estimate_gains, make_pilot_config


@dataclass
class ChannelState:
    """One coherence block: true gains, estimates and the powers in use."""

    scenario: Scenario
    fading: FadingBlock
    pilots: PilotConfig
    estimation: EstimationResult
    p: np.ndarray            # data powers as SNR (power / noise power)
    p_mw: np.ndarray         # data powers in mW, used by the SIC constraints
    sensitivity_mw: float
    link: "LinkPowers" = field(init=False)

    def __post_init__(self):
        self.link = link_powers(self)

    @property
    def M(self) -> int:
        return self.fading.G2.shape[0]

    @property
    def K(self) -> int:
        return self.fading.G2.shape[1]


@dataclass
class LinkPowers:
    desired: np.ndarray        # (M, K)
    contamination: np.ndarray  # (M, K, K), zero on the k == v diagonal
    noise: np.ndarray          # (M,)
    order: np.ndarray          # (K,) UE indices, weakest first

    def __post_init__(self):
        self._terms = {}

    def interference(self, sic: bool = True) -> np.ndarray:
        """Cached :func:`interference_terms` (they do not depend on W)."""
        if sic not in self._terms:
            self._terms[sic] = interference_terms(self, sic)
        return self._terms[sic]

    @property
    def rank(self) -> np.ndarray:
        """Position of every UE inside the SIC order."""
        rank = np.empty_like(self.order)
        rank[self.order] = np.arange(self.order.size)
        return rank


def sic_order(effective_gains: np.ndarray) -> np.ndarray:
    """UE indices sorted by ascending column sum; ties keep the lower index first."""
    totals = np.asarray(effective_gains, dtype=float).sum(axis=0)
    return np.argsort(totals, kind="stable")


def link_powers(state: ChannelState) -> LinkPowers:
    est, pilots = state.estimation, state.pilots
    tau, rho, p = pilots.tau_p, pilots.rho, state.p
    E2 = est.E ** 2
    G2 = np.abs(est.g) ** 2
    desired = tau * (rho * p)[None, :] * E2 * G2
    X = pilots.cross_correlation().copy()
    np.fill_diagonal(X, 0.0)
    contamination = tau * (p[None, :, None] * E2[:, :, None]) * (X * rho[None, :])[None] * G2[:, None, :]
    noise = (E2 * p[None, :]).sum(axis=1) + 1.0
    return LinkPowers(desired=desired, contamination=contamination, noise=noise,
                      order=sic_order(desired))


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalError("non-finite gain or power term")


def interference_terms(lp: LinkPowers, sic: bool = True) -> np.ndarray:
    """Unnormalized (M, K) interference-plus-contamination power seen by each UE."""
    K = lp.desired.shape[1]
    if sic:
        rank = lp.rank
        mask = (rank[None, :] > rank[:, None]).astype(float)   # mask[k, l]: l decoded after k
    else:
        mask = 1.0 - np.eye(K)
    inter_ue = lp.desired @ mask.T
    own = lp.contamination.sum(axis=2)                   # v-sum for each k
    cross = lp.contamination.sum(axis=(1, 2))[:, None] - own   # q != k, u != q
    return inter_ue + own + cross


def sigma_dot(W: np.ndarray, lp: LinkPowers) -> np.ndarray:
    return (np.asarray(W, dtype=float) ** 2 * lp.noise[:, None]).sum(axis=0)


def compute_sinr(W: np.ndarray, lp: LinkPowers, sic: bool = True) -> np.ndarray:
    """Per-UE SINR (linear, original UE indexing) for beamforming matrix ``W``."""
    W = np.asarray(W, dtype=float)
    _check_finite(W, lp.desired, lp.contamination)
    w2 = W ** 2
    signal = (w2 * lp.desired).sum(axis=0)
    interference = (w2 * lp.interference(sic)).sum(axis=0)
    sd = sigma_dot(W, lp)
    gamma = np.zeros_like(signal)
    live = sd > 0
    # Normalized form: (S / sd) / (I / sd + 1)
    gamma[live] = signal[live] / (interference[live] + sd[live])
    return gamma


def sum_rate(gamma) -> float:
    """Sum of log2(1 + gamma_k) in bit/s/Hz."""
    return float(np.sum(np.log2(1.0 + np.asarray(gamma, dtype=float))))


def sic_margins(W: np.ndarray, G2: np.ndarray, p_mw: np.ndarray, sensitivity_mw: float,
                order: np.ndarray) -> list[tuple[int, int, float]]:
    """Slack of each SIC condition as ``(l, delta_l, lhs - P_s)``.

    ``l`` and ``delta_l`` are 1-based positions in the SIC order; one entry
    for every ``l = 2..K`` and ``delta_l = 1..l-1``.
    """
    w2 = np.asarray(W, dtype=float)[:, order] ** 2
    gbar = (np.asarray(p_mw, dtype=float)[order][None, :]) * np.asarray(G2)[:, order]
    cum = np.cumsum(w2, axis=1)   # cum[:, j] = sum_{i <= j} w2[:, i]
    out = []
    K = w2.shape[1]
    for l in range(2, K + 1):
        for d in range(1, l):
            # w_{m d}^2 - sum_{i = d + 1}^{l} w_{m i}^2
            coeff = w2[:, d - 1] - (cum[:, l - 1] - cum[:, d - 1])
            lhs = float(coeff @ gbar[:, l - 1])
            out.append((l, d, lhs - sensitivity_mw))
    return out


def check_sic_constraints(W, G2, p_mw, sensitivity_mw, order) -> list[tuple[int, int]]:
    """Violated SIC conditions as ``(l, delta_l)`` pairs; empty iff feasible."""
    return [(l, d) for l, d, slack in sic_margins(W, G2, p_mw, sensitivity_mw, order) if slack < 0]


def make_channel_state(scenario: Scenario, rng: np.random.Generator,
                       pilots: PilotConfig | None = None) -> ChannelState:
    cfg = scenario.config
    if pilots is None:
        pilots = make_pilot_config(cfg.K, cfg.pilot_length, cfg.pilot_snr)
    fading = sample_fading(scenario, rng)
    est = estimate_gains(fading, pilots, cfg.mean_small_scale, rng)
    p = np.full(cfg.K, cfg.data_snr)
    p_mw = np.full(cfg.K, cfg.data_power_mw)
    return ChannelState(scenario=scenario, fading=fading, pilots=pilots, estimation=est,
                        p=p, p_mw=p_mw, sensitivity_mw=cfg.sic_sensitivity_mw)


@dataclass
class EnvState:
    gamma: np.ndarray
    block: ChannelState


@dataclass
class StepResult:
    gamma: np.ndarray
    sum_rate: float
    feasible: bool
    reward: float


def evaluate(W: np.ndarray, block: ChannelState, penalty: float = 1.0,
             enforce_sic: bool = True) -> StepResult:
    """SINR, sum-rate, SIC feasibility and the resulting reward of ``W`` on ``block``."""
    W = np.asarray(W, dtype=float)
    gamma = compute_sinr(W, block.link)
    rate = sum_rate(gamma)
    feasible = True
    if enforce_sic:
        feasible = not check_sic_constraints(W, block.fading.G2, block.p_mw,
                                             block.sensitivity_mw, block.link.order)
    return StepResult(gamma=gamma, sum_rate=rate, feasible=feasible,
                      reward=rate if feasible else -float(penalty))


def validate_action(W: np.ndarray, shape) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    if W.shape != tuple(shape):
        raise ContractError(f"action shape {W.shape} != {tuple(shape)}")
    if not np.all(np.isfinite(W)) or W.min() < 0.0 or W.max() > 1.0:
        raise ContractError("beamforming weights must lie in [0, 1]")
    return W


def env_reset(scenario: Scenario, pilots: PilotConfig | None, seed: int, block: int = 0) -> EnvState:
    """Fresh coherence block; the initial observation is the SINR of the all-ones matrix."""
    state = make_channel_state(scenario, block_rng(seed, block), pilots)
    gamma = compute_sinr(np.ones((state.M, state.K)), state.link)
    return EnvState(gamma=gamma, block=state)


def env_step(state: EnvState, action: np.ndarray, penalty: float = 1.0,
             enforce_sic: bool = True) -> tuple[EnvState, float]:
    W = validate_action(action, (state.block.M, state.block.K))
    res = evaluate(W, state.block, penalty, enforce_sic)
    return EnvState(gamma=res.gamma, block=state.block), res.reward


class UplinkEnv:
    """Stateful wrapper around :func:`env_reset` / :func:`env_step`.

    ``csi_mode="fixed-block"`` keeps one channel realization for the whole
    run; ``"per-episode"`` draws a new block at every :meth:`reset`.
    """

    def __init__(self, config: ScenarioConfig, csi_mode: str = "fixed-block",
                 penalty: float = 1.0, enforce_sic: bool = True, seed: int | None = None,
                 trace_path=None):
        if csi_mode not in ("fixed-block", "per-episode"):
            raise ValueError(f"unknown csi_mode {csi_mode!r}")
        self.config = config
        self.scenario = generate_scenario(config)
        self.csi_mode = csi_mode
        self.penalty = float(penalty)
        self.enforce_sic = enforce_sic
        self.seed = config.seed if seed is None else int(seed)
        self.pilots = make_pilot_config(config.K, config.pilot_length, config.pilot_snr)
        self._blocks = 0
        self._resets = 0
        self.state = env_reset(self.scenario, self.pilots, self.seed, 0)
        self.steps = 0
        self._trace = None
        if trace_path is not None:
            self._trace_fh = open(trace_path, "w", newline="")
            self._trace = csv.writer(self._trace_fh)
            self._trace.writerow(["step", "reward"] + [f"gamma_{k + 1}" for k in range(config.K)]
                                 + ["feasible"])

    @property
    def M(self) -> int:
        return self.config.M

    @property
    def K(self) -> int:
        return self.config.K

    @property
    def block(self) -> ChannelState:
        return self.state.block

    @property
    def block_index(self) -> int:
        return self._blocks

    def reset(self, seed: int | None = None) -> np.ndarray:
        self._resets += 1
        if seed is not None:
            self.state = env_reset(self.scenario, self.pilots, seed, 0)
        elif self.csi_mode == "per-episode":
            # the block drawn at construction serves the first episode
            if self._resets > 1:
                self._blocks += 1
                self.state = env_reset(self.scenario, self.pilots, self.seed, self._blocks)
            else:
                self.state = EnvState(gamma=self.state.gamma, block=self.block)
        else:
            self.state = EnvState(gamma=compute_sinr(np.ones((self.M, self.K)), self.block.link),
                                  block=self.block)
        return self.state.gamma.copy()

    def evaluate(self, W) -> StepResult:
        return evaluate(W, self.block, self.penalty, self.enforce_sic)

    def step(self, action) -> tuple[np.ndarray, float, dict]:
        W = validate_action(action, (self.M, self.K))
        res = self.evaluate(W)
        self.state = EnvState(gamma=res.gamma, block=self.block)
        self.steps += 1
        if self._trace is not None:
            self._trace.writerow([self.steps, repr(res.reward)] + [repr(float(g)) for g in res.gamma]
                                 + [int(res.feasible)])
        return res.gamma.copy(), res.reward, {"sum_rate": res.sum_rate, "feasible": res.feasible}

    def close(self):
        if self._trace is not None:
            self._trace_fh.close()
            self._trace = None
