"""Non-learning beamformers: conjugate, MMSE combining and gradient ascent.

Every method returns a real ``M x K`` matrix with entries in [0, 1].
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .env import ChannelState, evaluate
from .errors import ContractError, NumericalError

log = logging.getLogger(__name__)


def _column_max_normalize(A: np.ndarray) -> np.ndarray:
    peak = A.max(axis=0)
    out = np.zeros_like(A)
    live = peak > 0
    if not np.all(live):
        log.warning("zero channel-estimate column for UE(s) %s", np.flatnonzero(~live).tolist())
    out[:, live] = A[:, live] / peak[live]
    return np.clip(out, 0.0, 1.0)


def conjugate_beamforming(Ghat: np.ndarray) -> np.ndarray:
    """w_mk = |g_hat_mk| / max_m' |g_hat_m'k|."""
    return _column_max_normalize(np.abs(np.asarray(Ghat)))


def mmse_combiners(Ghat: np.ndarray, noise_var: float, powers, sic_order=None) -> np.ndarray:
    """Complex MMSE receive combiners ``(sum_l p_l g_l g_l^H + noise I)^-1 g_k sqrt(p_k)``.

    With ``sic_order`` the covariance for UE ``k`` keeps only the UEs at or
    after ``k`` in the decoding order, i.e. those not yet cancelled.
    """
    if not noise_var > 0:
        raise ContractError("noise_var must be > 0")
    Ghat = np.asarray(Ghat, dtype=complex)
    M, K = Ghat.shape
    p = np.broadcast_to(np.asarray(powers, dtype=float), (K,))
    if sic_order is None:
        R = (Ghat * p) @ Ghat.conj().T + noise_var * np.eye(M)
        V = np.linalg.solve(R, Ghat * np.sqrt(p))
    else:
        order = np.asarray(sic_order)
        V = np.empty((M, K), dtype=complex)
        for pos, k in enumerate(order):
            rest = order[pos:]
            G = Ghat[:, rest]
            R = (G * p[rest]) @ G.conj().T + noise_var * np.eye(M)
            V[:, k] = np.linalg.solve(R, Ghat[:, k] * np.sqrt(p[k]))
    if not np.all(np.isfinite(V)):
        raise NumericalError("MMSE combiner solve produced non-finite values")
    return V


def mmse_beamforming(Ghat: np.ndarray, noise_var: float, powers, sic_order=None) -> np.ndarray:
    """Magnitudes of the MMSE combiners, each column scaled so its peak is 1."""
    return _column_max_normalize(np.abs(mmse_combiners(Ghat, noise_var, powers, sic_order)))


def baseline_matrix(name: str, block: ChannelState) -> np.ndarray:
    """``"conjugate"``, ``"mmse"`` (all UEs in the covariance) or ``"mmse-sic"``.

    ``"mmse-sic"`` drops UEs already cancelled by SIC from each UE's
    covariance.
    """
    Ghat = block.estimation.Ghat
    if name == "conjugate":
        return conjugate_beamforming(Ghat)
    # powers are SNRs, so the noise variance is 1
    if name == "mmse":
        return mmse_beamforming(Ghat, 1.0, block.p)
    if name == "mmse-sic":
        return mmse_beamforming(Ghat, 1.0, block.p, sic_order=block.link.order)
    raise ValueError(f"unknown baseline {name!r}")


@dataclass
class AscentResult:
    W: np.ndarray
    reward: float
    history: list = field(default_factory=list)   # best reward after each accepted iterate
    iterations: int = 0


def fd_gradient(f, W: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central finite-difference gradient of scalar ``f`` at ``W``."""
    grad = np.empty_like(W)
    X = W.copy()
    for idx in np.ndindex(W.shape):
        x0 = X[idx]
        X[idx] = x0 + h
        up = f(X)
        X[idx] = x0 - h
        down = f(X)
        X[idx] = x0
        grad[idx] = (up - down) / (2.0 * h)
    return grad


def sum_rate_fd_gradient(W: np.ndarray, lp, h: float = 1e-4, sic: bool = True) -> np.ndarray:
    """Central finite-difference gradient of the sum-rate, all entries at once.

    Perturbing ``w_mk`` only moves UE ``k``'s signal and denominator sums,
    so each difference ``f(W + h e_mk) - f(W - h e_mk)`` reduces to a change
    in one rate term. Same quantity as :func:`fd_gradient` on
    ``sum_rate(compute_sinr(W))`` at O(MK) cost.
    """
    W = np.asarray(W, dtype=float)
    w2 = W ** 2
    D = lp.desired
    B = lp.interference(sic) + lp.noise[:, None]
    S = (w2 * D).sum(axis=0)
    T = (w2 * B).sum(axis=0)

    def rate(dw2):
        s_ = S[None, :] + dw2 * D
        t_ = T[None, :] + dw2 * B
        g = np.where(t_ > 0, s_ / np.where(t_ > 0, t_, 1.0), 0.0)
        return np.log2(1.0 + g)

    up = rate((W + h) ** 2 - w2)
    down = rate((W - h) ** 2 - w2)
    return (up - down) / (2.0 * h)


def gradient_ascent(block: ChannelState, W0: np.ndarray, lr: float = 0.1, iters: int = 100,
                    h: float = 1e-4, penalty: float = 1.0, enforce_sic: bool = True,
                    tol: float = 0.0) -> AscentResult:
    """Projected gradient ascent on the sum-rate over the box [0, 1]^{M x K}.

    Gradients are central finite differences of the unpenalized sum-rate;
    the returned matrix is the best iterate by environment reward
    (penalized when SIC-infeasible). Stops early once an update moves no
    entry by more than ``tol``.
    """
    W = np.clip(np.asarray(W0, dtype=float), 0.0, 1.0)
    if lr < 0:
        raise ContractError("lr must be >= 0")
    lp = block.link
    best_W = W.copy()
    best = evaluate(W, block, penalty, enforce_sic).reward
    history = [best]
    it = 0
    for it in range(1, iters + 1):
        step = lr * sum_rate_fd_gradient(W, lp, h)
        W_next = np.clip(W + step, 0.0, 1.0)
        moved = np.max(np.abs(W_next - W)) if W.size else 0.0
        W = W_next
        r = evaluate(W, block, penalty, enforce_sic).reward
        if r > best:
            best, best_W = r, W.copy()
            history.append(best)
        if moved <= tol:
            break
    return AscentResult(W=best_W, reward=best, history=history, iterations=it)
