"""Uplink pilot training and per-eAP MMSE channel estimation.

Noise convention: every pilot-symbol noise sample has variance 1/2 per real
dimension, so ``phi^H eta`` has unit power for a unit-norm pilot. Pilot and
data powers are therefore expressed as SNRs (power / noise power).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import FadingBlock
from .errors import ConfigurationError, DimensionError


@dataclass
class PilotConfig:
    tau_p: int
    rho: np.ndarray
    assignment: np.ndarray
    Phi: np.ndarray

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float)
        self.assignment = np.asarray(self.assignment, dtype=int)
        if self.tau_p < 1:
            raise ConfigurationError("tau_p must be >= 1")
        if np.any(self.rho <= 0):
            raise ConfigurationError("pilot powers must be > 0")
        K = self.Phi.shape[1]
        if self.rho.shape != (K,) or self.assignment.shape != (K,):
            raise DimensionError("rho and assignment must have one entry per UE")

    @property
    def K(self) -> int:
        return self.Phi.shape[1]

    def cross_correlation(self) -> np.ndarray:
        """K x K matrix of |phi_k^H phi_l|^2."""
        return np.abs(self.Phi.conj().T @ self.Phi) ** 2


@dataclass
class EstimationResult:
    E: np.ndarray       # (M, K) MMSE estimation constants
    Ydot: np.ndarray    # (M, K) projected pilot observations
    Ghat: np.ndarray    # (M, K) complex channel estimates
    g: np.ndarray       # (M, K) true complex gains used to generate the pilots

    @property
    def Ghat2(self) -> np.ndarray:
        return np.abs(self.Ghat) ** 2

    def to_dict(self) -> dict:
        """JSON-friendly dump; complex arrays are split into ``re``/``im`` lists."""
        def cplx(a):
            return {"re": a.real.tolist(), "im": a.imag.tolist()}
        return {
            "E": self.E.tolist(),
            "Ydot": cplx(self.Ydot),
            "Ghat": cplx(self.Ghat),
        }


def build_pilots(K: int, tau_p: int, seed=None) -> tuple[np.ndarray, np.ndarray]:
    """Unit-norm pilot columns drawn from an orthonormal basis of C^tau_p.

    UE ``k`` gets basis vector ``k mod tau_p``, so pilots are shared
    round-robin once ``tau_p < K``. The canonical basis is used unless a
    ``seed`` is given, in which case the basis is a seeded random unitary.

    Returns ``(Phi, assignment)`` with ``Phi`` of shape (tau_p, K).
    """
    if tau_p < 1:
        raise ConfigurationError("tau_p must be >= 1")
    if seed is None:
        basis = np.eye(tau_p, dtype=complex)
    else:
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((tau_p, tau_p)) + 1j * rng.standard_normal((tau_p, tau_p))
        Q, R = np.linalg.qr(A)
        basis = Q * (np.diag(R) / np.abs(np.diag(R)))
    assignment = np.arange(K) % tau_p
    return basis[:, assignment], assignment


def make_pilot_config(K: int, tau_p: int, rho, seed=None) -> PilotConfig:
    Phi, assignment = build_pilots(K, tau_p, seed)
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (K,)).copy()
    return PilotConfig(tau_p=tau_p, rho=rho, assignment=assignment, Phi=Phi)


def estimation_constants(F: np.ndarray, pilots: PilotConfig, mean_h2: float) -> np.ndarray:
    """MMSE scale mapping the projected pilot observation to the gain estimate.

    ``mean_h2`` is E|h|^2 (shape/rate of the gamma power gain).
    """
    F = np.asarray(F, dtype=float)
    if F.shape[1] != pilots.K:
        raise DimensionError(f"F has {F.shape[1]} UE columns, pilots cover {pilots.K}")
    tau, rho = pilots.tau_p, pilots.rho
    C = pilots.cross_correlation()                     # C[k, l] = |phi_k^H phi_l|^2
    received = tau * (F * rho[None, :] * mean_h2) @ C.T  # [m, k] = tau sum_l rho_l F_ml mean |.|^2
    return np.sqrt(tau * rho)[None, :] * F * mean_h2 / (received + 1.0)


def complex_gains(G2: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Attach i.i.d. uniform phases to the sampled power gains."""
    phase = rng.uniform(0.0, 2.0 * np.pi, size=G2.shape)
    return np.sqrt(G2) * np.exp(1j * phase)


def pilot_noise(M: int, tau_p: int, rng: np.random.Generator) -> np.ndarray:
    """CN noise with variance 1/2 per real dimension."""
    return (rng.standard_normal((M, tau_p)) + 1j * rng.standard_normal((M, tau_p))) / np.sqrt(2.0)


def project_pilots(g: np.ndarray, pilots: PilotConfig, noise: np.ndarray | None) -> np.ndarray:
    """Received pilot block at every eAP, projected onto each UE's pilot."""
    amp = np.sqrt(pilots.tau_p * pilots.rho)
    Y = (g * amp[None, :]) @ pilots.Phi.T             # (M, tau_p)
    if noise is not None:
        Y = Y + noise
    return Y @ pilots.Phi.conj()                       # [m, k] = phi_k^H y_m


def estimate_gains(fading: FadingBlock, pilots: PilotConfig, mean_h2: float,
                   rng: np.random.Generator, noise: bool = True) -> EstimationResult:
    g = complex_gains(fading.G2, rng)
    eta = pilot_noise(g.shape[0], pilots.tau_p, rng) if noise else None
    Ydot = project_pilots(g, pilots, eta)
    E = estimation_constants(fading.F, pilots, mean_h2)
    return EstimationResult(E=E, Ydot=Ydot, Ghat=E * Ydot, g=g)
