"""Network geometry and channel sampling.

Large-scale fading follows a distance power law with correlated log-normal
shadowing; small-scale power gains are gamma distributed (Nakagami-m
envelopes). All powers are linear. dB/dBm values are converted once, at the
configuration boundary.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DimensionError

#: (M, K) sizes of the named scenario presets.
PRESETS = {
    "small": (15, 5),
    "medium": (50, 15),
    "large": (70, 20),
}


def db_to_linear(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


@dataclass(frozen=True)
class ScenarioConfig:
    """Physical and geometric parameters of one cell-free deployment.

    ``tau_p=None`` means one pilot symbol per UE (fully orthogonal pilots).
    Shadowing std and correlation are not fixed by the system tables; the
    defaults are common cell-free values.
    """

    M: int = 15
    K: int = 5
    radius_m: float = 18.0
    kappa: float = 2.0
    sigma_sh_db: float = 8.0
    delta: float = 0.5
    nakagami_m: float = 1.0
    nakagami_omega: float = 1.0
    noise_psd_dbm_hz: float = -169.0
    bandwidth_hz: float = 20e6
    d_min_m: float = 1.0
    tau_p: int | None = None
    pilot_power_mw: float = 100.0
    data_power_mw: float = 100.0
    sic_sensitivity_dbm: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 1:
            raise ConfigurationError(f"M must be a positive integer, got {self.M}")
        if int(self.K) != self.K or self.K < 1:
            raise ConfigurationError(f"K must be a positive integer, got {self.K}")
        if not self.radius_m > 0:
            raise ConfigurationError("radius_m must be > 0")
        if self.kappa < 2:
            raise ConfigurationError("path-loss exponent kappa must be >= 2")
        if not 0.0 <= self.delta <= 1.0:
            raise ConfigurationError(f"delta must lie in [0, 1], got {self.delta}")
        if self.sigma_sh_db < 0:
            raise ConfigurationError("sigma_sh_db must be >= 0")
        if self.nakagami_m < 0.5:
            raise ConfigurationError("Nakagami shape must be >= 0.5")
        if not self.nakagami_omega > 0:
            raise ConfigurationError("Nakagami spread must be > 0")
        if not self.d_min_m > 0:
            raise ConfigurationError("d_min_m must be > 0")
        if self.tau_p is not None and self.tau_p < 1:
            raise ConfigurationError("tau_p must be >= 1")
        if not (self.pilot_power_mw > 0 and self.data_power_mw >= 0):
            raise ConfigurationError("pilot power must be > 0 and data power >= 0")
        if not self.bandwidth_hz > 0:
            raise ConfigurationError("bandwidth_hz must be > 0")

    # -- derived quantities -------------------------------------------------
    @property
    def pilot_length(self) -> int:
        return self.K if self.tau_p is None else int(self.tau_p)

    @property
    def noise_power_mw(self) -> float:
        """AWGN power integrated over the configured bandwidth."""
        return float(db_to_linear(self.noise_psd_dbm_hz) * self.bandwidth_hz)

    @property
    def pilot_snr(self) -> float:
        """Pilot power normalized to the noise power."""
        return self.pilot_power_mw / self.noise_power_mw

    @property
    def data_snr(self) -> float:
        """Data power normalized to the noise power."""
        return self.data_power_mw / self.noise_power_mw

    @property
    def sic_sensitivity_mw(self) -> float:
        return float(db_to_linear(self.sic_sensitivity_dbm))

    @property
    def mean_small_scale(self) -> float:
        """E|h|^2 = shape / rate = Omega."""
        return float(self.nakagami_omega)

    # -- (de)serialization ----------------------------------------------------
    @classmethod
    def preset(cls, name: str, **overrides) -> "ScenarioConfig":
        try:
            M, K = PRESETS[name]
        except KeyError:
            raise ConfigurationError(
                f"unknown scenario preset {name!r}; choose from {sorted(PRESETS)}"
            ) from None
        return cls(**{"M": M, "K": K, **overrides})

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path) -> "ScenarioConfig":
        """Load a flat JSON object whose keys are the field names of this class."""
        with open(path) as fh:
            data = json.load(fh)
        if "preset" in data:
            data = dict(data)
            name = data.pop("preset")
            return cls.preset(name, **data)
        return cls.from_dict(data)

    def to_file(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))


@dataclass
class Scenario:
    config: ScenarioConfig
    eap_positions: np.ndarray
    ue_positions: np.ndarray
    distances: np.ndarray

    @property
    def M(self) -> int:
        return self.config.M

    @property
    def K(self) -> int:
        return self.config.K


@dataclass
class FadingBlock:
    """Large-scale factors ``F``, small-scale power gains ``H2`` and ``G2 = F * H2``."""

    F: np.ndarray
    H2: np.ndarray
    G2: np.ndarray = field(init=False)

    def __post_init__(self):
        self.G2 = compose_gains(self.F, self.H2)


def geometry_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), 0])


def block_rng(seed: int, block: int = 0) -> np.random.Generator:
    """Independent stream for the ``block``-th coherence block of a run."""
    return np.random.default_rng([int(seed), 1, int(block)])


def _uniform_disc(n: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    r = radius * np.sqrt(rng.random(n))
    theta = 2.0 * np.pi * rng.random(n)
    return np.column_stack([r * np.cos(theta), r * np.sin(theta)])


def generate_scenario(config: ScenarioConfig) -> Scenario:
    """Drop M eAPs and K UEs uniformly over the disc and compute link distances.

    Distances are floored at ``config.d_min_m`` so the path loss stays finite.
    """
    rng = geometry_rng(config.seed)
    eaps = _uniform_disc(config.M, config.radius_m, rng)
    ues = _uniform_disc(config.K, config.radius_m, rng)
    d = np.linalg.norm(eaps[:, None, :] - ues[None, :, :], axis=-1)
    d = np.maximum(d, config.d_min_m)
    return Scenario(config=config, eap_positions=eaps, ue_positions=ues, distances=d)


def shadowing(M: int, K: int, delta: float, rng: np.random.Generator, size=None) -> np.ndarray:
    """Correlated standard-normal shadowing ``z = sqrt(delta) a + sqrt(1 - delta) b``.

    ``a`` is drawn once per eAP and ``b`` once per UE, so ``delta`` moves the
    correlation from the UE side (delta=0) to the eAP side (delta=1).
    ``size`` prepends independent batch dimensions.
    """
    batch = () if size is None else tuple(np.atleast_1d(size))
    a = rng.standard_normal(batch + (M, 1))
    b = rng.standard_normal(batch + (1, K))
    return math.sqrt(delta) * a + math.sqrt(1.0 - delta) * b


def sample_large_scale(scenario: Scenario, rng: np.random.Generator) -> np.ndarray:
    cfg = scenario.config
    z = shadowing(cfg.M, cfg.K, cfg.delta, rng)
    return scenario.distances ** (-2.0 * cfg.kappa) * 10.0 ** (cfg.sigma_sh_db * z / 10.0)


def sample_small_scale(M: int, K: int, nakagami_m: float, nakagami_omega: float,
                       rng: np.random.Generator) -> np.ndarray:
    """|h|^2 ~ Gamma(shape=m, rate=m/Omega)."""
    if nakagami_m < 0.5 or not nakagami_omega > 0:
        raise ConfigurationError(
            f"invalid Nakagami parameters (m={nakagami_m}, Omega={nakagami_omega})"
        )
    return rng.gamma(shape=nakagami_m, scale=nakagami_omega / nakagami_m, size=(M, K))


def compose_gains(F: np.ndarray, H2: np.ndarray) -> np.ndarray:
    F = np.asarray(F, dtype=float)
    H2 = np.asarray(H2, dtype=float)
    if F.shape != H2.shape:
        raise DimensionError(f"F has shape {F.shape} but H2 has shape {H2.shape}")
    return F * H2


def sample_fading(scenario: Scenario, rng: np.random.Generator) -> FadingBlock:
    cfg = scenario.config
    F = sample_large_scale(scenario, rng)
    H2 = sample_small_scale(cfg.M, cfg.K, cfg.nakagami_m, cfg.nakagami_omega, rng)
    return FadingBlock(F=F, H2=H2)
