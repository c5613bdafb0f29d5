"""Frequency-domain MIMO-OFDM echo synthesis.

Observations are produced directly after CP removal and the per-symbol FFT:
for subcarrier m, symbol k and receive antenna n a point target contributes

    b * exp(-j2π m Δf τ) * exp(j2π k f_D T_s) * a_n(θ) * (a(θ)ᵀ x[m, k])

with a(θ) the half-wavelength ULA steering vector shared by Tx and Rx.
Tensors are laid out as [M, K, N]; flattening in C order gives the
antenna-fastest, then symbol, then subcarrier stacking used everywhere else.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

QPSK = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2.0)


@dataclass(frozen=True)
class SystemConfig:
    """Array and OFDM numerology. Defaults follow the 30 GHz / 120 kHz setup."""

    n_antennas: int = 8
    n_subcarriers: int = 128
    n_symbols: int = 14
    carrier_hz: float = 30e9
    subcarrier_hz: float = 120e3
    cp_fraction: float = 0.25

    def __post_init__(self):
        if min(self.n_antennas, self.n_subcarriers, self.n_symbols) < 1:
            raise ValueError("n_antennas, n_subcarriers and n_symbols must be >= 1")
        if self.subcarrier_hz <= 0 or self.carrier_hz <= 0:
            raise ValueError("carrier_hz and subcarrier_hz must be positive")
        if self.cp_fraction < 0:
            raise ValueError("cp_fraction must be non-negative")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    @property
    def antenna_spacing(self) -> float:
        return self.wavelength / 2

    @property
    def spacing_ratio(self) -> float:
        # d / λ, fixed at one half
        return 0.5

    @property
    def symbol_duration(self) -> float:
        return 1.0 / self.subcarrier_hz

    @property
    def symbol_period(self) -> float:
        return (1.0 + self.cp_fraction) / self.subcarrier_hz

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n_subcarriers, self.n_symbols, self.n_antennas)

    @property
    def n_obs(self) -> int:
        return self.n_subcarriers * self.n_symbols * self.n_antennas

    def replace(self, **changes) -> "SystemConfig":
        from dataclasses import replace

        return replace(self, **changes)


def delay_to_range(tau):
    return SPEED_OF_LIGHT * np.asarray(tau) / 2


def range_to_delay(r):
    return 2 * np.asarray(r) / SPEED_OF_LIGHT


def doppler_to_velocity(f_d, cfg: SystemConfig):
    return cfg.wavelength * np.asarray(f_d) / 2


def velocity_to_doppler(v, cfg: SystemConfig):
    return 2 * np.asarray(v) / cfg.wavelength


@dataclass(frozen=True)
class Target:
    """Point scatterer: complex gain b, delay τ [s], Doppler f_D [Hz], angle θ [rad]."""

    b: complex
    delay: float
    doppler: float
    angle: float

    @property
    def range(self) -> float:
        return float(delay_to_range(self.delay))

    def velocity(self, cfg: SystemConfig) -> float:
        return float(doppler_to_velocity(self.doppler, cfg))

    @classmethod
    def from_physical(cls, b, range_m, velocity_mps, angle_rad, cfg: SystemConfig):
        return cls(
            complex(b),
            float(range_to_delay(range_m)),
            float(velocity_to_doppler(velocity_mps, cfg)),
            float(angle_rad),
        )


@dataclass
class Scene:
    targets: list[Target] = field(default_factory=list)
    clutter: list[Target] = field(default_factory=list)
    noise_var: float = 1.0


@dataclass
class ObservationBlock:
    """Transmit symbols and received echoes, both shaped [M, K, N]."""

    tx: np.ndarray
    rx: np.ndarray

    def vector(self) -> np.ndarray:
        return self.rx.reshape(-1)

    @staticmethod
    def unvector(y: np.ndarray, cfg: SystemConfig) -> np.ndarray:
        y = np.asarray(y)
        if y.size != cfg.n_obs:
            raise ValueError(f"expected {cfg.n_obs} samples, got {y.size}")
        return y.reshape(cfg.shape)


def steering_vector(theta, cfg: SystemConfig) -> np.ndarray:
    """ULA response; a trailing antenna axis is appended for array input."""
    n = np.arange(cfg.n_antennas)
    phase = 2 * np.pi * cfg.spacing_ratio * np.sin(np.asarray(theta, dtype=float))
    return np.exp(1j * np.multiply.outer(phase, n))


def _check_tx(X: np.ndarray, cfg: SystemConfig) -> None:
    if X.shape != cfg.shape:
        raise ValueError(f"tx tensor has shape {X.shape}, expected {cfg.shape}")


def atom_tensor(tau, f_d, theta, X: np.ndarray, cfg: SystemConfig) -> np.ndarray:
    """Space-time response of a unit-gain scatterer, shaped [M, K, N]."""
    _check_tx(X, cfg)
    m = np.arange(cfg.n_subcarriers)
    k = np.arange(cfg.n_symbols)
    e_m = np.exp(-2j * np.pi * m * cfg.subcarrier_hz * tau)
    e_k = np.exp(2j * np.pi * k * f_d * cfg.symbol_period)
    a = steering_vector(theta, cfg)
    # aᵀ x[m, k] is a transmit beam gain per resource element
    tx_gain = X @ a
    return (e_m[:, None] * e_k[None, :] * tx_gain)[:, :, None] * a[None, None, :]


def atom(tau, f_d, theta, X: np.ndarray, cfg: SystemConfig) -> np.ndarray:
    return atom_tensor(tau, f_d, theta, X, cfg).reshape(-1)


def generate_symbols(cfg: SystemConfig, rng: np.random.Generator, repeat: bool = False) -> np.ndarray:
    """i.i.d. unit-modulus QPSK on every antenna and resource element.

    With `repeat` one symbol vector per subcarrier is drawn and sent on every
    OFDM symbol, so a stationary scatterer returns the same value each symbol.
    """
    if repeat:
        idx = rng.integers(0, 4, size=(cfg.n_subcarriers, 1, cfg.n_antennas))
        return np.repeat(QPSK[idx], cfg.n_symbols, axis=1)
    idx = rng.integers(0, 4, size=cfg.shape)
    return QPSK[idx]


def echo(targets, X: np.ndarray, cfg: SystemConfig) -> np.ndarray:
    """Noiseless superposition of the given scatterers as an [M, K, N] tensor."""
    _check_tx(X, cfg)
    out = np.zeros(cfg.shape, dtype=complex)
    for t in targets:
        out += t.b * atom_tensor(t.delay, t.doppler, t.angle, X, cfg)
    return out


def complex_noise(shape, noise_var: float, rng: np.random.Generator) -> np.ndarray:
    scale = np.sqrt(noise_var / 2)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def synthesize(scene: Scene, X: np.ndarray, cfg: SystemConfig, rng: np.random.Generator) -> ObservationBlock:
    rx = echo(list(scene.targets) + list(scene.clutter), X, cfg)
    if scene.noise_var > 0:
        rx = rx + complex_noise(cfg.shape, scene.noise_var, rng)
    return ObservationBlock(tx=X, rx=rx)


def mean_power(x: np.ndarray) -> float:
    return float(np.mean(np.abs(x) ** 2))


def noise_var_for_snr(snr_db: float, targets, X: np.ndarray, cfg: SystemConfig) -> float:
    """Noise variance giving the requested per-entry SNR over the target-only echo."""
    if len(targets) == 0:
        raise ValueError("SNR is undefined without targets")
    p_sig = mean_power(echo(targets, X, cfg))
    return p_sig / 10 ** (snr_db / 10)


def measured_snr_db(block: ObservationBlock, targets, cfg: SystemConfig) -> float:
    """Empirical SNR of a synthesized block given its target-only component."""
    clean = echo(targets, block.tx, cfg)
    return 10 * np.log10(mean_power(clean) / mean_power(block.rx - clean))
