"""Near-zero-Doppler clutter and its recursive background subtraction."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .waveform import SystemConfig, Target, echo, mean_power

REFERENCE_RANGE_M = 50.0


def radar_amplitude(range_m, reference_m: float = REFERENCE_RANGE_M):
    """|b| ∝ 1/r², normalized to one at the reference range."""
    return (reference_m / np.asarray(range_m, dtype=float)) ** 2


@dataclass(frozen=True)
class ClutterConfig:
    count_range: tuple[int, int] = (10, 15)
    velocity_mps: tuple[float, float] = (-1.0, 1.0)
    range_m: tuple[float, float] = (50.0, 600.0)
    angle_deg: tuple[float, float] = (-80.0, 80.0)
    # amplitude multiplier over a reference target at the same range
    gain: float = 10.0
    alpha: float = 0.9
    transient_symbols: int = 30

    def __post_init__(self):
        lo, hi = self.count_range
        if not 0 <= lo <= hi:
            raise ValueError("count_range must satisfy 0 <= min <= max")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.velocity_mps[0] > self.velocity_mps[1]:
            raise ValueError("velocity band must be increasing")
        if self.transient_symbols < 0:
            raise ValueError("transient_symbols must be >= 0")

    def check(self, cfg: SystemConfig) -> None:
        v_max = cfg.wavelength / (4 * cfg.symbol_period)
        if max(abs(v) for v in self.velocity_mps) >= v_max:
            raise ValueError(f"clutter velocities exceed the unambiguous range ±{v_max:.3g} m/s")


def generate_clutter(cc: ClutterConfig, cfg: SystemConfig, rng: np.random.Generator) -> list[Target]:
    cc.check(cfg)
    n = int(rng.integers(cc.count_range[0], cc.count_range[1] + 1))
    r = rng.uniform(*cc.range_m, n)
    v = rng.uniform(*cc.velocity_mps, n)
    th = np.deg2rad(rng.uniform(*cc.angle_deg, n))
    phase = rng.uniform(0, 2 * np.pi, n)
    amp = cc.gain * radar_amplitude(r)
    return [Target.from_physical(amp[i] * np.exp(1j * phase[i]), r[i], v[i], th[i], cfg) for i in range(n)]


def suppress(Y: np.ndarray, alpha: float = 0.9, transient_symbols: int = 30):
    """Subtract a recursively averaged background along the symbol axis.

    For every (subcarrier, antenna) stream B_k = α B_{k−1} + (1−α) Y_k with
    B_0 = Y_0, and the output is Y_k − B_{k−1} (zero at k = 0). Input is
    shaped [M, K, N]; returns (filtered tensor, first usable symbol index).
    """
    Y = np.asarray(Y)
    if Y.ndim != 3:
        raise ValueError("expected an [M, K, N] tensor")
    K = Y.shape[1]
    if K <= transient_symbols:
        raise ValueError(f"need more than {transient_symbols} symbols, got {K}")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    zi = (alpha * Y[:, :1, :])
    background, _ = lfilter([1 - alpha], [1, -alpha], Y, axis=1, zi=zi)
    out = np.empty_like(Y, dtype=np.result_type(Y, float))
    out[:, 0, :] = 0
    out[:, 1:, :] = Y[:, 1:, :] - background[:, :-1, :]
    return out, transient_symbols


def filter_response(f_d, cfg: SystemConfig, alpha: float = 0.9):
    """Steady-state complex gain of the suppression filter at Doppler f_D."""
    z = np.exp(1j * 2 * np.pi * np.asarray(f_d) * cfg.symbol_period)
    return (1 - 1 / z) / (1 - alpha / z)


def scnr(targets, clutter, noise_var: float, X: np.ndarray, cfg: SystemConfig) -> float:
    """10 log10(P_target / (P_clutter + σ²)) with per-entry mean powers."""
    if len(targets) == 0:
        raise ValueError("SCNR is undefined without targets")
    p_t = mean_power(echo(targets, X, cfg))
    p_c = mean_power(echo(clutter, X, cfg)) if len(clutter) else 0.0
    return float(10 * np.log10(p_t / (p_c + noise_var)))


def scale_to_scnr(targets, clutter, noise_var: float, scnr_db: float, X: np.ndarray, cfg: SystemConfig):
    """Rescale clutter gains by a common factor so the scene hits `scnr_db`."""
    p_t = mean_power(echo(targets, X, cfg))
    p_c = mean_power(echo(clutter, X, cfg))
    need = p_t / 10 ** (scnr_db / 10) - noise_var
    if need <= 0 or p_c <= 0:
        raise ValueError("noise alone already exceeds the requested clutter-plus-noise power")
    k = np.sqrt(need / p_c)
    return [Target(t.b * k, t.delay, t.doppler, t.angle) for t in clutter]
