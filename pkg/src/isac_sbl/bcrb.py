"""Bayesian Cramér-Rao bound for the gridless model.

Real parameters per target are ordered as blocks

    ζ = [b_R (L), b_I (L), τ (L), f_D (L), θ (L), ξ]

The data information is I_C = 2ξ Re{Jᴴ J} for the stacked observation
Jacobian J, with [I_C]_{ξξ} = MKN/ξ² and no ξ cross terms. The Bayesian
information averages I_C over prior draws and adds the diagonal prior
information I_P.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .posterior import PriorConfig
from .waveform import SPEED_OF_LIGHT, SystemConfig, Target, steering_vector

BLOCKS = ("b_re", "b_im", "tau", "f_d", "theta")


@dataclass
class FimBlock:
    matrix: np.ndarray
    labels: list[str]

    @property
    def n_targets(self) -> int:
        return (self.matrix.shape[0] - 1) // 5


@dataclass
class BcrbReport:
    """Square-root bounds per target in metres, m/s and radians."""

    range_m: np.ndarray
    velocity_mps: np.ndarray
    angle_rad: np.ndarray
    trace: float
    n_draws: int
    covariance: np.ndarray

    def rms(self) -> tuple[float, float, float]:
        """Bounds pooled over targets, comparable to an RMSE over matched pairs."""
        return tuple(float(np.sqrt(np.mean(np.square(a)))) for a in (self.range_m, self.velocity_mps, self.angle_rad))


def labels_for(L: int) -> list[str]:
    return [f"{name}[{l}]" for name in BLOCKS for l in range(L)] + ["xi"]


def channel_derivatives(target: Target, m: int, k: int, cfg: SystemConfig) -> np.ndarray:
    """Derivatives of h_r = vec(b ω a aᵀ) with respect to (b_R, b_I, τ, f_D, θ).

    Returns an [N², 5] complex matrix. The angle column uses
    D_sum = D⊗I + I⊗D with D = diag(jπ n cos θ).
    """
    N = cfg.n_antennas
    a = steering_vector(target.angle, cfg)
    aa = np.kron(a, a)
    omega = np.exp(-2j * np.pi * m * cfg.subcarrier_hz * target.delay) * np.exp(
        2j * np.pi * target.doppler * k * cfg.symbol_period)
    d = 1j * 2 * np.pi * cfg.spacing_ratio * np.arange(N) * np.cos(target.angle)
    d_sum = np.add.outer(d, d).reshape(-1)  # diagonal of D⊗I + I⊗D
    h = omega * aa
    cols = [
        h,
        1j * h,
        target.b * (-2j * np.pi * m * cfg.subcarrier_hz) * h,
        target.b * (2j * np.pi * k * cfg.symbol_period) * h,
        target.b * d_sum * h,
    ]
    return np.stack(cols, axis=1)


def observation_jacobian(targets, X: np.ndarray, cfg: SystemConfig) -> np.ndarray:
    """∂y/∂ζ over all resource elements, [MKN, 5L], columns in block order."""
    M, K, N = cfg.shape
    m = np.arange(M)[:, None, None]
    k = np.arange(K)[None, :, None]
    n = np.arange(N)
    L = len(targets)
    J = np.empty((M * K * N, 5 * L), dtype=complex)
    for l, t in enumerate(targets):
        a = steering_vector(t.angle, cfg)
        da = 1j * 2 * np.pi * cfg.spacing_ratio * np.cos(t.angle) * n * a
        s = X @ a
        ds = X @ da
        omega = np.exp(-2j * np.pi * m * cfg.subcarrier_hz * t.delay) * np.exp(
            2j * np.pi * t.doppler * k * cfg.symbol_period)
        phi = omega * s[:, :, None] * a
        dphi = omega * (s[:, :, None] * da + ds[:, :, None] * a)
        J[:, l] = phi.reshape(-1)
        J[:, L + l] = 1j * phi.reshape(-1)
        J[:, 2 * L + l] = (t.b * (-2j * np.pi * cfg.subcarrier_hz) * m * phi).reshape(-1)
        J[:, 3 * L + l] = (t.b * (2j * np.pi * cfg.symbol_period) * k * phi).reshape(-1)
        J[:, 4 * L + l] = (t.b * dphi).reshape(-1)
    return J


def classical_fim(targets, X: np.ndarray, xi: float, cfg: SystemConfig) -> FimBlock:
    if xi <= 0:
        raise ValueError("xi must be positive")
    L = len(targets)
    J = observation_jacobian(targets, X, cfg)
    F = np.zeros((5 * L + 1, 5 * L + 1))
    F[:-1, :-1] = 2 * xi * (J.conj().T @ J).real
    F[-1, -1] = cfg.n_obs / xi**2
    return FimBlock(F, labels_for(L))


def prior_fim(prior: PriorConfig, L: int) -> FimBlock:
    if prior.kappa_rho <= 1:
        raise ValueError("prior information on b needs kappa_rho > 1")
    if prior.kappa_xi <= 2:
        raise ValueError("prior information on xi needs kappa_xi > 2")
    b_info = 2 * prior.chi_rho / (prior.kappa_rho - 1)
    diag = np.concatenate([
        np.full(2 * L, b_info),
        np.full(L, 1 / prior.delay.sigma**2),
        np.full(L, 1 / prior.doppler.sigma**2),
        np.full(L, 1 / prior.angle.sigma**2),
        [prior.chi_xi**2 / (prior.kappa_xi - 2)],
    ])
    return FimBlock(np.diag(diag), labels_for(L))


def prior_draw(prior: PriorConfig, L: int, rng: np.random.Generator) -> tuple[list[Target], float]:
    """Targets and ξ from the hierarchical prior (ρ first, then b | ρ)."""
    rho = rng.gamma(prior.kappa_rho, 1 / prior.chi_rho, L)
    b = np.sqrt(rho / 2) * (rng.standard_normal(L) + 1j * rng.standard_normal(L))
    tau = prior.delay.sample(rng, L)
    f_d = prior.doppler.sample(rng, L)
    theta = prior.angle.sample(rng, L)
    xi = float(rng.gamma(prior.kappa_xi, 1 / prior.chi_xi))
    return [Target(complex(b[l]), float(tau[l]), float(f_d[l]), float(theta[l])) for l in range(L)], xi


def bound_from_information(info: np.ndarray, cfg: SystemConfig, L: int, n_draws: int) -> BcrbReport:
    # equilibrate first; the parameters live on wildly different unit scales
    s = 1 / np.sqrt(np.diag(info))
    scaled = info * np.outer(s, s)
    cond = np.linalg.cond(scaled)
    if not np.isfinite(cond) or cond > 1e13:
        raise np.linalg.LinAlgError(f"Bayesian information is singular (condition number {cond:.3g})")
    C = np.linalg.inv(scaled) * np.outer(s, s)
    C = 0.5 * (C + C.T)
    d = np.diag(C)
    return BcrbReport(
        range_m=SPEED_OF_LIGHT / 2 * np.sqrt(d[2 * L:3 * L]),
        velocity_mps=cfg.wavelength / 2 * np.sqrt(d[3 * L:4 * L]),
        angle_rad=np.sqrt(d[4 * L:5 * L]),
        trace=float(np.trace(C)),
        n_draws=n_draws,
        covariance=C,
    )


def bcrb_monte_carlo(prior: PriorConfig, X: np.ndarray, cfg: SystemConfig, n_draws: int,
                     rng: np.random.Generator, n_targets: int = 1, draw=None) -> BcrbReport:
    """Monte Carlo Bayesian information (1/S) Σ I_C(ζ_s) + I_P and its inverse.

    `draw(rng) -> (targets, ξ)` replaces the prior draw, e.g. to condition on a
    scenario's amplitude law and SNR.
    """
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    L = n_targets
    acc = np.zeros((5 * L + 1, 5 * L + 1))
    for _ in range(n_draws):
        targets, xi = draw(rng) if draw is not None else prior_draw(prior, L, rng)
        if len(targets) != L:
            raise ValueError(f"draw produced {len(targets)} targets, expected {L}")
        acc += classical_fim(targets, X, xi, cfg).matrix
    info = acc / n_draws + prior_fim(prior, L).matrix
    return bound_from_information(info, cfg, L, n_draws)


def scene_crb(targets, X: np.ndarray, xi: float, cfg: SystemConfig, prior: PriorConfig | None = None) -> BcrbReport:
    """Bound for one fixed scene; with a prior the diagonal prior information is added."""
    info = classical_fim(targets, X, xi, cfg).matrix
    if prior is not None:
        info = info + prior_fim(prior, len(targets)).matrix
    return bound_from_information(info, cfg, len(targets), 1)
