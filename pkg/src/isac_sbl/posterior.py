"""Hierarchical gridless SBL model: likelihood, priors and tempered posterior.

The real parameter vector is laid out as

    [τ (Q), f_D (Q), θ (Q), Re b (Q), Im b (Q), ρ (Q), ξ]

so F = 6Q + 1. Delay, Doppler and angle carry truncated Gaussian priors,
b | ρ is zero-mean complex Gaussian with Gamma-distributed variances ρ, and
the noise precision ξ has a Gamma prior. All Gamma densities use the
shape/rate convention.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import gammaln, log_ndtr, ndtr

from ._kernels import batch_residual_power, prior_value_grad
from .waveform import SystemConfig, range_to_delay, velocity_to_doppler

OUTSIDE_SUPPORT = -np.inf


@dataclass(frozen=True)
class TruncatedGaussian:
    lo: float
    hi: float
    mu: float | None = None
    sigma: float | None = None

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")
        if self.mu is None:
            object.__setattr__(self, "mu", 0.5 * (self.lo + self.hi))
        if self.sigma is None:
            object.__setattr__(self, "sigma", 0.5 * (self.hi - self.lo))
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @cached_property
    def log_norm(self) -> float:
        # log(σ Z), Z = √(2π) (Φ(β) − Φ(α))
        a = (self.lo - self.mu) / self.sigma
        b = (self.hi - self.mu) / self.sigma
        mass = ndtr(b) - ndtr(a)
        if mass <= 0:
            mass = np.exp(log_ndtr(b)) - np.exp(log_ndtr(a))
        return math.log(self.sigma) + 0.5 * math.log(2 * math.pi) + math.log(mass)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.lo) & (x <= self.hi)
        val = -0.5 * ((x - self.mu) / self.sigma) ** 2 - self.log_norm
        return np.where(inside, val, -np.inf)

    def dlogpdf(self, x):
        return -(np.asarray(x) - self.mu) / self.sigma**2

    def sample(self, rng: np.random.Generator, size=None):
        from scipy.stats import truncnorm

        a = (self.lo - self.mu) / self.sigma
        b = (self.hi - self.mu) / self.sigma
        return truncnorm.rvs(a, b, loc=self.mu, scale=self.sigma, size=size, random_state=rng)


def gamma_logpdf(x, shape: float, rate: float):
    x = np.asarray(x, dtype=float)
    return shape * math.log(rate) - gammaln(shape) + (shape - 1) * np.log(x) - rate * x


@dataclass(frozen=True)
class PriorConfig:
    n_components: int
    delay: TruncatedGaussian
    doppler: TruncatedGaussian
    angle: TruncatedGaussian
    kappa_rho: float = 2.0
    chi_rho: float = 0.01
    kappa_xi: float = 3.0
    chi_xi: float = 0.01
    rho_bounds: tuple[float, float] = (1e-8, 1e4)
    xi_bounds: tuple[float, float] = (1e-8, 1e8)

    def __post_init__(self):
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        if self.kappa_rho <= 0 or self.chi_rho <= 0 or self.kappa_xi <= 0 or self.chi_xi <= 0:
            raise ValueError("Gamma hyperparameters must be positive")
        if not (0 < self.rho_bounds[0] < self.rho_bounds[1]):
            raise ValueError("invalid rho_bounds")
        if not (0 < self.xi_bounds[0] < self.xi_bounds[1]):
            raise ValueError("invalid xi_bounds")

    @classmethod
    def from_physical(
        cls,
        cfg: SystemConfig,
        n_components: int = 10,
        range_m=(45.0, 605.0),
        velocity_mps=(-35.0, 35.0),
        angle_deg=(-85.0, 85.0),
        **kw,
    ) -> "PriorConfig":
        return cls(
            n_components=n_components,
            delay=TruncatedGaussian(*map(float, range_to_delay(range_m))),
            doppler=TruncatedGaussian(*map(float, velocity_to_doppler(velocity_mps, cfg))),
            angle=TruncatedGaussian(*np.deg2rad(angle_deg).tolist()),
            **kw,
        )

    @property
    def dim(self) -> int:
        return 6 * self.n_components + 1

    def lower(self) -> np.ndarray:
        Q = self.n_components
        return np.concatenate([
            np.full(Q, self.delay.lo), np.full(Q, self.doppler.lo), np.full(Q, self.angle.lo),
            np.full(2 * Q, -np.inf), np.full(Q, self.rho_bounds[0]), [self.xi_bounds[0]],
        ])

    def upper(self) -> np.ndarray:
        Q = self.n_components
        return np.concatenate([
            np.full(Q, self.delay.hi), np.full(Q, self.doppler.hi), np.full(Q, self.angle.hi),
            np.full(2 * Q, np.inf), np.full(Q, self.rho_bounds[1]), [self.xi_bounds[1]],
        ])


@dataclass
class ParamState:
    """Sampling variables η; arrays have one entry per component slot."""

    tau: np.ndarray
    f_d: np.ndarray
    theta: np.ndarray
    b: np.ndarray
    rho: np.ndarray
    xi: float

    @property
    def n_components(self) -> int:
        return len(self.tau)

    def to_vector(self) -> np.ndarray:
        b = np.asarray(self.b, dtype=complex)
        return np.concatenate([self.tau, self.f_d, self.theta, b.real, b.imag, self.rho, [self.xi]]).astype(float)

    @classmethod
    def from_vector(cls, eta) -> "ParamState":
        eta = np.asarray(eta, dtype=float)
        if (eta.size - 1) % 6:
            raise ValueError(f"vector length {eta.size} is not 6Q+1")
        Q = (eta.size - 1) // 6
        s = lambda i: eta[i * Q:(i + 1) * Q].copy()
        return cls(s(0), s(1), s(2), s(3) + 1j * s(4), s(5), float(eta[-1]))


def split(eta: np.ndarray, Q: int):
    return (eta[:Q], eta[Q:2 * Q], eta[2 * Q:3 * Q], eta[3 * Q:4 * Q], eta[4 * Q:5 * Q], eta[5 * Q:6 * Q], eta[6 * Q])


@dataclass(frozen=True)
class MiniBatch:
    indices: np.ndarray
    values: np.ndarray
    n_total: int

    def __post_init__(self):
        idx = np.asarray(self.indices)
        if idx.size and (idx.min() < 0 or idx.max() >= self.n_total):
            raise ValueError("mini-batch index out of range")
        if np.unique(idx).size != idx.size:
            raise ValueError("mini-batch indices must be distinct")

    @property
    def size(self) -> int:
        return len(self.indices)

    @classmethod
    def full(cls, y) -> "MiniBatch":
        y = np.asarray(y).reshape(-1)
        return cls(np.arange(y.size), y, y.size)

    @classmethod
    def draw(cls, y, size: int, rng: np.random.Generator) -> "MiniBatch":
        y = np.asarray(y).reshape(-1)
        idx = rng.choice(y.size, size=size, replace=False)
        return cls(idx, y[idx], y.size)


def gamma_exponent(batch_size: int, n_total: int, upsilon: float) -> float:
    """Tempering exponent γ = υ ln B / ln H."""
    if batch_size < 1 or n_total < 2 or batch_size > n_total:
        raise ValueError(f"need 1 <= B <= H and H >= 2, got B={batch_size}, H={n_total}")
    return upsilon * math.log(batch_size) / math.log(n_total)


class GridlessModel:
    """Likelihood and prior evaluation for one observation block.

    Derivatives are taken analytically; evaluation over a subset of the
    data is the hot path of the sampler, so everything is vectorized over
    (batch element, component).
    """

    def __init__(self, y, X: np.ndarray, cfg: SystemConfig, prior: PriorConfig, centered: bool = False):
        self.cfg = cfg
        self.prior = prior
        self.y = np.asarray(y, dtype=complex).reshape(-1)
        if self.y.size != cfg.n_obs:
            raise ValueError(f"observation has {self.y.size} entries, expected {cfg.n_obs}")
        if X.shape != cfg.shape:
            raise ValueError(f"tx tensor has shape {X.shape}, expected {cfg.shape}")
        self.X = X
        M, K, N = cfg.shape
        H = cfg.n_obs
        i = np.arange(H)
        self.m_idx = i // (K * N)
        self.k_idx = (i // N) % K
        self.n_idx = i % N
        self.tx_rows = X.reshape(M * K, N)
        self.re_idx = i // N
        self._n = np.arange(N)
        self._lo = prior.lower()
        self._hi = prior.upper()
        self._w_sub = 2 * np.pi * cfg.subcarrier_hz
        self._w_sym = 2 * np.pi * cfg.symbol_period
        self._grad_buf = np.zeros(5 * prior.n_components)
        # centering moves the phase reference of b to the middle of the block
        self.origin = np.array([(M - 1) / 2, (K - 1) / 2, (N - 1) / 2]) if centered else np.zeros(3)
        tgs = (prior.delay, prior.doppler, prior.angle)
        self._tg = (
            np.array([t.mu for t in tgs]),
            np.array([t.sigma for t in tgs]),
            np.array([t.log_norm for t in tgs]),
        )
        self._gamma_consts = np.array([
            prior.kappa_rho, prior.chi_rho, prior.kappa_rho * math.log(prior.chi_rho) - gammaln(prior.kappa_rho),
            prior.kappa_xi, prior.chi_xi, prior.kappa_xi * math.log(prior.chi_xi) - gammaln(prior.kappa_xi),
        ])

    @property
    def n_obs(self) -> int:
        return self.y.size

    def _atoms(self, idx, tau, f_d, theta, with_grad: bool):
        cfg = self.cfg
        m0, k0, n0 = self.origin
        m = self.m_idx[idx][:, None] - m0
        k = self.k_idx[idx][:, None] - k0
        n = self.n_idx[idx][:, None] - n0
        w_m = 2 * np.pi * cfg.subcarrier_hz * m
        w_k = 2 * np.pi * cfg.symbol_period * k
        ph = np.pi * np.sin(theta)  # 2π (d/λ) sin θ
        nn = self._n - n0
        A = np.exp(1j * np.outer(ph, nn))  # Q x N
        xr = self.tx_rows[self.re_idx[idx]]  # B x N
        s = xr @ A.T  # B x Q, transmit gain aᵀx
        delay_dopp = np.exp(1j * (w_k * f_d[None, :] - w_m * tau[None, :]))
        a_n = np.exp(1j * n * ph[None, :])
        phi = delay_dopp * a_n * s
        if not with_grad:
            return phi, None
        dph = np.pi * np.cos(theta)
        ds = xr @ (A * (1j * nn[None, :] * dph[:, None])).T
        dphi_dtheta = delay_dopp * a_n * (1j * n * dph[None, :] * s + ds)
        return phi, (w_m, w_k, dphi_dtheta)

    def canonical_gain(self, b, tau, f_d, theta):
        """Map gains referenced to `origin` back to the index-zero reference."""
        m0, k0, n0 = self.origin
        cfg = self.cfg
        psi = (2 * np.pi * cfg.subcarrier_hz * m0 * np.asarray(tau)
               - 2 * np.pi * cfg.symbol_period * k0 * np.asarray(f_d)
               - 2 * np.pi * np.sin(theta) * n0)
        return np.asarray(b) * np.exp(1j * psi)

    def centered_gain(self, b, tau, f_d, theta):
        return np.asarray(b) / self.canonical_gain(np.ones_like(np.asarray(b)), tau, f_d, theta)

    def residual(self, eta, idx=None):
        Q = self.prior.n_components
        tau, f_d, theta, b_re, b_im, _, _ = split(eta, Q)
        if idx is None:
            idx = np.arange(self.n_obs)
        phi, _ = self._atoms(idx, tau, f_d, theta, False)
        return self.y[idx] - phi @ (b_re + 1j * b_im)

    def loglik_terms(self, eta, idx=None):
        """Per-datum log p(y_i | η)."""
        xi = eta[-1]
        r = self.residual(eta, idx)
        return math.log(xi / math.pi) - xi * np.abs(r) ** 2

    def log_likelihood(self, eta) -> float:
        return float(np.sum(self.loglik_terms(eta)))

    def in_support(self, eta) -> bool:
        return in_support(eta, self.prior)

    def log_prior(self, eta) -> float:
        return log_prior(eta, self.prior)

    def grad_log_prior(self, eta) -> np.ndarray:
        return grad_log_prior(eta, self.prior)

    def tempered(self, eta, idx, scale: float, with_grad: bool = False):
        """scale · Σ_batch log p(y_i|η) + log p(η), optionally with its gradient.

        `scale` is H^γ / B for a mini-batch of size B.
        """
        eta = np.asarray(eta, dtype=float)
        if np.any(eta < self._lo) or np.any(eta > self._hi):
            if with_grad:
                raise ValueError("gradient requested outside the prior support")
            return OUTSIDE_SUPPORT
        Q = self.prior.n_components
        tau, f_d, theta, b_re, b_im, _, xi = split(eta, Q)
        b = b_re + 1j * b_im
        idx = np.asarray(idx, dtype=np.int64)
        grad = self._grad_buf
        sq = batch_residual_power(
            self.y, self.tx_rows, self.re_idx, self.m_idx, self.k_idx, self.n_idx, idx,
            tau, f_d, theta, b, self._w_sub, self._w_sym, self.origin, with_grad, grad,
        )
        g = np.empty_like(eta)
        lp = prior_value_grad(eta, Q, *self._tg, self._gamma_consts, with_grad, g)
        value = scale * (idx.size * math.log(xi / math.pi) - xi * sq) + lp
        if not with_grad:
            return value
        if np.any(eta[:3 * Q] <= self._lo[:3 * Q]) or np.any(eta[:3 * Q] >= self._hi[:3 * Q]):
            raise ValueError("gradient of the truncated prior is undefined on the boundary")
        g[:5 * Q] += 2 * xi * scale * grad
        g[-1] += scale * (idx.size / xi - sq)
        return value, g


# Functional surface ---------------------------------------------------------

def _as_vector(eta) -> np.ndarray:
    return eta.to_vector() if isinstance(eta, ParamState) else np.asarray(eta, dtype=float)


def log_likelihood(eta, y, X, cfg: SystemConfig, prior: PriorConfig | None = None) -> float:
    """H log(ξ/π) − ξ ‖y − D b‖² over the full block."""
    eta = _as_vector(eta)
    if prior is None:
        prior = _loose_prior(cfg, (eta.size - 1) // 6)
    return GridlessModel(y, X, cfg, prior).log_likelihood(eta)


def in_support(eta, prior: PriorConfig) -> bool:
    eta = _as_vector(eta)
    return bool(np.all(eta >= prior.lower()) and np.all(eta <= prior.upper()))


def log_prior(eta, prior: PriorConfig, checked: bool = False) -> float:
    """Joint log prior; OUTSIDE_SUPPORT (−inf) when any bound is violated."""
    eta = _as_vector(eta)
    if not checked and not in_support(eta, prior):
        return OUTSIDE_SUPPORT
    Q = prior.n_components
    tau, f_d, theta, b_re, b_im, rho, xi = split(eta, Q)
    lp = float(gamma_logpdf(xi, prior.kappa_xi, prior.chi_xi))
    lp += float(np.sum(-np.log(np.pi * rho) - (b_re**2 + b_im**2) / rho))
    lp += float(np.sum(gamma_logpdf(rho, prior.kappa_rho, prior.chi_rho)))
    lp += float(np.sum(prior.delay.logpdf(tau)) + np.sum(prior.doppler.logpdf(f_d)) + np.sum(prior.angle.logpdf(theta)))
    return lp


def grad_log_prior(eta, prior: PriorConfig) -> np.ndarray:
    eta = _as_vector(eta)
    Q = prior.n_components
    tau, f_d, theta, b_re, b_im, rho, xi = split(eta, Q)
    g = np.empty_like(eta)
    g[:Q] = prior.delay.dlogpdf(tau)
    g[Q:2 * Q] = prior.doppler.dlogpdf(f_d)
    g[2 * Q:3 * Q] = prior.angle.dlogpdf(theta)
    g[3 * Q:4 * Q] = -2 * b_re / rho
    g[4 * Q:5 * Q] = -2 * b_im / rho
    g[5 * Q:6 * Q] = -1 / rho + (b_re**2 + b_im**2) / rho**2 + (prior.kappa_rho - 1) / rho - prior.chi_rho
    g[-1] = (prior.kappa_xi - 1) / xi - prior.chi_xi
    return g


def tempered_logpost(eta, batch: MiniBatch, prior: PriorConfig, X, cfg: SystemConfig, gamma: float, y=None) -> float:
    model = _batch_model(batch, X, cfg, prior, y)
    scale = batch.n_total**gamma / batch.size
    return model.tempered(_as_vector(eta), np.asarray(batch.indices), scale)


def grad_tempered(eta, batch: MiniBatch, prior: PriorConfig, X, cfg: SystemConfig, gamma: float, y=None) -> np.ndarray:
    model = _batch_model(batch, X, cfg, prior, y)
    scale = batch.n_total**gamma / batch.size
    return model.tempered(_as_vector(eta), np.asarray(batch.indices), scale, with_grad=True)[1]


def _batch_model(batch: MiniBatch, X, cfg, prior, y):
    if y is None:
        # only the batch entries are read
        y = np.zeros(cfg.n_obs, dtype=complex)
        y[np.asarray(batch.indices)] = batch.values
    return GridlessModel(y, X, cfg, prior)


def _loose_prior(cfg: SystemConfig, Q: int) -> PriorConfig:
    big = 1e6
    return PriorConfig(Q, TruncatedGaussian(-big, big), TruncatedGaussian(-big, big), TruncatedGaussian(-big, big))
