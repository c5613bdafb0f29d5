"""Grid-based reference estimators: matched-filter periodogram and OMP.

Correlations against the space-time atoms are evaluated separably. For a
fixed angle the transmit gain s[m, k] = a(θ)ᵀx[m, k] and the antenna-combined
data z[m, k] = a(θ)ᴴ Y[m, k, :] reduce the problem to a 2D delay-Doppler
transform, so the full dictionary is never materialized.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter

from .detector import DetectionResult, Estimate
from .posterior import PriorConfig
from .waveform import (
    SPEED_OF_LIGHT, SystemConfig, atom, delay_to_range, doppler_to_velocity, steering_vector,
)


def rayleigh_cells(cfg: SystemConfig) -> tuple[float, float, float]:
    """Matched-filter resolution (Δr [m], Δv [m/s], Δθ [rad])."""
    dr = SPEED_OF_LIGHT / (2 * cfg.n_subcarriers * cfg.subcarrier_hz)
    dv = cfg.wavelength / (2 * cfg.n_symbols * cfg.symbol_period)
    aperture = cfg.wavelength * (cfg.n_antennas - 1) / 2
    dtheta = 0.886 * cfg.wavelength / aperture
    return dr, dv, dtheta


def delay_cell(cfg: SystemConfig) -> float:
    return 1.0 / (cfg.n_subcarriers * cfg.subcarrier_hz)


def doppler_cell(cfg: SystemConfig) -> float:
    return 1.0 / (cfg.n_symbols * cfg.symbol_period)


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid over delay [s], Doppler [Hz] and angle [rad]."""

    delay: tuple[float, float, int]
    doppler: tuple[float, float, int]
    angle: tuple[float, float, int]

    def __post_init__(self):
        for name in ("delay", "doppler", "angle"):
            lo, hi, n = getattr(self, name)
            if n < 1:
                raise ValueError(f"{name} grid needs at least one point")
            if n > 1 and not lo < hi:
                raise ValueError(f"{name} grid bounds must be increasing")

    @staticmethod
    def _axis(lo, hi, n):
        return np.linspace(lo, hi, n) if n > 1 else np.array([0.5 * (lo + hi)])

    @property
    def taus(self):
        return self._axis(*self.delay)

    @property
    def dopplers(self):
        return self._axis(*self.doppler)

    @property
    def angles(self):
        return self._axis(*self.angle)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.delay[2], self.doppler[2], self.angle[2])

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def point(self, index) -> tuple[float, float, float]:
        i, j, k = index
        return float(self.taus[i]), float(self.dopplers[j]), float(self.angles[k])

    @classmethod
    def for_prior(cls, prior: PriorConfig, cfg: SystemConfig, points_per_cell: int = 1) -> "GridSpec":
        """Grid covering the prior support with the given density per Rayleigh cell."""
        _, _, dtheta = rayleigh_cells(cfg)
        cells = (delay_cell(cfg), doppler_cell(cfg), dtheta)
        axes = []
        for tg, cell in zip((prior.delay, prior.doppler, prior.angle), cells):
            n = max(1, int(np.ceil(tg.width / cell * points_per_cell)) + 1)
            axes.append((tg.lo, tg.hi, n))
        return cls(*axes)


def _angle_terms(Y, X, theta_grid, cfg):
    """Per-angle transmit gain s[g, m, k] and combined data z[g, m, k]."""
    A = steering_vector(theta_grid, cfg)  # G x N
    s = np.einsum("mkn,gn->gmk", X, A)
    z = np.einsum("mkn,gn->gmk", Y, A.conj())
    return s, z


def correlation_map(y, X, cfg: SystemConfig, grid: GridSpec) -> np.ndarray:
    """|⟨atom(g), y⟩|² / ‖atom(g)‖² for every grid point, shaped like the grid."""
    if grid.size == 0:
        raise ValueError("empty grid")
    Y = np.asarray(y).reshape(cfg.shape)
    m = np.arange(cfg.n_subcarriers)
    k = np.arange(cfg.n_symbols)
    Em = np.exp(2j * np.pi * cfg.subcarrier_hz * np.outer(grid.taus, m))  # P_τ x M
    Ek = np.exp(-2j * np.pi * cfg.symbol_period * np.outer(grid.dopplers, k))  # P_f x K
    s, z = _angle_terms(Y, X, grid.angles, cfg)
    c = s.conj() * z
    corr = np.einsum("pm,gmk,qk->pqg", Em, c, Ek, optimize=True)
    norm = cfg.n_antennas * np.sum(np.abs(s) ** 2, axis=(1, 2))
    return np.abs(corr) ** 2 / norm[None, None, :]


@dataclass
class Peak:
    index: tuple[int, int, int]
    delay: float
    doppler: float
    angle: float
    power: float


def periodogram(y, X, cfg: SystemConfig, grid: GridSpec, rel_floor: float = 0.1, max_peaks: int | None = None):
    """Matched-filter power map and its peaks after one-cell non-maximum suppression.

    Peaks weaker than `rel_floor` times the global maximum are dropped.
    """
    pmap = correlation_map(y, X, cfg, grid)
    _, _, dtheta = rayleigh_cells(cfg)
    cells = (delay_cell(cfg), doppler_cell(cfg), dtheta)
    size = []
    for (lo, hi, n), cell in zip((grid.delay, grid.doppler, grid.angle), cells):
        step = (hi - lo) / (n - 1) if n > 1 else np.inf
        size.append(2 * int(np.floor(cell / step)) + 1 if np.isfinite(step) else 1)
    local_max = pmap == maximum_filter(pmap, size=size, mode="nearest")
    keep = local_max & (pmap >= rel_floor * pmap.max())
    idx = np.argwhere(keep)
    order = np.argsort(-pmap[keep], kind="stable")
    peaks = []
    for i in order[:max_peaks]:
        ijk = tuple(int(v) for v in idx[i])
        peaks.append(Peak(ijk, *grid.point(ijk), float(pmap[ijk])))
    return pmap, peaks


def omp(y, X, cfg: SystemConfig, grid: GridSpec, max_targets: int | None = None,
        residual_tol: float | None = None) -> DetectionResult:
    """Orthogonal matching pursuit over the grid dictionary.

    Stops after `max_targets` atoms or once ‖r‖² ≤ residual_tol·‖y‖².
    """
    if max_targets is None and residual_tol is None:
        raise ValueError("set max_targets or residual_tol")
    if grid.size == 0:
        raise ValueError("empty grid")
    y = np.asarray(y, dtype=complex).reshape(-1)
    limit = grid.size if max_targets is None else min(max_targets, grid.size)
    tol = -1.0 if residual_tol is None else residual_tol * np.vdot(y, y).real
    selected: list[tuple[int, int, int]] = []
    atoms: list[np.ndarray] = []
    r = y.copy()
    coef = np.zeros(0, dtype=complex)
    while len(selected) < limit and np.vdot(r, r).real > tol:
        pmap = correlation_map(r, X, cfg, grid)
        for ijk in selected:
            pmap[ijk] = -1.0
        ijk = tuple(int(v) for v in np.unravel_index(np.argmax(pmap), pmap.shape))
        selected.append(ijk)
        atoms.append(atom(*grid.point(ijk), X, cfg))
        D = np.stack(atoms, axis=1)
        coef = np.linalg.lstsq(D, y, rcond=None)[0]
        r = y - D @ coef
    estimates = []
    for ijk, b in zip(selected, coef):
        tau, fd, th = grid.point(ijk)
        estimates.append(Estimate(float(delay_to_range(tau)), float(doppler_to_velocity(fd, cfg)), th, complex(b)))
    return DetectionResult(list(range(len(selected))), estimates, selected, float(np.vdot(r, r).real))
