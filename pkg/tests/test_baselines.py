import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isac_sbl.baselines import GridSpec, correlation_map, omp, periodogram, rayleigh_cells
from isac_sbl.posterior import PriorConfig
from isac_sbl.waveform import (
    SPEED_OF_LIGHT, Scene, SystemConfig, Target, atom, delay_to_range, generate_symbols, synthesize,
)

CFG = SystemConfig(n_antennas=4, n_subcarriers=16, n_symbols=8)
GRID = GridSpec((0.5e-6, 3e-6, 11), (-4000.0, 4000.0, 9), (-0.8, 0.8, 7))


def on_grid(grid, ijk, b=1.0 + 0j):
    return Target(b, *grid.point(ijk))


def test_rayleigh_cells_table_config():
    cfg = SystemConfig()
    dr, dv, dth = rayleigh_cells(cfg)
    assert 9.5 <= dr <= 10.5 and 29 <= dv <= 35 and 14 <= np.rad2deg(dth) <= 15
    assert dr == pytest.approx(SPEED_OF_LIGHT / (2 * 128 * 120e3))
    assert dv == pytest.approx(cfg.wavelength / (2 * 14 * cfg.symbol_period))
    assert dth == pytest.approx(0.886 * 2 / 7)


def test_correlation_map_brute_force():
    rng = np.random.default_rng(0)
    X = generate_symbols(CFG, rng)
    y = rng.normal(size=CFG.n_obs) + 1j * rng.normal(size=CFG.n_obs)
    grid = GridSpec((1e-6, 2e-6, 3), (-1000.0, 1000.0, 2), (-0.3, 0.4, 2))
    pmap = correlation_map(y, X, CFG, grid)
    for ijk in np.ndindex(grid.shape):
        a = atom(*grid.point(ijk), X, CFG)
        assert pmap[ijk] == pytest.approx(abs(np.vdot(a, y)) ** 2 / np.vdot(a, a).real, rel=1e-9)


def test_grid_validation_and_prior_grid():
    with pytest.raises(ValueError):
        GridSpec((1.0, 0.0, 3), (0, 1, 2), (0, 1, 2))
    with pytest.raises(ValueError):
        GridSpec((0, 1, 0), (0, 1, 2), (0, 1, 2))
    prior = PriorConfig.from_physical(CFG, n_components=2)
    g = GridSpec.for_prior(prior, CFG, 2)
    assert g.taus[0] == prior.delay.lo and g.taus[-1] == prior.delay.hi
    assert np.diff(g.taus).max() <= 1 / (CFG.n_subcarriers * CFG.subcarrier_hz) / 2 + 1e-18


def test_omp_single_on_grid_exact():
    X = generate_symbols(CFG, np.random.default_rng(1))
    ijk = (4, 6, 2)
    t = on_grid(GRID, ijk, 0.6 - 0.3j)
    y = synthesize(Scene([t], [], 0.0), X, CFG, np.random.default_rng(0)).vector()
    det = omp(y, X, CFG, GRID, max_targets=1)
    assert det.grid_indices == [ijk]
    assert abs(det.estimates[0].gain - t.b) < 1e-8
    assert det.residual_energy < 1e-20 * np.vdot(y, y).real


def test_omp_two_on_grid_targets_and_monotone_residual():
    X = generate_symbols(CFG, np.random.default_rng(2))
    truth = [on_grid(GRID, (2, 1, 5), 1.0), on_grid(GRID, (8, 7, 1), -0.4 + 0.8j)]
    y = synthesize(Scene(truth, [], 0.0), X, CFG, np.random.default_rng(0)).vector()
    # exhaustive oracle: the first pick is the largest normalized correlation over the grid
    best = max(np.ndindex(GRID.shape), key=lambda g: abs(np.vdot(atom(*GRID.point(g), X, CFG), y)) ** 2
               / np.vdot(atom(*GRID.point(g), X, CFG), atom(*GRID.point(g), X, CFG)).real)
    det = omp(y, X, CFG, GRID, residual_tol=1e-20)
    assert det.grid_indices[0] == best
    assert sorted(det.grid_indices) == [(2, 1, 5), (8, 7, 1)]
    gains = dict(zip(det.grid_indices, [e.gain for e in det.estimates]))
    assert abs(gains[(2, 1, 5)] - 1.0) < 1e-8 and abs(gains[(8, 7, 1)] - (-0.4 + 0.8j)) < 1e-8
    rng = np.random.default_rng(3)
    noisy = y + 0.3 * (rng.normal(size=y.size) + 1j * rng.normal(size=y.size))
    res = [omp(noisy, X, CFG, GRID, max_targets=n).residual_energy for n in range(1, 6)]
    assert all(b <= a + 1e-9 for a, b in zip(res, res[1:]))


def test_omp_requires_stop_rule():
    X = generate_symbols(CFG, np.random.default_rng(4))
    with pytest.raises(ValueError):
        omp(np.zeros(CFG.n_obs), X, CFG, GRID)


def test_omp_off_grid_quantization():
    X = generate_symbols(CFG, np.random.default_rng(5))
    grid = GridSpec((1e-6, 2e-6, 11), (0.0, 0.0, 1), (0.0, 0.0, 1))
    step = 1e-7
    t = Target(1.0, 1.3e-6 + step / 2 * 0.98, 0.0, 0.0)  # just short of midway
    y = synthesize(Scene([t], [], 0.0), X, CFG, np.random.default_rng(0)).vector()
    det = omp(y, X, CFG, grid, max_targets=1)
    err = abs(det.estimates[0].range - t.range)
    half = delay_to_range(step / 2)
    assert 0.9 * half <= err <= half


def test_periodogram_peak_at_nearest_point_and_phase_invariant():
    X = generate_symbols(CFG, np.random.default_rng(6))
    t = Target(1.0, GRID.point((5, 4, 3))[0] + 1e-8, GRID.point((5, 4, 3))[1] + 50.0, GRID.point((5, 4, 3))[2] + 0.01)
    y = synthesize(Scene([t], [], 0.0), X, CFG, np.random.default_rng(0)).vector()
    pmap, peaks = periodogram(y, X, CFG, GRID)
    assert peaks[0].index == (5, 4, 3)
    for phi in (0.7, 2.0):
        assert periodogram(np.exp(1j * phi) * y, X, CFG, GRID)[1][0].index == (5, 4, 3)


def test_periodogram_merges_half_cell_separation():
    cfg = SystemConfig(n_antennas=4, n_subcarriers=64, n_symbols=8)
    X = generate_symbols(cfg, np.random.default_rng(7))
    dr, _, _ = rayleigh_cells(cfg)
    r0 = 200.0
    t1 = Target.from_physical(1.0, r0, 10.0, 0.1, cfg)
    t2 = Target.from_physical(np.exp(0.3j), r0 + 0.5 * dr, 10.0, 0.1, cfg)
    y = synthesize(Scene([t1, t2], [], 0.0), X, cfg, np.random.default_rng(0)).vector()
    cell = 1 / (cfg.n_subcarriers * cfg.subcarrier_hz)
    grid = GridSpec((t1.delay - 3 * cell, t1.delay + 3 * cell, 49), (t1.doppler, t1.doppler, 1), (0.1, 0.1, 1))
    pmap, peaks = periodogram(y, X, cfg, grid)
    near = [p for p in peaks if abs(p.delay - t1.delay) < 2 * cell]
    assert len(near) == 1
    # the single lobe sits between the two targets
    assert t1.delay - 0.1 * cell <= near[0].delay <= t2.delay + 0.1 * cell


def test_periodogram_noise_floor():
    X = generate_symbols(CFG, np.random.default_rng(8))
    rng = np.random.default_rng(9)
    sigma2 = 0.5
    grid = GridSpec((1e-6, 2e-6, 3), (0.0, 1000.0, 2), (0.0, 0.3, 2))
    vals = []
    for _ in range(100):
        w = np.sqrt(sigma2 / 2) * (rng.normal(size=CFG.n_obs) + 1j * rng.normal(size=CFG.n_obs))
        vals.append(correlation_map(w, X, CFG, grid)[1, 1, 1])
    # |⟨a, w⟩|²/‖a‖² is σ²·Exp(1): mean σ², standard deviation σ²
    assert abs(np.mean(vals) - sigma2) <= 3 * sigma2 / np.sqrt(100)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10), st.integers(0, 8), st.integers(0, 6), st.complex_numbers(min_magnitude=0.1, max_magnitude=10))
def test_omp_recovers_any_on_grid_point(i, j, k, b):
    X = generate_symbols(CFG, np.random.default_rng(10))
    t = on_grid(GRID, (i, j, k), b)
    y = synthesize(Scene([t], [], 0.0), X, CFG, np.random.default_rng(0)).vector()
    det = omp(y, X, CFG, GRID, max_targets=1)
    assert det.grid_indices == [(i, j, k)]
    assert abs(det.estimates[0].gain - b) < 1e-8 * max(1, abs(b))
