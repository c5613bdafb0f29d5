import numpy as np
import pytest

from isac_sbl.posterior import PriorConfig
from isac_sbl.waveform import SystemConfig, generate_symbols


@pytest.fixture
def small_cfg():
    return SystemConfig(n_antennas=4, n_subcarriers=16, n_symbols=4)


@pytest.fixture
def small_problem(small_cfg):
    rng = np.random.default_rng(7)
    X = generate_symbols(small_cfg, rng)
    prior = PriorConfig.from_physical(small_cfg, n_components=3)
    return small_cfg, X, prior, rng


def random_state(prior, rng, gain=1.0):
    Q = prior.n_components
    pad = 0.05
    pick = lambda tg: rng.uniform(tg.lo + pad * tg.width, tg.hi - pad * tg.width, Q)
    return np.concatenate([
        pick(prior.delay), pick(prior.doppler), pick(prior.angle),
        gain * rng.normal(size=2 * Q), rng.uniform(0.5, 2.0, Q), [rng.uniform(0.5, 2.0)],
    ])


def longdouble_logpost(eta, y, X, cfg, prior, idx, scale):
    """Extended-precision tempered log posterior (up to constants) as a finite-difference oracle."""
    ld = np.longdouble
    Q = prior.n_components
    e = np.asarray(eta, dtype=ld)
    tau, fd, th, br, bi, rho, xi = e[:Q], e[Q:2*Q], e[2*Q:3*Q], e[3*Q:4*Q], e[4*Q:5*Q], e[5*Q:6*Q], e[-1]
    M, K, N = cfg.shape
    m = (idx // (K * N)).astype(ld)
    k = ((idx // N) % K).astype(ld)
    n = (idx % N).astype(ld)
    xr = X.real.reshape(M * K, N).astype(ld)[idx // N]
    xim = X.imag.reshape(M * K, N).astype(ld)[idx // N]
    pi = ld(np.pi)
    mur = np.zeros(len(idx), dtype=ld)
    mui = np.zeros(len(idx), dtype=ld)
    nn = np.arange(N, dtype=ld)
    for q in range(Q):
        ph = pi * np.sin(th[q])
        ar, ai = np.cos(ph * nn), np.sin(ph * nn)
        sr = xr @ ar - xim @ ai
        si = xr @ ai + xim @ ar
        ang = 2 * pi * ld(cfg.symbol_period) * k * fd[q] - 2 * pi * ld(cfg.subcarrier_hz) * m * tau[q] + ph * n
        cr, ci = np.cos(ang), np.sin(ang)
        pr, pim = cr * sr - ci * si, cr * si + ci * sr
        mur += br[q] * pr - bi[q] * pim
        mui += br[q] * pim + bi[q] * pr
    rr = y.real[idx].astype(ld) - mur
    ri = y.imag[idx].astype(ld) - mui
    ll = ld(scale) * (len(idx) * np.log(xi / pi) - xi * np.sum(rr * rr + ri * ri))
    lp = (prior.kappa_xi - 1) * np.log(xi) - ld(prior.chi_xi) * xi
    lp += np.sum(-np.log(pi * rho) - (br * br + bi * bi) / rho + (prior.kappa_rho - 1) * np.log(rho) - ld(prior.chi_rho) * rho)
    for x, tg in ((tau, prior.delay), (fd, prior.doppler), (th, prior.angle)):
        lp += np.sum(-((x - ld(tg.mu)) / ld(tg.sigma)) ** 2 / 2)
    return ll + lp


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: (int(s.split()[2].rstrip("ab:")), s)):
            terminalreporter.write_line(line)
