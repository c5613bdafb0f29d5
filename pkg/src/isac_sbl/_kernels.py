"""Compiled inner loops for mini-batch likelihood evaluation."""
from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True, fastmath=True)
def batch_residual_power(y, tx_rows, re_idx, m_idx, k_idx, n_idx, idx, tau, f_d, theta, b,
                         w_sub, w_sym, origin, want_grad, grad):
    """Σ_batch |y_i − μ_i|² and, optionally, the data part of its gradient.

    `grad` (length 5Q, ordered τ, f_D, θ, Re b, Im b) receives
    Σ_i Re{conj(r_i) ∂μ_i/∂p}; the caller applies the 2ξ·scale factor.
    `origin` = (m0, k0, n0) shifts the phase reference of the subcarrier,
    symbol and antenna indices; zeros give the canonical model.
    Written in real arithmetic; delay and Doppler phasors come from
    per-component tables built by recurrence, so the batch loop has no trig.
    """
    m0, k0, n0 = origin[0], origin[1], origin[2]
    Q = tau.shape[0]
    N = tx_rows.shape[1]
    Ar = np.empty((Q, N))
    Ai = np.empty((Q, N))
    dph = np.empty(Q)
    for q in range(Q):
        ph = np.pi * math.sin(theta[q])
        dph[q] = np.pi * math.cos(theta[q])
        for n in range(N):
            Ar[q, n] = math.cos(ph * (n - n0))
            Ai[q, n] = math.sin(ph * (n - n0))
    if want_grad:
        for j in range(grad.shape[0]):
            grad[j] = 0.0
    M = 0
    K = 0
    for ii in range(idx.shape[0]):
        i = idx[ii]
        M = max(M, m_idx[i] + 1)
        K = max(K, k_idx[i] + 1)
    # exp(−j wm τ) over subcarriers and exp(j wk f_D) over symbols
    Emr = np.empty((Q, M))
    Emi = np.empty((Q, M))
    Ekr = np.empty((Q, K))
    Eki = np.empty((Q, K))
    for q in range(Q):
        cr, ci = math.cos(w_sub * m0 * tau[q]), math.sin(w_sub * m0 * tau[q])
        dr, di = math.cos(w_sub * tau[q]), -math.sin(w_sub * tau[q])
        for mm in range(M):
            Emr[q, mm] = cr
            Emi[q, mm] = ci
            cr, ci = cr * dr - ci * di, cr * di + ci * dr
        cr, ci = math.cos(w_sym * k0 * f_d[q]), -math.sin(w_sym * k0 * f_d[q])
        dr, di = math.cos(w_sym * f_d[q]), math.sin(w_sym * f_d[q])
        for kk in range(K):
            Ekr[q, kk] = cr
            Eki[q, kk] = ci
            cr, ci = cr * dr - ci * di, cr * di + ci * dr
    br = b.real.copy()
    bi = b.imag.copy()
    phr = np.empty(Q)
    phi = np.empty(Q)
    dpr = np.empty(Q)
    dpi = np.empty(Q)
    xr = np.empty(N)
    xi = np.empty(N)
    total = 0.0
    for ii in range(idx.shape[0]):
        i = idx[ii]
        row = re_idx[i]
        for nn in range(N):
            xr[nn] = tx_rows[row, nn].real
            xi[nn] = tx_rows[row, nn].imag
        mi = m_idx[i]
        ki = k_idx[i]
        wm = w_sub * (mi - m0)
        wk = w_sym * (ki - k0)
        n = n_idx[i]
        nc = n - n0
        mur = 0.0
        mui = 0.0
        for q in range(Q):
            # s = aᵀx and ds = ∂s/∂(π sin θ)
            sr = 0.0
            si = 0.0
            dsr = 0.0
            dsi = 0.0
            for nn in range(N):
                pr = xr[nn] * Ar[q, nn] - xi[nn] * Ai[q, nn]
                pi = xr[nn] * Ai[q, nn] + xi[nn] * Ar[q, nn]
                sr += pr
                si += pi
                if want_grad:
                    dsr -= (nn - n0) * pi
                    dsi += (nn - n0) * pr
            cr = Emr[q, mi] * Ekr[q, ki] - Emi[q, mi] * Eki[q, ki]
            ci = Emr[q, mi] * Eki[q, ki] + Emi[q, mi] * Ekr[q, ki]
            er = cr * Ar[q, n] - ci * Ai[q, n]
            ei = cr * Ai[q, n] + ci * Ar[q, n]
            phr[q] = er * sr - ei * si
            phi[q] = er * si + ei * sr
            if want_grad:
                tr = (dsr - nc * si) * dph[q]
                ti = (dsi + nc * sr) * dph[q]
                dpr[q] = er * tr - ei * ti
                dpi[q] = er * ti + ei * tr
            mur += br[q] * phr[q] - bi[q] * phi[q]
            mui += br[q] * phi[q] + bi[q] * phr[q]
        rr = y[i].real - mur
        ri = y[i].imag - mui
        total += rr * rr + ri * ri
        if want_grad:
            for q in range(Q):
                # conj(r) · b · φ
                ur = br[q] * phr[q] - bi[q] * phi[q]
                ui = br[q] * phi[q] + bi[q] * phr[q]
                bpi = rr * ui - ri * ur
                grad[q] += wm * bpi
                grad[Q + q] -= wk * bpi
                vr = br[q] * dpr[q] - bi[q] * dpi[q]
                vi = br[q] * dpi[q] + bi[q] * dpr[q]
                grad[2 * Q + q] += rr * vr + ri * vi
                grad[3 * Q + q] += rr * phr[q] + ri * phi[q]
                grad[4 * Q + q] -= rr * phi[q] - ri * phr[q]
    return total


@njit(cache=True)
def prior_value_grad(eta, Q, tg_mu, tg_sigma, tg_lognorm, gamma_consts, want_grad, grad):
    """Log prior (assumed inside support) and optionally its gradient.

    tg_* hold (delay, doppler, angle) truncated-Gaussian constants;
    gamma_consts = (κ_ρ, χ_ρ, log-normalizer ρ, κ_ξ, χ_ξ, log-normalizer ξ).
    """
    k_rho, c_rho, z_rho, k_xi, c_xi, z_xi = gamma_consts
    xi = eta[6 * Q]
    lp = z_xi + (k_xi - 1) * np.log(xi) - c_xi * xi
    if want_grad:
        grad[6 * Q] = (k_xi - 1) / xi - c_xi
    for p in range(3):
        mu = tg_mu[p]
        s2 = tg_sigma[p] * tg_sigma[p]
        for q in range(Q):
            d = eta[p * Q + q] - mu
            lp += -0.5 * d * d / s2 - tg_lognorm[p]
            if want_grad:
                grad[p * Q + q] = -d / s2
    for q in range(Q):
        br = eta[3 * Q + q]
        bi = eta[4 * Q + q]
        rho = eta[5 * Q + q]
        b2 = br * br + bi * bi
        lp += -np.log(np.pi * rho) - b2 / rho + z_rho + (k_rho - 1) * np.log(rho) - c_rho * rho
        if want_grad:
            grad[3 * Q + q] = -2 * br / rho
            grad[4 * Q + q] = -2 * bi / rho
            grad[5 * Q + q] = -1 / rho + b2 / (rho * rho) + (k_rho - 1) / rho - c_rho
    return lp


@njit(cache=True)
def _log_density(u, idx, y, tx_rows, re_idx, m_idx, k_idx, n_idx, w_sub, w_sym, origin, Q,
                 tg_mu, tg_sigma, tg_lognorm, gamma_consts, unit, log_scale, scale,
                 want_grad, g, gbuf, eta):
    """Tempered log density in working coordinates; eta receives the natural state."""
    F = u.shape[0]
    for j in range(F):
        eta[j] = u[j] * unit[j]
    if log_scale:
        for j in range(5 * Q, F):
            eta[j] = np.exp(u[j])
    tau = eta[:Q]
    f_d = eta[Q:2 * Q]
    theta = eta[2 * Q:3 * Q]
    b = eta[3 * Q:4 * Q] + 1j * eta[4 * Q:5 * Q]
    xi = eta[F - 1]
    sq = batch_residual_power(y, tx_rows, re_idx, m_idx, k_idx, n_idx, idx, tau, f_d, theta, b,
                              w_sub, w_sym, origin, want_grad, gbuf)
    lp = prior_value_grad(eta, Q, tg_mu, tg_sigma, tg_lognorm, gamma_consts, want_grad, g)
    B = idx.shape[0]
    val = scale * (B * np.log(xi / np.pi) - xi * sq) + lp
    if log_scale:
        for j in range(5 * Q, F):
            val += u[j]
    if want_grad:
        for j in range(5 * Q):
            g[j] += 2 * xi * scale * gbuf[j]
        g[F - 1] += scale * (B / xi - sq)
        for j in range(F):
            g[j] *= unit[j]
        if log_scale:
            for j in range(5 * Q, F):
                g[j] = g[j] * eta[j] + 1.0
    return val


@njit(cache=True)
def run_chain_compiled(u0, y, tx_rows, re_idx, m_idx, k_idx, n_idx, w_sub, w_sym, origin, Q,
                       tg_mu, tg_sigma, tg_lognorm, gamma_consts, unit, log_scale, lo_eta, hi_eta,
                       lo_u, hi_u, scale, p_scale, batch_size, step0, beta1, beta2, eps_stab,
                       n_burnin, n_samples, fisher, cap_var, reflect, momentum_drift, seed, trace):
    """Whole sampler loop; mirrors the reference implementation in sampler.py.

    Returns (mean of collected η, accepted count, out-of-box count).
    """
    np.random.seed(seed)
    F = u0.shape[0]
    H = y.shape[0]
    perm = np.arange(H)
    u = u0.copy()
    u_new = np.empty(F)
    w = np.zeros(F)
    v = np.zeros(F)
    g = np.empty(F)
    g_dummy = np.empty(F)
    gbuf = np.empty(5 * Q)
    eta = np.empty(F)
    eta_new = np.empty(F)
    acc = np.zeros(F)
    n_acc = 0
    n_oob = 0
    n_it = n_burnin + n_samples
    keep = trace.shape[0] == n_it
    for t in range(1, n_it + 1):
        # partial Fisher-Yates on a persistent permutation gives a uniform subset
        for j in range(batch_size):
            r = j + np.random.randint(H - j)
            tmp = perm[j]
            perm[j] = perm[r]
            perm[r] = tmp
        idx = perm[:batch_size]
        val = _log_density(u, idx, y, tx_rows, re_idx, m_idx, k_idx, n_idx, w_sub, w_sym, origin, Q,
                           tg_mu, tg_sigma, tg_lognorm, gamma_consts, unit, log_scale, scale,
                           True, g, gbuf, eta)
        eps_t = step0 / (1.0 + t**0.005)
        c1 = 1.0 - beta1**t
        c2 = 1.0 - beta2**t
        for j in range(F):
            w[j] = beta1 * w[j] + (1 - beta1) * g[j]
            v[j] = beta2 * v[j] + (1 - beta2) * g[j] * g[j]
            w_hat = w[j] / c1
            v_hat = v[j] / c2
            if fisher:
                P = p_scale / (v_hat + eps_stab)
                cap = cap_var[j] / (2 * eps_t)
                if P > cap:
                    P = cap
                d = P * (w_hat if momentum_drift else g[j])
                nv = 2 * eps_t * P
            else:
                den = np.sqrt(v_hat) + eps_stab
                d = w_hat / den
                nv = 2 * eps_t / den
            u_new[j] = u[j] + eps_t * d + np.sqrt(nv) * np.random.standard_normal()
            if reflect and np.isfinite(lo_u[j]) and np.isfinite(hi_u[j]):
                width = hi_u[j] - lo_u[j]
                z = (u_new[j] - lo_u[j]) % (2 * width)
                u_new[j] = lo_u[j] + (z if z <= width else 2 * width - z)
        inside = True
        for j in range(F):
            x = u_new[j] * unit[j]
            if log_scale and j >= 5 * Q:
                x = np.exp(u_new[j])
            if not (x > lo_eta[j] and x < hi_eta[j]):
                inside = False
                break
        if not inside:
            n_oob += 1
        else:
            val_new = _log_density(u_new, idx, y, tx_rows, re_idx, m_idx, k_idx, n_idx, w_sub, w_sym,
                                   origin, Q, tg_mu, tg_sigma, tg_lognorm, gamma_consts, unit,
                                   log_scale, scale, False, g_dummy, gbuf, eta_new)
            delta = val_new - val
            if delta >= 0 or np.log(np.random.random()) < delta:
                for j in range(F):
                    u[j] = u_new[j]
                n_acc += 1
        if keep:
            trace[t - 1] = val
        if t > n_burnin:
            for j in range(F):
                x = u[j] * unit[j]
                if log_scale and j >= 5 * Q:
                    x = np.exp(u[j])
                acc[j] += x
    for j in range(F):
        acc[j] /= n_samples
    return acc, n_acc, n_oob
