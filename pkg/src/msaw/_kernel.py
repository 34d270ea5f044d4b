"""Compiled inner loop of the walk.

All polynomials are ascending coefficient arrays padded to a common length.
Between jumps only the occupied site's local time grows, so every rate is a
polynomial in the lag ``tau``; coefficients are Taylor-shifted to the current
differences so that hazards and compensator integrals never subtract large
nearly-equal numbers.
"""
from __future__ import annotations

import numpy as np
from numba import njit

NEWTON_MAXITER = 200
BISECT_MAXITER = 400
STATUS_DONE = 0
STATUS_NEED_RANDOMS = 1
STATUS_NUMERIC = 2


def binomial_table(m: int) -> np.ndarray:
    b = np.zeros((m, m))
    for j in range(m):
        b[j, 0] = 1.0
        for k in range(1, j + 1):
            b[j, k] = b[j - 1, k - 1] + (b[j - 1, k] if k < j else 0.0)
    return b


@njit(cache=True, nogil=True)
def taylor_shift(c, u, binom, out):
    """``out[k]`` = k-th Taylor coefficient of ``c`` at ``u``."""
    m = c.shape[0]
    for k in range(m):
        acc = 0.0
        upow = 1.0
        for j in range(k, m):
            acc += c[j] * binom[j, k] * upow
            upow *= u
        out[k] = acc


@njit(cache=True, nogil=True)
def hazard(W, tau):
    """``sum_k W_k tau^{k+1}/(k+1)`` and its derivative."""
    m = W.shape[0]
    lam = 0.0
    dlam = 0.0
    for k in range(m - 1, -1, -1):
        lam = lam * tau + W[k] / (k + 1)
        dlam = dlam * tau + W[k]
    return lam * tau, dlam


@njit(cache=True, nogil=True)
def integral(c, tau):
    """``int_0^tau sum_k c_k s^k ds``."""
    acc = 0.0
    for k in range(c.shape[0] - 1, -1, -1):
        acc = acc * tau + c[k] / (k + 1)
    return acc * tau


@njit(cache=True, nogil=True)
def poly_at(c, tau):
    acc = 0.0
    for k in range(c.shape[0] - 1, -1, -1):
        acc = acc * tau + c[k]
    return acc


@njit(cache=True, nogil=True)
def solve_tau(W, E, min_rate):
    """Root of ``Lambda(tau) = E`` on ``[0, E / min_rate]``; returns (tau, residual, ok)."""
    tol = 1e-13 * (1.0 + E)
    lo = 0.0
    hi = E / min_rate
    f_hi, _ = hazard(W, hi)
    while f_hi < E:
        # min_rate is a true lower bound of Lambda', so this only guards roundoff
        hi *= 2.0
        f_hi, _ = hazard(W, hi)
    _, d0 = hazard(W, 0.0)
    tau = min(E / d0, hi)
    ok = False
    for _ in range(NEWTON_MAXITER):
        f, df = hazard(W, tau)
        f -= E
        if abs(f) <= tol:
            ok = True
            break
        if f < 0.0:
            lo = tau
        else:
            hi = tau
        nxt = tau - f / df
        if not (lo < nxt < hi):
            nxt = 0.5 * (lo + hi)
        if nxt == tau:
            ok = True
            break
        tau = nxt
    if not ok:
        for _ in range(BISECT_MAXITER):
            tau = 0.5 * (lo + hi)
            f, _ = hazard(W, tau)
            f -= E
            if abs(f) <= tol or hi - lo <= 4e-16 * hi:
                ok = True
                break
            if f < 0.0:
                lo = tau
            else:
                hi = tau
    f, _ = hazard(W, tau)
    return tau, abs(f - E), ok


@njit(cache=True, nogil=True)
def pick_direction(rates, gamma, U):
    """Direction with probability ``rates[e]/sum``; the flag marks the rate-gamma slice."""
    total = 0.0
    for e in range(rates.shape[0]):
        total += rates[e]
    x = U * total
    n = rates.shape[0]
    for e in range(n):
        if x < gamma:
            return e, True
        x -= gamma
        extra = rates[e] - gamma
        if x < extra or e == n - 1:
            return e, False
        x -= extra
    return n - 1, False


@njit(cache=True, nogil=True)
def _site(pos, L):
    idx = 0
    for i in range(pos.shape[0]):
        idx = idx * L + pos[i]
    return idx


@njit(cache=True, nogil=True)
def _site_offset(pos, off, L):
    idx = 0
    for i in range(pos.shape[0]):
        idx = idx * L + (pos[i] + off[i]) % L
    return idx


@njit(cache=True, nogil=True)
def _neighbor(pos, e, L):
    l = e // 2
    step = 1 if e % 2 == 0 else -1
    idx = 0
    for i in range(pos.shape[0]):
        p = pos[i]
        if i == l:
            p = (p + step) % L
        idx = idx * L + p
    return idx


@njit(cache=True, nogil=True)
def run_walk(ell, pos, disp, fstate, istate, s_c, r_c, gamma, binom, L, T,
             sample_times, out_disp, out_cbar, out_ctil, out_gdisp,
             snap_off, snap_dir, out_snap, E_buf, U_buf, recenter_every):
    """Advance one walker until ``T`` or until the random buffers run out.

    ``fstate`` = [t, comp_bar(d), comp_tilde(d), max_residual]
    ``istate`` = [jump_count, sample_index, buffer_index, gamma_disp(d)]
    Arrays are updated in place so the call can be resumed.
    """
    d = pos.shape[0]
    nd = 2 * d
    m = s_c.shape[0]
    sh_s = np.zeros((nd, m))
    sh_r = np.zeros((nd, m))
    W = np.zeros(m)
    rates = np.zeros(nd)
    cb = np.zeros(d)
    ct = np.zeros(d)
    n_samples = sample_times.shape[0]
    n_snap = snap_dir.shape[0]
    min_rate = nd * gamma

    while True:
        t = fstate[0]
        x_site = _site(pos, L)
        lx = ell[x_site]
        for k in range(m):
            W[k] = 0.0
        W[0] = min_rate
        for e in range(nd):
            u = lx - ell[_neighbor(pos, e, L)]
            taylor_shift(s_c, u, binom, sh_s[e])
            taylor_shift(r_c, u, binom, sh_r[e])
            for k in range(m):
                W[k] += sh_s[e, k] + sh_r[e, k]

        bi = istate[2]
        have = bi < E_buf.shape[0]
        if have:
            E = E_buf[bi]
            tau, resid, ok = solve_tau(W, E, min_rate)
            if not ok:
                return STATUS_NUMERIC
            if resid / (1.0 + E) > fstate[2 * d + 1]:
                fstate[2 * d + 1] = resid / (1.0 + E)
            t_next = t + tau
        else:
            t_next = np.inf

        # sample times inside this sojourn (and the horizon) see partial lags
        limit = min(t_next, T)
        si = istate[1]
        while si < n_samples and sample_times[si] <= limit:
            if not have and sample_times[si] > t and T > t:
                # cannot know the sojourn end without a random number
                break
            lag = sample_times[si] - t
            for l in range(d):
                cb[l] = integral(sh_s[2 * l], lag) - integral(sh_s[2 * l + 1], lag)
                ct[l] = integral(sh_r[2 * l], lag) - integral(sh_r[2 * l + 1], lag)
                out_disp[si, l] = disp[l]
                out_cbar[si, l] = fstate[1 + l] + cb[l]
                out_ctil[si, l] = fstate[1 + d + l] + ct[l]
                out_gdisp[si, l] = istate[3 + l]
            for j in range(n_snap):
                a = _site_offset(pos, snap_off[j], L)
                off = snap_off[j].copy()
                ll = snap_dir[j] // 2
                off[ll] += 1 if snap_dir[j] % 2 == 0 else -1
                b = _site_offset(pos, off, L)
                va = ell[a] + (lag if a == x_site else 0.0)
                vb = ell[b] + (lag if b == x_site else 0.0)
                out_snap[si, j] = va - vb
            si += 1
        istate[1] = si

        if t_next >= T and (have or T <= t):
            lag = T - t
            if lag > 0.0:
                for l in range(d):
                    fstate[1 + l] += integral(sh_s[2 * l], lag) - integral(sh_s[2 * l + 1], lag)
                    fstate[1 + d + l] += integral(sh_r[2 * l], lag) - integral(sh_r[2 * l + 1], lag)
                ell[x_site] += lag
            fstate[0] = T
            return STATUS_DONE
        if not have:
            return STATUS_NEED_RANDOMS

        for e in range(nd):
            rates[e] = gamma + poly_at(sh_s[e], tau) + poly_at(sh_r[e], tau)
        e_star, is_gamma = pick_direction(rates, gamma, U_buf[bi])
        istate[2] = bi + 1

        for l in range(d):
            fstate[1 + l] += integral(sh_s[2 * l], tau) - integral(sh_s[2 * l + 1], tau)
            fstate[1 + d + l] += integral(sh_r[2 * l], tau) - integral(sh_r[2 * l + 1], tau)
        ell[x_site] += tau
        l = e_star // 2
        step = 1 if e_star % 2 == 0 else -1
        pos[l] = (pos[l] + step) % L
        disp[l] += step
        if is_gamma:
            istate[3 + l] += step
        fstate[0] = t_next
        istate[0] += 1
        if recenter_every > 0 and istate[0] % recenter_every == 0:
            ell -= ell.mean()
