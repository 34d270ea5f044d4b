"""Oracle checks shared by the command line tasks and the test suite."""
from __future__ import annotations

import math

import numpy as np
from scipy import stats

from . import fock as F
from .dynamics import WalkerState, run_ensemble, solve_hazard
from .estimators import (clt_check, diffusive_bounds_check, lln_check, martingale_check, mean_se,
                         sigma_estimate, stationarity_check, yaglom_check)
from .gibbs import brascamp_lieb_check, sample_gff_batch, stationary_gaussian_scale, z_lambda_bound_check
from .gsc import gsc_threshold, plateau_check, verify_threshold
from .lattice import SpectralCache, Torus, gamma_kernel_hat, midpoint_rule
from .rates import RateSpec, validate
from .seeding import replica_rng

GFF_POINTS = ((0, 0, 0), (1, 0, 0), (0, 1, 0), (1, 1, 0), (1, 1, 1),
              (2, 0, 0), (2, 1, 0), (2, 2, 2), (3, 1, 0), (4, 0, 0))


def _points(d: int, L: int):
    pts = []
    for p in GFF_POINTS:
        q = tuple((list(p) + [0] * d)[:d])
        q = tuple(v % L for v in q)
        if q not in pts:
            pts.append(q)
    return pts


def green_identity(cache: SpectralCache) -> dict:
    """``sum_e (b(0) - b(e)) = 1 - L^{-d}`` over the ``2d`` unit vectors."""
    g = cache.green
    zero = np.zeros(cache.torus.d, dtype=int)
    total = sum(g(zero) - g(e) for e in cache.torus.unit_vectors())
    exact = 1.0 - cache.torus.volume ** -1.0
    return {"name": "green_identity", "sum": total, "exact": exact, "error": abs(total - exact),
            "passed": abs(total - exact) <= 1e-12}


def gff_covariance_check(cache: SpectralCache, n_samples: int, seed: int, batch: int = 1000) -> dict:
    """Empirical ``Cov(omega(0), omega(x))`` against the torus Green function."""
    torus = cache.torus
    pts = _points(torus.d, torus.L)
    prods = []
    rng = replica_rng(seed, 0, 7)
    done = 0
    while done < n_samples:
        m = min(batch, n_samples - done)
        f = sample_gff_batch(cache, rng, m)
        o = f[(slice(None),) + (0,) * torus.d]
        prods.append(np.stack([o * f[(slice(None), *p)] for p in pts], axis=1))
        done += m
    prods = np.concatenate(prods)
    m, se = mean_se(prods)
    rows = []
    for p, mv, sv in zip(pts, m, se):
        exact = cache.green(p)
        rows.append({"x": list(p), "estimate": float(mv), "se": float(sv), "exact": exact,
                     "ok": bool(abs(mv - exact) <= 3 * sv)})
    return {"name": "gff_covariance", "samples": n_samples, "rows": rows,
            "passed": all(r["ok"] for r in rows)}


def gamma_kernel_integral(d: int = 3, n: int = 64) -> dict:
    """``(2 pi)^{-d} int (1 - cos p_1) / dhat(p) dp`` against ``1/d``."""
    val = midpoint_rule(lambda p: gamma_kernel_hat(p, d), d, n) / (2 * np.pi) ** d
    return {"name": "gamma_kernel", "value": val, "exact": 1.0 / d, "error": abs(val - 1.0 / d),
            "passed": abs(val - 1.0 / d) <= 1e-6}


def jump_time_ks(spec: RateSpec, torus: Torus, n: int, seed: int) -> dict:
    """KS test of first waiting times against Exponential(2 d gamma) (interaction off)."""
    state = WalkerState(torus, spec, np.zeros(torus.shape), rng=replica_rng(seed, 0, 3))
    E = state.rng.standard_exponential(n)
    taus = np.array([solve_hazard(state, e)[0] for e in E])
    rate = 2 * torus.d * spec.gamma
    res = stats.kstest(taus, "expon", args=(0, 1.0 / rate))
    return {"name": "jump_time_ks", "draws": n, "statistic": float(res.statistic), "pvalue": float(res.pvalue),
            "rate": rate, "passed": bool(res.pvalue > 0.01)}


def hazard_residual_check(spec: RateSpec, torus: Torus, n: int, seed: int) -> dict:
    """``max |Lambda(tau*) - E| / (1 + E)`` over random states and exponentials."""
    rng = replica_rng(seed, 0, 4)
    worst = 0.0
    for _ in range(max(n // 100, 1)):
        state = WalkerState(torus, spec, rng.standard_normal(torus.shape), rng=rng)
        for E in rng.standard_exponential(100) * rng.choice([1.0, 10.0, 100.0]):
            _, resid = solve_hazard(state, E)
            worst = max(worst, resid / (1 + E))
    return {"name": "hazard_inversion", "draws": n, "max_relative_residual": worst, "passed": worst <= 1e-10}


def srw_msd_check(ens, gamma: float, d: int, t_points) -> dict:
    rows = []
    for t in t_points:
        i = int(np.argmin(np.abs(ens.times - t)))
        sq = (ens.displacement[:, i, :] ** 2).sum(axis=1).astype(float)
        m, se = mean_se(sq)
        exact = 2 * d * gamma * t
        rows.append({"t": float(t), "msd": float(m), "se": float(se), "exact": exact,
                     "ok": bool(abs(m - exact) <= 3 * se)})
    return {"name": "srw_msd", "rows": rows, "passed": all(r["ok"] for r in rows)}


# ---------------------------------------------------------------------------
# batteries


def walk_battery(ens, spec: RateSpec, torus: Torus, T: float, *, t_grid=None, clt_times=None,
                 stationarity_t=None, yaglom_t=None, ad_seed: int = 0, cache=None) -> list:
    """Statistical checks on one ensemble; skipped checks are omitted."""
    checks = []
    times = ens.times
    X = ens.displacement.astype(float)
    checks.append(lln_check(times, X, [t for t in (t_grid or [T]) if t in times] or [times[-1]]))
    if t_grid and len(t_grid) >= 4:
        checks.append(diffusive_bounds_check(times, X, spec.gamma, t_grid))
    checks.append(sigma_estimate(times, X, T))
    if clt_times:
        checks.append(clt_check(times, X, clt_times[0], clt_times[1], ad_seed))
    i = int(np.argmin(np.abs(times - T)))
    checks.append(martingale_check(X[:, i], ens.comp_bar[:, i], ens.comp_tilde[:, i],
                                   ens.gamma_displacement[:, i].astype(float)))
    if ens.snapshots is not None and times[0] == 0.0:
        exp2 = None
        if spec.is_gaussian:
            cache = SpectralCache.build(torus) if cache is None else cache
            exp2 = cache.green.bond_variance(0) * stationary_gaussian_scale(spec) ** 2
        if stationarity_t is not None:
            j = int(np.argmin(np.abs(times - stationarity_t)))
            st = stationarity_check(ens.snapshots[:, 0], ens.snapshots[:, j], expected_second=exp2)
            st["t"] = float(times[j])
            checks.append(st)
        if yaglom_t is not None:
            j = int(np.argmin(np.abs(times - yaglom_t)))
            y = yaglom_check(ens.snapshots[:, 0], ens.snapshots[:, j])
            y["t"] = float(times[j])
            checks.append(y)
    return checks


def fock_battery(L: int = 4, d: int = 3, n_max: int = 2, norm_L: int = 32, gsc_grid: int = 64,
                 seed: int = 0) -> list:
    torus = Torus(d, L)
    cache = SpectralCache.build(torus)
    grid = F.ModeGrid(torus)
    checks = []
    big = F.ModeGrid(Torus(d, norm_L))
    sup = F.multiplier_sup(big, 0, 1)
    attain = np.zeros(d)
    attain[0] = np.pi
    exact_pt = abs(-2.0) / math.sqrt(2.0 * float(np.sum(1 - np.cos(attain))))
    checks.append({"name": "delta_inv_sqrt_nabla_norm", "L": norm_L, "grid_max": sup,
                   "attainment_value": exact_pt,
                   "passed": bool(0.99 <= sup <= 1.0 + 1e-12 and abs(exact_pt - 1.0) <= 1e-15)})
    K = F.creation_norm_constant(cache)
    rows = []
    for n in range(n_max + 1):
        a = F.creation_norm(grid, 0, n, seed)
        rows.append({"op": "creation", "n": n, "estimate": a.value, "exact": K * math.sqrt(n + 1),
                     "iterations": a.iterations, "ok": abs(a.value - K * math.sqrt(n + 1)) <= 1e-6})
        if n >= 1:
            b = F.annihilation_norm(grid, 0, n, seed)
            rows.append({"op": "annihilation", "n": n, "estimate": b.value, "exact": K * math.sqrt(n),
                         "iterations": b.iterations, "ok": abs(b.value - K * math.sqrt(n)) <= 1e-6})
    literal = math.sqrt((1 - L ** -d) / (2 * d))
    checks.append({"name": "creation_annihilation_norms", "L": L, "constant": K,
                   "literal_constant": literal, "constant_ratio": K / literal,
                   "rows": rows, "passed": all(r["ok"] for r in rows)})
    res = F.adjointness_residuals(grid, n_max, seed)
    checks.append({"name": "adjointness", "max_residual": max(res.values()), "passed": max(res.values()) <= 1e-10})
    comm = commutation_residual(grid, 0, seed)
    checks.append({"name": "field_shift_commutation", "residual": comm, "passed": comm <= 1e-10})
    integ = F.gsc_integral_bound(d, n=gsc_grid)
    bound_rows = []
    for n in (1, 2):
        est = F.inv_sqrt_creation_norm(grid, 0, n, seed)
        bound_rows.append({"n": n, "norm": est.value, "bound": integ["C"] * math.sqrt(n + 1),
                           "ok": est.value <= integ["C"] * math.sqrt(n + 1)})
    checks.append({"name": "integral_bound", **integ, "rows": bound_rows,
                   "passed": bool(integ["converged"] and integ["relative_change"] <= 0.02
                                  and all(r["ok"] for r in bound_rows))})
    return checks


def commutation_residual(grid: F.ModeGrid, e: int, seed: int = 0) -> float:
    """``||(N_e T_e + T_e N_{-e}) u|| / ||u||`` on a random sector-1 vector."""
    opp = e + 1 if e % 2 == 0 else e - 1
    u = F.GradedVector.random(grid, 1, np.random.default_rng(seed))
    lhs = F.apply_field(e, {1: F.apply_shift(e, u)})
    rhs = {n: F.apply_shift(e, v) for n, v in F.apply_field(opp, {1: u}).items()}
    total = {n: lhs[n] + rhs[n] for n in lhs}
    return F.graded_norm(total) / u.norm()


def gsc_battery(r: int = 2, kappa: float = 2.0, C: float = 0.0) -> list:
    res = gsc_threshold(r, kappa, C)
    out = [{"name": "gsc_threshold", **res.to_dict(), "passed": True}]
    if res.n1 <= 10**6:
        v = verify_threshold(res.n1, r, kappa, C)
        out.append({"name": "gsc_rescan", **v})
    p = plateau_check(r, kappa, C)
    out.append({"name": "gsc_plateau", **p, "passed": p["error"] <= 1e-12})
    return out


def gibbs_battery(fields: np.ndarray, spec: RateSpec, cache: SpectralCache, lambdas=(0.0, 0.2, 0.5)) -> list:
    out = []
    for lam in lambdas:
        bl = brascamp_lieb_check(fields, spec, lam, cache)
        bl["lambda"] = lam
        bl["name"] = "brascamp_lieb"
        out.append(bl)
    z = z_lambda_bound_check(fields, spec, list(lambdas), cache)
    z["name"] = "z_lambda_bound"
    out.append(z)
    return out


def rate_check(spec: RateSpec) -> dict:
    rep = validate(spec)
    return {"name": "rate_conditions", **rep.to_dict()}
