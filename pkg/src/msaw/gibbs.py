"""Samplers for the stationary gradient Gibbs measure on the torus.

The stationary measure of the walk has density proportional to
``exp(-sum_x sum_{|e|=1} R(omega(x) - omega(x + e)))`` on mean-zero fields,
so every undirected bond enters twice (``BOND_MULTIPLICITY``).  With that
weight the measure is invariant for the walk's generator; counting each bond
once is not.  For ``R(u) = c u^2/2`` it is the free field with covariance
``b / (2c)``, where ``b`` (``bhat = 1 / (2 dhat)``) is what ``sample_gff``
produces.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as P

from .lattice import SpectralCache, Torus, green_quadratic_form
from .rates import RateSpec

TAGS = ("exact-gaussian", "mcmc", "dynamics")
BOND_MULTIPLICITY = 2.0
MAX_PROPOSALS = 10**6


class SamplerStuck(RuntimeError):
    pass


@dataclass
class TorusField:
    torus: Torus
    values: np.ndarray = field(repr=False)
    tag: str = "exact-gaussian"
    seed: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.torus.shape:
            raise ValueError(f"field shape {self.values.shape} != torus shape {self.torus.shape}")
        if self.tag not in TAGS:
            raise ValueError(f"unknown field tag {self.tag!r}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field has non-finite values")
        if abs(self.values.mean()) > 1e-9:
            raise ValueError("field is not mean-zero")

    def gradient(self, e) -> np.ndarray:
        """``omega(x) - omega(x + e)`` at every site."""
        return self.values - self.torus.shift(self.values, e)


@dataclass(frozen=True)
class McmcConfig:
    sweeps: int = 200
    burn_in: int = 100
    proposal_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.burn_in >= self.sweeps:
            raise ValueError("burn_in must be smaller than sweeps")
        if self.burn_in < 0:
            raise ValueError("burn_in must be non-negative")
        # the envelope must dominate the conditional density
        if not self.proposal_scale >= 1.0:
            raise ValueError("proposal_scale must be >= 1 for a valid rejection envelope")


# ---------------------------------------------------------------------------
# exact Gaussian sampler


def sample_gff_batch(cache: SpectralCache, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Free-field samples with covariance ``b``; shape ``(size, *torus.shape)``."""
    shape = cache.torus.shape if size is None else (size, *cache.torus.shape)
    noise = rng.standard_normal(shape)
    axes = tuple(range(len(shape) - cache.torus.d, len(shape)))
    amp = np.sqrt(cache.bhat_grid)
    out = np.fft.ifftn(amp * np.fft.fftn(noise, axes=axes), axes=axes).real
    return out - out.mean(axis=axes, keepdims=True)


def stationary_gaussian_scale(spec: RateSpec) -> float:
    """Factor turning a free-field draw into a stationary draw when ``r(u) = c u``."""
    return 1.0 / math.sqrt(BOND_MULTIPLICITY * spec.r[1])


def sample_gff(cache: SpectralCache, seed: int) -> TorusField:
    """One free-field sample: Fourier mode ``k != 0`` has variance ``bhat * L^d``."""
    rng = np.random.default_rng(seed)
    return TorusField(cache.torus, sample_gff_batch(cache, rng), "exact-gaussian", int(seed))


# ---------------------------------------------------------------------------
# heat-bath MCMC


def checkerboard(torus: Torus) -> np.ndarray:
    if torus.L % 2:
        raise ValueError("checkerboard sweeps need an even side length")
    idx = np.indices(torus.shape).sum(axis=0)
    return (idx % 2).astype(bool)


def _conditional_minimizer(nb: np.ndarray, r: np.ndarray, rp: np.ndarray) -> np.ndarray:
    # sum_j r(v - nb_j) = 0 has a unique root in [min nb, max nb]
    lo, hi = nb.min(axis=0), nb.max(axis=0)
    v = nb.mean(axis=0)
    for _ in range(100):
        g = P.polyval(v[None] - nb, r).sum(axis=0)
        gp = P.polyval(v[None] - nb, rp).sum(axis=0)
        lo = np.where(g < 0, v, lo)
        hi = np.where(g > 0, v, hi)
        step = g / gp
        nv = v - step
        bad = (nv <= lo) | (nv >= hi)
        nv = np.where(bad, 0.5 * (lo + hi), nv)
        if np.all(np.abs(nv - v) <= 1e-14 * (1.0 + np.abs(v))):
            return nv
        v = nv
    return v


def heat_bath_update(values: np.ndarray, mask: np.ndarray, spec: RateSpec, torus: Torus,
                     rng: np.random.Generator, scale: float = 1.0) -> int:
    """Resample every site in ``mask`` from its conditional law, in place.

    The conditional energy is ``2 sum_e R(v - nb_e)``.  Rejection from a
    Gaussian envelope centred at its mode with variance
    ``scale^2 / (4 d c)``; valid because ``R'' >= c``.  Returns the number of
    proposals used.
    """
    r, rp, R = spec.r, P.polyder(spec.r), spec.R
    units = torus.unit_vectors()
    nb = np.stack([torus.shift(values, e)[..., mask] for e in units])
    vstar = _conditional_minimizer(nb, r, rp)
    kap = BOND_MULTIPLICITY
    h_star = kap * P.polyval(vstar[None] - nb, R).sum(axis=0)
    k = kap * torus.d * spec.c / scale**2
    sd = scale / math.sqrt(2.0 * kap * torus.d * spec.c)
    out = np.empty_like(vstar)
    pending = np.ones(vstar.shape, dtype=bool)
    proposals = 0
    rounds = 0
    while pending.any():
        rounds += 1
        if rounds > MAX_PROPOSALS:
            raise SamplerStuck(f"{int(pending.sum())} sites exceeded {MAX_PROPOSALS} proposals")
        idx = np.nonzero(pending)
        v = vstar[idx] + sd * rng.standard_normal(idx[0].shape)
        nbi = nb[(slice(None), *idx)]
        excess = kap * P.polyval(v[None] - nbi, R).sum(axis=0) - h_star[idx] - k * (v - vstar[idx]) ** 2
        acc = np.log(rng.random(v.shape)) < -excess
        proposals += v.size
        hit = tuple(ix[acc] for ix in idx)
        out[hit] = v[acc]
        pending[hit] = False
    values[..., mask] = out
    return proposals


def heat_bath_sweeps(values: np.ndarray, spec: RateSpec, torus: Torus, rng: np.random.Generator,
                     n_sweeps: int, scale: float = 1.0, monitor=None) -> np.ndarray:
    """Checkerboard sweeps on ``values`` (any leading batch shape), mean re-pinned each sweep."""
    black = checkerboard(torus)
    axes = tuple(range(values.ndim - torus.d, values.ndim))
    for sweep in range(n_sweeps):
        for mask in (black, ~black):
            heat_bath_update(values, mask, spec, torus, rng, scale)
        values -= values.mean(axis=axes, keepdims=True)
        if monitor is not None:
            monitor(sweep, values)
    return values


def sample_gibbs_mcmc(spec: RateSpec, torus: Torus, config: McmcConfig) -> TorusField:
    rng = np.random.default_rng(config.seed)
    values = np.zeros(torus.shape)
    heat_bath_sweeps(values, spec, torus, rng, config.burn_in + config.sweeps, config.proposal_scale)
    return TorusField(torus, values, "mcmc", int(config.seed))


def mcmc_chains(spec: RateSpec, torus: Torus, config: McmcConfig, n_chains: int):
    """Independent chains run side by side.

    Returns the final fields ``(n_chains, *shape)`` and the trace of the mean
    squared bond gradient along ``e_1`` per chain and sweep.
    """
    rng = np.random.default_rng(config.seed)
    values = np.zeros((n_chains, *torus.shape))
    e1 = torus.unit_vectors()[0]
    total = config.burn_in + config.sweeps
    trace = np.empty((n_chains, total))
    axes = tuple(range(1, values.ndim))

    def monitor(sweep, v):
        g = v - torus.shift(v, e1)
        trace[:, sweep] = (g**2).mean(axis=axes)

    heat_bath_sweeps(values, spec, torus, rng, total, config.proposal_scale, monitor)
    return values, trace


def gelman_rubin(trace: np.ndarray) -> float:
    """Potential scale reduction factor of ``trace`` with shape ``(chains, draws)``."""
    m, n = trace.shape
    means = trace.mean(axis=1)
    W = trace.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1)
    var_hat = (n - 1) / n * W + B / n
    return float(np.sqrt(var_hat / W))


def conditional_normalization(spec: RateSpec, neighbors, n: int = 20001) -> float:
    """Integral of the normalised single-site conditional density (should be 1).

    The normaliser comes from adaptive quadrature, the check integral from
    Simpson's rule on a uniform grid around the mode.
    """
    from scipy import integrate

    nb = np.asarray(neighbors, dtype=float)[:, None]
    vstar = float(_conditional_minimizer(nb, spec.r, P.polyder(spec.r))[0])
    H = lambda v: BOND_MULTIPLICITY * P.polyval(np.atleast_1d(v)[None, :] - nb, spec.R).sum(axis=0)
    h0 = H(vstar)[0]
    width = 12.0 / math.sqrt(nb.shape[0] * spec.c)
    Z, _ = integrate.quad(lambda v: math.exp(h0 - H(v)[0]), vstar - width, vstar + width,
                          limit=400, epsabs=1e-14, epsrel=1e-13)
    grid = np.linspace(vstar - width, vstar + width, n)
    return float(integrate.simpson(np.exp(h0 - H(grid)) / Z, x=grid))


# ---------------------------------------------------------------------------
# Brascamp-Lieb and Z(lambda)


def default_dipole_family(torus: Torus) -> dict:
    """Linear bond functionals ``F = sum_z alpha(z) (omega(z) - omega(z + e_1))``."""
    zero = (0,) * torus.d
    e2 = tuple(1 if i == 1 else 0 for i in range(torus.d)) if torus.d > 1 else (2,)
    two_e1 = tuple(2 if i == 0 else 0 for i in range(torus.d))
    return {
        "bond": {zero: 1.0},
        "dipole_transverse": {zero: 1.0, e2: -1.0},
        "dipole_longitudinal": {zero: 1.0, two_e1: -1.0},
    }


def bond_functional_values(fields: np.ndarray, torus: Torus, alpha: dict, e=None) -> np.ndarray:
    """``F(tau_x omega)`` at every base point ``x``; fields has a leading replica axis."""
    e = torus.unit_vectors()[0] if e is None else np.asarray(e)
    g = fields - torus.shift(fields, e)
    out = np.zeros_like(fields)
    for z, a in alpha.items():
        out += a * torus.shift(g, z)
    return out


def bond_functional_gradient(torus: Torus, alpha: dict, e=None) -> np.ndarray:
    """Coefficient field ``beta(y) = dF/domega(y)`` of a linear bond functional."""
    e = torus.unit_vectors()[0] if e is None else np.asarray(e)
    beta = np.zeros(torus.shape)
    for z, a in alpha.items():
        beta[torus.wrap(z)] += a
        beta[torus.wrap(np.asarray(z) + e)] -= a
    return beta


def gaussian_z(lam, v):
    """``E exp(lam g^2)`` for ``g ~ N(0, v)``."""
    return (1.0 - 2.0 * np.asarray(lam) * v) ** -0.5


def _jackknife_se(per_replica: np.ndarray, estimator) -> tuple[float, float]:
    from .estimators import jackknife

    return jackknife(per_replica, estimator)


def brascamp_lieb_check(fields: np.ndarray, spec: RateSpec, lam: float, cache: SpectralCache,
                        family: dict | None = None) -> dict:
    """Monte Carlo check of the weighted Brascamp-Lieb inequality.

    For each ``F`` in ``family`` compares ``Z E[F^2 W]`` with
    ``Q Z^2 / (c - lam) + E[F W]^2`` where ``W = exp(lam g^2)``,
    ``g = omega(0) - omega(e_1)`` and ``Q`` is the Green quadratic form of
    ``dF``.  A violation is flagged only beyond 3 jackknife standard errors.
    """
    if not 0.0 <= lam < spec.c:
        raise ValueError(f"lambda must lie in [0, c), got {lam}")
    torus = cache.torus
    family = default_dipole_family(torus) if family is None else family
    fields = np.asarray(fields, dtype=float)
    axes = tuple(range(1, fields.ndim))
    e1 = torus.unit_vectors()[0]
    g = fields - torus.shift(fields, e1)
    W = np.exp(lam * g**2)
    out = {"lambda": lam, "c": spec.c, "replicas": int(fields.shape[0]), "functionals": {}}
    for name, alpha in family.items():
        F = bond_functional_values(fields, torus, alpha)
        Q = green_quadratic_form(cache, bond_functional_gradient(torus, alpha))
        cols = np.stack([W.mean(axis=axes), (F**2 * W).mean(axis=axes), (F * W).mean(axis=axes)], axis=1)

        def parts(m):
            Z, A, B = m
            return Z * A, Q * Z**2 / (spec.c - lam) + B**2

        lhs, rhs = parts(cols.mean(axis=0))
        diff, se = _jackknife_se(cols, lambda x: np.subtract(*parts(x.mean(axis=0))))
        _, lhs_se = _jackknife_se(cols, lambda x: parts(x.mean(axis=0))[0])
        out["functionals"][name] = {
            "lhs": float(lhs),
            "rhs": float(rhs),
            "lhs_se": float(lhs_se),
            "diff": float(diff),
            "diff_se": float(se),
            "quadratic_form": Q,
            "violated": bool(diff > 3.0 * se),
        }
    out["passed"] = not any(v["violated"] for v in out["functionals"].values())
    return out


def z_lambda_bound_check(fields: np.ndarray, spec: RateSpec, lambdas, cache: SpectralCache) -> dict:
    """Empirical ``Z(lam)`` against ``(1 - lam/c)^(-beta)``, ``beta = 2(b(0) - b(e))``."""
    lambdas = [float(x) for x in lambdas]
    if any(l < 0 or l > 0.9 * spec.c + 1e-12 for l in lambdas):
        raise ValueError("lambda grid must lie in [0, 0.9 c]")
    torus = cache.torus
    fields = np.asarray(fields, dtype=float)
    axes = tuple(range(1, fields.ndim))
    g = fields - torus.shift(fields, torus.unit_vectors()[0])
    beta = cache.green.bond_variance(0)
    rows = []
    for lam in lambdas:
        per = np.exp(lam * g**2).mean(axis=axes)
        z, se = _jackknife_se(per, np.mean)
        bound = (1.0 - lam / spec.c) ** (-beta)
        row = {"lambda": lam, "Z": float(z), "se": float(se), "bound": float(bound),
               "violated": bool(z - bound > 3.0 * se)}
        if spec.is_gaussian:
            exact = float(gaussian_z(lam, beta * stationary_gaussian_scale(spec) ** 2))
            row.update({"gaussian_exact": exact, "gaussian_ok": bool(abs(z - exact) <= 3.0 * se)})
        rows.append(row)
    ok = not any(r["violated"] for r in rows) and all(r.get("gaussian_ok", True) for r in rows)
    return {"beta": beta, "rows": rows, "passed": ok}
