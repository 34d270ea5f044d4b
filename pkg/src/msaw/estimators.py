"""Statistical verdicts on replica ensembles.

Every standard error is a jackknife over replicas.  Replica data are arrays
with the replica index on axis 0.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

MIN_REPLICAS = 30
Z99 = float(stats.norm.ppf(0.995))


class Underpowered(ValueError):
    pass


def _require(n: int, what: str = "check"):
    if n < MIN_REPLICAS:
        raise Underpowered(f"{what} needs at least {MIN_REPLICAS} replicas, got {n}")


def jackknife(samples: np.ndarray, estimator, n_blocks: int | None = None):
    """Delete-a-block jackknife estimate and standard error.

    ``estimator`` maps an array of replica rows to a scalar or array.  With
    ``n_blocks=None`` every replica is its own block (up to 1000 blocks).
    """
    samples = np.asarray(samples)
    n = samples.shape[0]
    if n < 2:
        raise Underpowered("jackknife needs at least 2 replicas")
    k = min(n, 1000) if n_blocks is None else min(n, n_blocks)
    full = np.asarray(estimator(samples), dtype=float)
    bounds = np.linspace(0, n, k + 1).astype(int)
    keep = np.ones(n, dtype=bool)
    loo = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        keep[a:b] = False
        loo.append(np.asarray(estimator(samples[keep]), dtype=float))
        keep[a:b] = True
    loo = np.array(loo)
    mean_loo = loo.mean(axis=0)
    var = (k - 1) / k * np.sum((loo - mean_loo) ** 2, axis=0)
    return (full if full.ndim else float(full)), (np.sqrt(var) if np.ndim(var) else float(np.sqrt(var)))


def mean_se(samples: np.ndarray):
    """Sample mean and its standard error along axis 0 (the delete-one jackknife of the mean)."""
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[0]
    return samples.mean(axis=0), samples.std(axis=0, ddof=1) / math.sqrt(n)


# ---------------------------------------------------------------------------
# mergeable accumulators


class _Compensated:
    """Neumaier-compensated running sum of equally shaped arrays."""

    def __init__(self, shape):
        self.total = np.zeros(shape)
        self.comp = np.zeros(shape)

    def add(self, x):
        x = np.asarray(x, dtype=float)
        t = self.total + x
        big = np.abs(self.total) >= np.abs(x)
        self.comp += np.where(big, (self.total - t) + x, (x - t) + self.total)
        self.total = t

    def value(self):
        return self.total + self.comp


@dataclass
class EnsembleStats:
    """Count, per-time sums and sums of outer products, mergeable in any order."""

    n_times: int
    dim: int
    count: int = 0
    _sum: _Compensated = field(init=False, repr=False)
    _outer: _Compensated = field(init=False, repr=False)

    def __post_init__(self):
        self._sum = _Compensated((self.n_times, self.dim))
        self._outer = _Compensated((self.n_times, self.dim, self.dim))

    def add(self, x: np.ndarray):
        """Add one replica's ``(n_times, dim)`` observation."""
        x = np.asarray(x, dtype=float).reshape(self.n_times, self.dim)
        self.count += 1
        self._sum.add(x)
        self._outer.add(x[:, :, None] * x[:, None, :])

    def extend(self, xs):
        for x in xs:
            self.add(x)
        return self

    def merge(self, other: "EnsembleStats") -> "EnsembleStats":
        if (self.n_times, self.dim) != (other.n_times, other.dim):
            raise ValueError("incompatible accumulators")
        out = EnsembleStats(self.n_times, self.dim)
        out.count = self.count + other.count
        for name in ("_sum", "_outer"):
            acc = getattr(out, name)
            for src in (getattr(self, name), getattr(other, name)):
                acc.add(src.total)
                acc.add(src.comp)
        return out

    @property
    def mean(self) -> np.ndarray:
        return self._sum.value() / self.count

    @property
    def second_moment(self) -> np.ndarray:
        return self._outer.value() / self.count

    @property
    def covariance(self) -> np.ndarray:
        m = self.mean
        c = self.second_moment - m[:, :, None] * m[:, None, :]
        c = 0.5 * (c + np.swapaxes(c, 1, 2))
        return c * self.count / max(self.count - 1, 1)


# ---------------------------------------------------------------------------
# checks on walk ensembles


def _time_index(times: np.ndarray, t: float) -> int:
    idx = int(np.argmin(np.abs(times - t)))
    if abs(times[idx] - t) > 1e-9 * max(1.0, abs(t)):
        raise KeyError(f"time {t} is not on the sample grid")
    return idx


def lln_check(times, displacement, t_grid) -> dict:
    """``mean X_l(t)/t`` with 99% intervals; passes if 0 is inside at the largest time."""
    displacement = np.asarray(displacement, dtype=float)
    _require(displacement.shape[0], "LLN check")
    rows = []
    for t in t_grid:
        i = _time_index(np.asarray(times), t)
        m, se = mean_se(displacement[:, i, :] / t)
        rows.append({"t": float(t), "mean": m.tolist(), "se": se.tolist(), "max_abs": float(np.max(np.abs(m)))})
    last = rows[-1]
    ok = all(abs(m) <= Z99 * s for m, s in zip(last["mean"], last["se"]))
    return {"name": "lln", "rows": rows, "ci_level": 0.99, "passed": bool(ok)}


def _slope(ts, ys):
    A = np.vstack([ts, np.ones_like(ts)]).T
    return np.linalg.lstsq(A, ys, rcond=None)[0][0]


def diffusive_bounds_check(times, displacement, gamma: float, t_grid) -> dict:
    """Lower bound ``E[(e.X(t))^2]/t >= gamma`` and a plateau surrogate for the upper bound.

    The upper bound is a limsup statement; it is operationalised as a
    least-squares slope of the ratio over ``t_grid`` whose 3-SE interval must
    contain 0.  This is a finite-time surrogate, not the limit itself.
    """
    displacement = np.asarray(displacement, dtype=float)
    _require(displacement.shape[0], "diffusive bounds check")
    times = np.asarray(times)
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size < 4:
        raise ValueError("need at least 4 grid points")
    idx = [_time_index(times, t) for t in t_grid]
    d = displacement.shape[2]
    sq = displacement[:, idx, :] ** 2 / t_grid[None, :, None]  # (R, T, d)
    per_dir = []
    lower_ok = upper_ok = plateau_ok = True
    for l in range(d):
        y = sq[:, :, l]
        m, se = mean_se(y)
        slope, slope_se = jackknife(y, lambda s: _slope(t_grid, s.mean(axis=0)))
        half = int(np.argmin(np.abs(t_grid - t_grid[-1] / 2)))
        pdiff, pse = mean_se(y[:, -1] - y[:, half])
        lo = bool(np.all(m >= gamma - 3 * se))
        up = bool(np.all(np.isfinite(m)) and abs(slope) <= 3 * slope_se)
        pl = bool(abs(pdiff) <= 3 * pse)
        lower_ok &= lo
        upper_ok &= up
        plateau_ok &= pl
        per_dir.append({
            "direction": l,
            "ratio": m.tolist(),
            "se": se.tolist(),
            "slope": float(slope),
            "slope_se": float(slope_se),
            "plateau_diff": float(pdiff),
            "plateau_se": float(pse),
            "lower_ok": lo,
            "upper_surrogate_ok": up,
            "plateau_ok": pl,
        })
    return {
        "name": "diffusive_bounds",
        "t_grid": t_grid.tolist(),
        "gamma": gamma,
        "directions": per_dir,
        "lower_passed": bool(lower_ok),
        "upper_surrogate_passed": bool(upper_ok),
        "upper_is_surrogate": True,
        "plateau_passed": bool(plateau_ok),
        "passed": bool(lower_ok and upper_ok),
    }


def sigma_estimate(times, displacement, T: float) -> dict:
    """``E[X_k(T) X_l(T)] / T`` with jackknife errors and cubic-symmetry verdicts."""
    displacement = np.asarray(displacement, dtype=float)
    _require(displacement.shape[0], "sigma estimate")
    x = displacement[:, _time_index(np.asarray(times), T), :]
    prod = x[:, :, None] * x[:, None, :] / T
    prod = 0.5 * (prod + np.swapaxes(prod, 1, 2))
    m, se = mean_se(prod)
    d = x.shape[1]
    off = [(k, l) for k in range(d) for l in range(k + 1, d)]
    off_ok = all(abs(m[k, l]) <= 3 * se[k, l] for k, l in off)
    diag_pairs = []
    for k, l in off:
        dm, ds = mean_se(prod[:, k, k] - prod[:, l, l])
        diag_pairs.append({"pair": [k, l], "diff": float(dm), "se": float(ds), "ok": bool(abs(dm) <= 3 * ds)})
    diag_ok = all(p["ok"] for p in diag_pairs)
    return {
        "name": "sigma",
        "T": float(T),
        "sigma2": m.tolist(),
        "se": se.tolist(),
        "offdiag_zero": bool(off_ok),
        "diag_pairs": diag_pairs,
        "diag_equal": bool(diag_ok),
        "passed": bool(off_ok and diag_ok),
    }


def _skew(x):
    x = x - x.mean(axis=0)
    return (x**3).mean(axis=0) / (x**2).mean(axis=0) ** 1.5


def _exkurt(x):
    x = x - x.mean(axis=0)
    return (x**4).mean(axis=0) / (x**2).mean(axis=0) ** 2 - 3.0


def anderson_darling_pvalue(x: np.ndarray, seed: int = 0) -> float:
    """Monte Carlo AD p-value against a normal with fitted parameters."""
    res = stats.goodness_of_fit(stats.norm, x, statistic="ad", n_mc_samples=499,
                                random_state=np.random.default_rng(seed))
    return float(res.pvalue)


def clt_check(times, displacement, s: float, t: float, ad_seed: int = 0) -> dict:
    """Gaussian and independent-increment signatures of ``X_N(u) = X(N u)/sqrt(N)`` with ``N = t``."""
    displacement = np.asarray(displacement, dtype=float)
    _require(displacement.shape[0], "CLT check")
    times = np.asarray(times)
    xs = displacement[:, _time_index(times, s), :] / math.sqrt(t)
    xt = displacement[:, _time_index(times, t), :] / math.sqrt(t)
    d = xt.shape[1]
    comps = []
    ok = True
    for l in range(d):
        sk, sk_se = jackknife(xt[:, l], _skew)
        ku, ku_se = jackknife(xt[:, l], _exkurt)
        pair = np.stack([xs[:, l], xt[:, l]], axis=1)

        def cov_minus_var(p):
            a, b = p[:, 0] - p[:, 0].mean(), p[:, 1] - p[:, 1].mean()
            return (a * b).mean() - (a * a).mean()

        cv, cv_se = jackknife(pair, cov_minus_var)
        ratio = float(np.cov(pair.T)[0, 1] / np.var(pair[:, 0], ddof=1))
        row = {
            "component": l,
            "skewness": float(sk), "skewness_se": float(sk_se),
            "excess_kurtosis": float(ku), "excess_kurtosis_se": float(ku_se),
            "cov_minus_var": float(cv), "cov_minus_var_se": float(cv_se),
            "cov_over_var": ratio,
            "ad_pvalue": anderson_darling_pvalue(xt[:, l], ad_seed + l),
        }
        row["ok"] = bool(abs(sk) <= 3 * sk_se and abs(ku) <= 3 * ku_se and abs(cv) <= 3 * cv_se)
        ok &= row["ok"]
        comps.append(row)
    return {"name": "clt", "s": float(s), "t": float(t), "components": comps,
            "ad_is_advisory": True, "passed": bool(ok)}


def martingale_check(displacement_T, comp_bar_T, comp_tilde_T, gamma_jumps_T) -> dict:
    """``X - int(phibar + phitilde)`` is centred and the gamma-martingale ``N`` is uncorrelated with the rest."""
    X = np.asarray(displacement_T, dtype=float)
    _require(X.shape[0], "martingale check")
    Y = X - np.asarray(comp_bar_T) - np.asarray(comp_tilde_T)
    N = np.asarray(gamma_jumps_T, dtype=float)
    m, se = mean_se(Y)
    c, cse = mean_se(N * (X - N))
    comp_ok = bool(np.all(np.abs(m) <= 3 * se))
    orth_ok = bool(np.all(np.abs(c) <= 3 * cse))
    return {
        "name": "martingale",
        "compensated_mean": m.tolist(), "compensated_se": se.tolist(),
        "n_rest_cov": c.tolist(), "n_rest_se": cse.tolist(),
        "compensated_ok": comp_ok, "orthogonality_ok": orth_ok,
        "passed": comp_ok and orth_ok,
    }


def stationarity_check(snap0, snapt, orders=(1, 2, 3, 4), expected_second=None) -> dict:
    """Gradient moments at time 0 against time ``t``, paired over replicas.

    ``snap0`` and ``snapt`` have shape ``(replicas, n_gradients)``.
    """
    a, b = np.asarray(snap0, dtype=float), np.asarray(snapt, dtype=float)
    _require(a.shape[0], "stationarity check")
    rows = []
    ok = True
    for k in orders:
        diff, se = mean_se(b**k - a**k)
        m0, _ = mean_se(a**k)
        mt, mt_se = mean_se(b**k)
        good = bool(np.all(np.abs(diff) <= 3 * se + 1e-15))
        ok &= good
        rows.append({"order": k, "moment0": m0.tolist(), "moment_t": mt.tolist(), "moment_t_se": mt_se.tolist(),
                     "diff": diff.tolist(), "se": se.tolist(), "ok": good})
    out = {"name": "stationarity", "rows": rows, "passed": bool(ok)}
    if expected_second is not None:
        mt, se = mean_se(b**2)
        out["second_moment_vs_exact"] = {
            "exact": float(expected_second), "estimate": mt.tolist(), "se": se.tolist(),
            "ok": bool(np.all(np.abs(mt - expected_second) <= 3 * se)),
        }
    return out


def yaglom_check(snap0, snapt, pairs=None, powers=(1, 3)) -> dict:
    """``E[g(G0) h(Gt)] = E[g(-Gt) h(-G0)]`` for odd power test functions.

    ``pairs`` lists gradient index pairs ``(i, j)``; ``g`` acts on gradient
    ``i`` and ``h`` on gradient ``j``.
    """
    a, b = np.asarray(snap0, dtype=float), np.asarray(snapt, dtype=float)
    _require(a.shape[0], "Yaglom check")
    G = a.shape[1]
    pairs = [(i, j) for i in range(G) for j in range(G)] if pairs is None else pairs
    rows = []
    ok = True
    for i, j in pairs:
        for p in powers:
            for q in powers:
                fwd = a[:, i] ** p * b[:, j] ** q
                rev = (-b[:, i]) ** p * (-a[:, j]) ** q
                dm, ds = mean_se(fwd - rev)
                good = bool(abs(dm) <= 3 * ds + 1e-15)
                ok &= good
                rows.append({"g": [int(i), p], "h": [int(j), q], "forward": float(fwd.mean()),
                             "reversed": float(rev.mean()), "diff": float(dm), "se": float(ds), "ok": good})
    return {"name": "yaglom", "rows": rows, "passed": bool(ok)}


# ---------------------------------------------------------------------------
# covariance spectra of local functionals


@dataclass
class ChatResult:
    values: np.ndarray
    se: np.ndarray
    mean: float

    def infrared(self, dhat_grid: np.ndarray) -> float:
        """``sum_{p != 0} Chat(p) / Dhat(p) * (2 pi / L)^d`` (Riemann sum of the infrared integral)."""
        d = dhat_grid.ndim
        L = dhat_grid.shape[0]
        nz = dhat_grid > 0
        return float(np.sum(self.values[nz] / dhat_grid[nz]) * (2 * np.pi / L) ** d)


def chat_estimate(fields, local_values) -> ChatResult:
    """Structure function ``Chat(p) = sum_x e^{ipx} Cov(f, f o tau_x)`` from replicas.

    ``local_values(fields)`` must return ``f(tau_x omega)`` at every site, with
    the replica axis first.  Values are centred by the ensemble mean; a mean
    more than 3 SE away from zero triggers a warning.
    """
    fields = np.asarray(fields, dtype=float)
    h = np.asarray(local_values(fields), dtype=float)
    axes = tuple(range(1, h.ndim))
    per_rep_mean = h.mean(axis=axes)
    m, se = mean_se(per_rep_mean)
    if abs(m) > 3 * se and abs(m) > 1e-12:
        warnings.warn("functional is not centred; subtracting the ensemble mean", RuntimeWarning)
    h = h - m
    vol = np.prod(h.shape[1:])
    spec = np.abs(np.fft.fftn(h, axes=axes)) ** 2 / vol
    val, err = mean_se(spec)
    return ChatResult(val, err, float(m))


def bond_power(torus, n: int, e=None):
    """Local functional ``(omega(0) - omega(e))^n`` evaluated at every base point."""
    e = torus.unit_vectors()[0] if e is None else e

    def f(fields):
        return (fields - torus.shift(fields, e)) ** n

    return f


def phi_tilde_local(torus, r_coeffs, l: int = 0):
    """``r(omega(0) - omega(e_l)) - r(omega(0) - omega(-e_l))`` at every base point."""
    from numpy.polynomial import polynomial as P

    units = torus.unit_vectors()

    def f(fields):
        up = fields - torus.shift(fields, units[2 * l])
        down = fields - torus.shift(fields, units[2 * l + 1])
        return P.polyval(up, r_coeffs) - P.polyval(down, r_coeffs)

    return f
