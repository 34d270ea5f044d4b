"""Gaussian Fock-space operators on the torus momentum grid.

Sector ``n`` holds symmetric functions of ``n`` nonzero torus momenta, stored
as a full complex tensor of shape ``(M,) * n`` with ``M = L^d - 1``.  The
inner product is

    <u, v>_n = L^{-dn} sum_p conj(u(p)) v(p) prod_m bhat(p_m),

so the creation vector of the bond gradient, ``e^{i p.e} - 1``, has squared
norm ``2 (b(0) - b(e))``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.polynomial import polynomial as P

from .lattice import SpectralCache, Torus, dhat, quadrature

MAX_TENSOR = 4_000_000


class InvalidSector(ValueError):
    pass


class SectorTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class ModeGrid:
    torus: Torus

    @cached_property
    def k(self) -> np.ndarray:
        """Integer momentum labels ``(M, d)``, zero mode excluded."""
        ks = np.indices(self.torus.shape).reshape(self.torus.d, -1).T
        return ks[1:]

    @cached_property
    def p(self) -> np.ndarray:
        return 2.0 * np.pi * self.k / self.torus.L

    @property
    def M(self) -> int:
        return self.k.shape[0]

    @cached_property
    def bhat(self) -> np.ndarray:
        return 1.0 / (2.0 * dhat(self.p.T))

    @cached_property
    def weight(self) -> np.ndarray:
        """Per-slot measure ``bhat(p) / L^d``."""
        return self.bhat / self.torus.volume

    def direction(self, e) -> np.ndarray:
        e = np.asarray(e)
        if e.ndim == 0:
            e = self.torus.unit_vectors()[int(e)]
        return e

    def phase(self, e) -> np.ndarray:
        """``e^{i p.e}`` per mode."""
        return np.exp(1j * (self.p @ self.direction(e)))

    def creation_vector(self, e) -> np.ndarray:
        return self.phase(e) - 1.0

    def total_momentum(self, n: int) -> np.ndarray:
        """Integer labels of ``sum_m p_m`` mod ``L`` on sector ``n``: shape ``(d, M, ..., M)``."""
        _check_size(self.M, n)
        tot = np.zeros((self.torus.d,) + (self.M,) * n, dtype=np.int64)
        for m in range(n):
            shape = [1] * n
            shape[m] = self.M
            tot += self.k.T.reshape((self.torus.d, *shape))
        return tot % self.torus.L

    def sector_weights(self, n: int) -> np.ndarray:
        out = np.ones(())
        for _ in range(n):
            out = np.multiply.outer(out, self.weight)
        return out


def _check_size(M: int, n: int):
    if M**n > MAX_TENSOR:
        raise SectorTooLarge(f"sector {n} with {M} modes has {M**n} entries")


@dataclass
class GradedVector:
    """A vector of a single sector."""

    grid: ModeGrid
    n: int
    coef: np.ndarray

    def __post_init__(self):
        self.coef = np.asarray(self.coef, dtype=complex)
        if self.coef.shape != (self.grid.M,) * self.n:
            raise InvalidSector(f"coefficient shape {self.coef.shape} does not match sector {self.n}")

    @classmethod
    def vacuum(cls, grid: ModeGrid) -> "GradedVector":
        return cls(grid, 0, np.ones(()))

    @classmethod
    def random(cls, grid: ModeGrid, n: int, rng: np.random.Generator) -> "GradedVector":
        _check_size(grid.M, n)
        shape = (grid.M,) * n
        z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        return cls(grid, n, symmetrize(z))

    def inner(self, other: "GradedVector") -> complex:
        if other.n != self.n:
            return 0.0
        return complex(np.sum(np.conj(self.coef) * other.coef * self.grid.sector_weights(self.n)))

    def norm(self) -> float:
        return math.sqrt(max(self.inner(self).real, 0.0))

    def __add__(self, other):
        return GradedVector(self.grid, self.n, self.coef + other.coef)

    def __sub__(self, other):
        return GradedVector(self.grid, self.n, self.coef - other.coef)

    def scale(self, c) -> "GradedVector":
        return GradedVector(self.grid, self.n, c * self.coef)

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        return bool(np.max(np.abs(self.coef - symmetrize(self.coef)), initial=0.0) <= tol)


def symmetrize(a: np.ndarray) -> np.ndarray:
    import itertools

    n = a.ndim
    if n < 2:
        return a.copy()
    perms = list(itertools.permutations(range(n)))
    return sum(np.transpose(a, p) for p in perms) / len(perms)


# ---------------------------------------------------------------------------
# operators


def apply_nabla(e, v: GradedVector) -> GradedVector:
    """Shift difference ``tau_e - 1``: multiplier ``e^{i (sum p).e} - 1``."""
    return GradedVector(v.grid, v.n, _nabla_multiplier(v.grid, e, v.n) * v.coef)


def apply_shift(e, v: GradedVector) -> GradedVector:
    """``T_e``: multiplier ``e^{i (sum p).e}``."""
    return GradedVector(v.grid, v.n, _phase_product(v.grid, e, v.n) * v.coef)


def _phase_product(grid: ModeGrid, e, n: int) -> np.ndarray:
    out = np.ones((), dtype=complex)
    z = grid.phase(e)
    for _ in range(n):
        out = np.multiply.outer(out, z)
    return out


def _nabla_multiplier(grid: ModeGrid, e, n: int) -> np.ndarray:
    return _phase_product(grid, e, n) - 1.0


def delta_inv_sqrt_nabla_multiplier(grid: ModeGrid, e, n: int) -> np.ndarray:
    """``(e^{i P.e} - 1) / sqrt(2 dhat(P))`` with ``P = sum p``; zero where ``P = 0``."""
    return _nabla_multiplier(grid, e, n) * _inv_sqrt_laplacian(grid, n)


def _inv_sqrt_laplacian(grid: ModeGrid, n: int) -> np.ndarray:
    tot = grid.total_momentum(n)
    D = dhat(2.0 * np.pi * tot / grid.torus.L)
    out = np.zeros(D.shape)
    nz = D > 1e-12
    out[nz] = 1.0 / np.sqrt(2.0 * D[nz])
    return out


def apply_delta_inv_sqrt_nabla(e, v: GradedVector) -> GradedVector:
    return GradedVector(v.grid, v.n, delta_inv_sqrt_nabla_multiplier(v.grid, e, v.n) * v.coef)


def apply_inv_sqrt_laplacian(v: GradedVector) -> GradedVector:
    """``|Delta|^{-1/2}`` as a pseudo-inverse (zero on total momentum 0)."""
    return GradedVector(v.grid, v.n, _inv_sqrt_laplacian(v.grid, v.n) * v.coef)


def apply_creation(e, v: GradedVector) -> GradedVector:
    """``a*_e``: sector ``n`` to ``n + 1``."""
    n = v.n
    _check_size(v.grid.M, n + 1)
    f = v.grid.creation_vector(e)
    outer = np.multiply.outer(f, v.coef)
    total = sum(np.moveaxis(outer, 0, m) for m in range(n + 1))
    return GradedVector(v.grid, n + 1, total / math.sqrt(n + 1))


def apply_annihilation(e, v: GradedVector) -> GradedVector:
    """``a_e``: sector ``n`` to ``n - 1``, contracting the last slot."""
    if v.n < 1:
        raise InvalidSector("annihilation on the vacuum sector")
    g = np.conj(v.grid.creation_vector(e)) * v.grid.weight
    return GradedVector(v.grid, v.n - 1, math.sqrt(v.n) * np.tensordot(v.coef, g, axes=([-1], [0])))


def apply_partial(v: GradedVector) -> GradedVector:
    """``sum_e a_e`` over all ``2d`` directions."""
    out = None
    for e in range(2 * v.grid.torus.d):
        t = apply_annihilation(e, v)
        out = t if out is None else out + t
    return out


def apply_partial_adjoint(v: GradedVector) -> GradedVector:
    out = None
    for e in range(2 * v.grid.torus.d):
        t = apply_creation(e, v)
        out = t if out is None else out + t
    return out


# graded (multi-sector) vectors are dicts {n: GradedVector}


def _gadd(acc: dict, v: GradedVector):
    if v.n in acc:
        acc[v.n] = acc[v.n] + v
    else:
        acc[v.n] = v


def apply_field(e, vec: dict, max_sector: int | None = None) -> dict:
    """``N_e = a_e + a*_e`` on a graded vector; sectors above ``max_sector`` are dropped."""
    out: dict = {}
    for n, v in vec.items():
        if max_sector is None or n + 1 <= max_sector:
            _gadd(out, apply_creation(e, v))
        if n >= 1:
            _gadd(out, apply_annihilation(e, v))
    return out


def apply_polynomial_of_field(e, coeffs, vec: dict, max_sector: int | None = None) -> dict:
    """``s(N_e)`` by Horner's rule on graded vectors."""
    c = np.asarray(coeffs, dtype=float)
    acc: dict = {}
    for k in range(c.size - 1, -1, -1):
        acc = apply_field(e, acc, max_sector) if acc else {}
        if c[k] != 0.0:
            for n, v in vec.items():
                _gadd(acc, v.scale(c[k]))
    return acc


def graded_norm(vec: dict) -> float:
    return math.sqrt(sum(v.inner(v).real for v in vec.values()))


# ---------------------------------------------------------------------------
# norms


@dataclass
class NormEstimate:
    value: float
    iterations: int
    residual: float
    converged: bool

    def to_dict(self) -> dict:
        return {"value": self.value, "iterations": self.iterations, "residual": self.residual,
                "converged": self.converged}


def power_norm(apply, adjoint, v0: GradedVector, maxiter: int = 2000, tol: float = 1e-14) -> NormEstimate:
    """Largest singular value of ``apply`` by power iteration on ``adjoint . apply``."""
    v = v0.scale(1.0 / v0.norm())
    lam = 0.0
    resid = math.inf
    for it in range(1, maxiter + 1):
        w = adjoint(apply(v))
        new = v.inner(w).real
        nw = w.norm()
        if nw == 0.0:
            return NormEstimate(0.0, it, 0.0, True)
        # residual of the eigen-equation for the Rayleigh quotient
        resid = (w - v.scale(new)).norm() / max(nw, 1e-300)
        v = w.scale(1.0 / nw)
        if abs(new - lam) <= tol * max(abs(new), 1e-300) and resid < 1e-6:
            lam = new
            return NormEstimate(math.sqrt(max(lam, 0.0)), it, resid, True)
        lam = new
    return NormEstimate(math.sqrt(max(lam, 0.0)), maxiter, resid, False)


def creation_norm(grid: ModeGrid, e, n: int, seed: int = 0) -> NormEstimate:
    v0 = GradedVector.random(grid, n, np.random.default_rng(seed)) if n else GradedVector.vacuum(grid)
    return power_norm(lambda v: apply_creation(e, v), lambda v: apply_annihilation(e, v), v0)


def annihilation_norm(grid: ModeGrid, e, n: int, seed: int = 0) -> NormEstimate:
    v0 = GradedVector.random(grid, n, np.random.default_rng(seed))
    return power_norm(lambda v: apply_annihilation(e, v), lambda v: apply_creation(e, v), v0)


def inv_sqrt_creation_norm(grid: ModeGrid, e, n: int, seed: int = 0) -> NormEstimate:
    """Norm of ``|Delta|^{-1/2} a*_e`` on sector ``n``."""
    v0 = GradedVector.random(grid, n, np.random.default_rng(seed)) if n else GradedVector.vacuum(grid)
    fwd = lambda v: apply_inv_sqrt_laplacian(apply_creation(e, v))
    back = lambda v: apply_annihilation(e, apply_inv_sqrt_laplacian(v))
    return power_norm(fwd, back, v0)


def creation_norm_constant(cache: SpectralCache, l: int = 0) -> float:
    """``sqrt(2 (b(0) - b(e)))``, the sector-independent factor of ``||a*_e|| / sqrt(n + 1)``."""
    return math.sqrt(cache.green.bond_variance(l))


def multiplier_sup(grid: ModeGrid, e, n: int = 1) -> float:
    return float(np.max(np.abs(delta_inv_sqrt_nabla_multiplier(grid, e, n))))


def adjointness_residuals(grid: ModeGrid, n_max: int = 2, seed: int = 0) -> dict:
    """Relative defects of the adjoint pairs on random symmetric vectors."""
    rng = np.random.default_rng(seed)
    d = grid.torus.d
    out = {}
    for n in range(1, n_max + 1):
        u = GradedVector.random(grid, n - 1, rng) if n > 1 else GradedVector(grid, 0, np.array(rng.standard_normal() + 1j))
        v = GradedVector.random(grid, n, rng)
        w = GradedVector.random(grid, n, rng)
        for e in range(2 * d):
            lhs = apply_creation(e, u).inner(v)
            rhs = u.inner(apply_annihilation(e, v))
            out[f"creation/annihilation n={n} e={e}"] = abs(lhs - rhs) / max(abs(lhs), 1.0)
            opp = e + 1 if e % 2 == 0 else e - 1
            lhs = apply_nabla(e, w).inner(v)
            rhs = w.inner(apply_nabla(opp, v))
            out[f"nabla n={n} e={e}"] = abs(lhs - rhs) / max(abs(lhs), 1.0)
    return out


# ---------------------------------------------------------------------------
# s(N_e) on a sector


def _single_mode_field(v: float, size: int) -> np.ndarray:
    """``sqrt(v) (b + b^dagger)`` on occupation numbers ``0..size-1``."""
    off = np.sqrt(np.arange(1, size))
    return math.sqrt(v) * (np.diag(off, 1) + np.diag(off, -1))


def s1_sector_norm(s_coeffs, v: float, n: int) -> dict:
    """``||s(N_e) restricted to H_n||`` through the single-mode reduction.

    ``N_e`` only sees the occupation ``k`` of the normalised mode along the
    creation vector; sector ``n`` is the orthogonal sum over ``k <= n``, so the
    restricted norm is ``max_k ||s(X)|k>||`` with ``X = sqrt(v)(b + b^dagger)``.
    """
    c = np.trim_zeros(np.asarray(s_coeffs, dtype=float), "b")
    deg = max(c.size - 1, 0)
    size = n + deg + 2
    X = _single_mode_field(v, size)
    S = np.zeros((size, size))
    Xk = np.eye(size)
    for ck in c:
        S += ck * Xk
        Xk = Xk @ X
    per_k = [float(np.linalg.norm(S[:, k])) for k in range(n + 1)]
    k_star = int(np.argmax(per_k))
    return {"norm": per_k[k_star], "argmax_occupation": k_star, "per_occupation": per_k}


def quartic_constant() -> float:
    """``lim_k ||(b + b^dagger)^4 |k>|| / k^2 = sqrt(70)``."""
    return math.sqrt(70.0)


def s1_sector_norm_bound(s_coeffs, v: float, n: int) -> dict:
    """Sector norm with the leading-order ceiling ``s_4 kappa_4 v^2 n^2``."""
    res = s1_sector_norm(s_coeffs, v, n)
    c = np.asarray(s_coeffs, dtype=float)
    s4 = c[4] if c.size > 4 else 0.0
    ceiling = s4 * quartic_constant() * v**2 * max(n, 1) ** 2
    res.update({"n": n, "v": v, "kappa4": quartic_constant(), "ceiling": ceiling,
                "ratio": res["norm"] / ceiling if ceiling > 0 else math.nan})
    return res


def s1_sector_norm_matrix_free(grid: ModeGrid, s_coeffs, e, n: int, seed: int = 0,
                               maxiter: int = 500) -> NormEstimate:
    """Same quantity by power iteration on ``P_n s(N_e)^2 P_n`` over the full mode grid."""
    deg = np.trim_zeros(np.asarray(s_coeffs, dtype=float), "b").size - 1
    top = n + max(deg, 0)
    _check_size(grid.M, top)

    def fwd(v):
        return apply_polynomial_of_field(e, s_coeffs, {v.n: v}, top)

    def back_then_project(vec):
        # only sectors that can return to n within deg steps matter
        out = apply_polynomial_of_field(e, s_coeffs, vec, top)
        return out.get(n, GradedVector(grid, n, np.zeros((grid.M,) * n)))

    v0 = GradedVector.random(grid, n, np.random.default_rng(seed)) if n else GradedVector.vacuum(grid)
    v = v0.scale(1.0 / v0.norm())
    lam, resid = 0.0, math.inf
    for it in range(1, maxiter + 1):
        w = back_then_project(fwd(v))
        new = v.inner(w).real
        nw = w.norm()
        resid = (w - v.scale(new)).norm() / max(nw, 1e-300)
        v = w.scale(1.0 / nw)
        if abs(new - lam) <= 1e-13 * abs(new):
            return NormEstimate(math.sqrt(new), it, resid, True)
        lam = new
    return NormEstimate(math.sqrt(lam), maxiter, resid, False)


# ---------------------------------------------------------------------------
# integral bound


def gsc_integrand(q, l: int = 0):
    """``|e^{i p_l} - 1|^2 / (dhat(p) dhat(p + q))`` as a function of ``p``."""
    q = np.asarray(q, dtype=float)

    def f(p):
        pq = p + q.reshape((-1,) + (1,) * (p.ndim - 1))
        return 2.0 * (1.0 - np.cos(p[l])) / (dhat(p) * dhat(pq))

    return f


def integral_I(q, n: int = 64, levels: int = 2, l: int = 0):
    d = len(q)
    res = quadrature(gsc_integrand(q, l), d, n=n, levels=levels)
    scale = (2.0 * np.pi) ** -d
    res.value *= scale
    res.error *= scale
    res.levels = {k: v * scale for k, v in res.levels.items()}
    return res


def gsc_integral_bound(d: int = 3, n: int = 64, levels: int = 2, q_points: int = 3, rtol: float = 0.05) -> dict:
    """``sup_q I(q)`` over ``q`` in ``{0, pi/(q_points-1), ..., pi}^d``.

    The integrand is invariant under ``(p_j, q_j) -> (-p_j, -q_j)``, so the
    positive octant of ``q`` suffices.  Grids are shifted so that neither
    ``p`` nor ``p + q`` hits zero.
    """
    if d < 3:
        raise ValueError("the integral diverges for d < 3")
    if n % (2 * (q_points - 1)) and q_points > 1:
        raise ValueError("grid size must be a multiple of 2 (q_points - 1) to keep p + q off zero")
    qs = np.linspace(0.0, np.pi, q_points)
    rows = []
    for idx in np.ndindex(*([q_points] * d)):
        q = qs[list(idx)]
        res = integral_I(q, n, levels)
        rows.append((q, res))
    by_level = {}
    for _, res in rows:
        for k, val in res.levels.items():
            by_level.setdefault(k, []).append(val)
    sup_by_level = {k: max(v) for k, v in by_level.items()}
    ks = sorted(sup_by_level)
    q_best, best = max(rows, key=lambda t: t[1].value)
    rel = abs(sup_by_level[ks[-1]] - sup_by_level[ks[-2]]) / sup_by_level[ks[-1]] if len(ks) > 1 else math.nan
    return {
        "sup": best.value,
        "argmax": q_best.tolist(),
        "sup_by_level": {str(k): v for k, v in sup_by_level.items()},
        "relative_change": rel,
        "extrapolated": best.extrapolated,
        "converged": bool(rel <= rtol),
        "C": math.sqrt(best.value),
    }
