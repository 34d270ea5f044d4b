"""Torus geometry, momentum grids, lattice Green function and quadrature.

Conventions
-----------
* Momenta on the torus are ``p_k = 2 pi k / L`` in numpy FFT order.
* ``dhat(p) = sum_l (1 - cos p_l)``; the lattice Laplacian
  ``Delta = sum_e nabla_e`` has symbol ``-2 dhat``.
* The covariance of the free field (``R(u) = u^2/2``) is ``b = (-Delta)^{-1}``
  on mean-zero fields, i.e. ``bhat = 1 / (2 dhat)`` with ``bhat(0) := 0``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class Torus:
    d: int
    L: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        if self.L < 2:
            raise ValueError("side length must be >= 2")

    @property
    def shape(self) -> tuple:
        return (self.L,) * self.d

    @property
    def volume(self) -> int:
        return self.L**self.d

    def unit_vectors(self) -> np.ndarray:
        """The 2d unit vectors ordered ``+e_1, -e_1, +e_2, -e_2, ...``."""
        out = np.zeros((2 * self.d, self.d), dtype=np.int64)
        for l in range(self.d):
            out[2 * l, l] = 1
            out[2 * l + 1, l] = -1
        return out

    def wrap(self, x) -> tuple:
        return tuple(int(v) % self.L for v in x)

    def neighbors(self, x) -> list:
        return [self.wrap(np.asarray(x) + e) for e in self.unit_vectors()]

    def shift(self, values: np.ndarray, z) -> np.ndarray:
        """``(tau_z f)(x) = f(z + x)`` on the trailing ``d`` axes."""
        axes = tuple(range(values.ndim - self.d, values.ndim))
        return np.roll(values, tuple(-int(v) for v in z), axis=axes)

    def momenta(self) -> list:
        k = 2.0 * np.pi * np.fft.fftfreq(self.L)
        return np.meshgrid(*([k] * self.d), indexing="ij")


def dhat(p) -> float | np.ndarray:
    """``sum_l (1 - cos p_l)``; ``p`` has the coordinate on its first axis."""
    p = np.asarray(p, dtype=float)
    return np.sum(1.0 - np.cos(p), axis=0)


def gamma_kernel_hat(p, d: int | None = None):
    """``(1 - cos p_1) / dhat(p)``, set to ``1/d`` at ``p = 0``."""
    p = np.asarray(p, dtype=float)
    d = p.shape[0] if d is None else d
    D = dhat(p)
    num = 1.0 - np.cos(p[0])
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(D > 0, num / np.where(D > 0, D, 1.0), 1.0 / d)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SpectralCache:
    torus: Torus
    dhat_grid: np.ndarray = field(repr=False)
    bhat_grid: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, torus: Torus) -> "SpectralCache":
        D = dhat(np.array(torus.momenta()))
        bh = np.zeros_like(D)
        nz = D > 0
        bh[nz] = 1.0 / (2.0 * D[nz])
        D.setflags(write=False)
        bh.setflags(write=False)
        return cls(torus, D, bh)

    @cached_property
    def green(self) -> "GreenFunction":
        return torus_green(self)


class GreenFunction:
    """``b(x)`` on the torus, periodic in each coordinate."""

    def __init__(self, torus: Torus, values: np.ndarray):
        self.torus = torus
        self.values = values

    def __call__(self, x) -> float:
        return float(self.values[self.torus.wrap(x)])

    def bond_variance(self, l: int = 0) -> float:
        """``2 (b(0) - b(e_l))`` = Var(omega(0) - omega(e_l))."""
        e = np.zeros(self.torus.d, dtype=int)
        e[l] = 1
        return 2.0 * (self(np.zeros(self.torus.d, dtype=int)) - self(e))

    def laplacian(self) -> np.ndarray:
        """``(-Delta b)(x)``, equal to ``delta_0(x) - L^{-d}``."""
        out = 2 * self.torus.d * self.values
        for e in self.torus.unit_vectors():
            out = out - self.torus.shift(self.values, e)
        return out


def torus_green(cache: SpectralCache) -> GreenFunction:
    b = np.fft.ifftn(cache.bhat_grid).real
    b.setflags(write=False)
    return GreenFunction(cache.torus, b)


def convolve(cache: SpectralCache, kernel_hat: np.ndarray, field_: np.ndarray) -> np.ndarray:
    axes = tuple(range(field_.ndim - cache.torus.d, field_.ndim))
    return np.fft.ifftn(kernel_hat * np.fft.fftn(field_, axes=axes), axes=axes).real


def green_quadratic_form(cache: SpectralCache, beta: np.ndarray) -> float:
    """``sum_{x,y} beta(x) b(x-y) beta(y)`` for a mean-zero coefficient field."""
    bh = np.fft.fftn(beta)
    return float(np.sum(cache.bhat_grid * np.abs(bh) ** 2) / cache.torus.volume)


# ---------------------------------------------------------------------------
# quadrature on [-pi, pi]^d


def shifted_midpoints(n: int, d: int) -> np.ndarray:
    """Midpoint grid that never hits ``p = 0`` when ``n`` is even."""
    h = 2.0 * np.pi / n
    x = (np.arange(n) + 0.5) * h - np.pi
    return np.array(np.meshgrid(*([x] * d), indexing="ij"))


@dataclass
class QuadratureResult:
    value: float
    error: float
    levels: dict
    converged: bool

    @property
    def extrapolated(self) -> float:
        """First-order Richardson value from the two finest levels."""
        ns = sorted(self.levels)
        if len(ns) < 2:
            return self.value
        coarse, fine = self.levels[ns[-2]], self.levels[ns[-1]]
        return 2.0 * fine - coarse

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "error": self.error,
            "extrapolated": self.extrapolated,
            "levels": {str(k): v for k, v in self.levels.items()},
            "converged": self.converged,
        }


def midpoint_rule(f, d: int, n: int, chunk: int | None = None) -> float:
    """Integral of ``f`` over ``[-pi, pi]^d`` on an ``n^d`` shifted midpoint grid.

    ``f`` receives an array of shape ``(d, ...)``.  When ``chunk`` is given the
    first grid axis is processed in slabs; slabs are summed in a fixed order.
    """
    h = 2.0 * np.pi / n
    x = (np.arange(n) + 0.5) * h - np.pi
    if chunk is None or d == 1:
        total = float(np.sum(f(shifted_midpoints(n, d))))
    else:
        parts = []
        for start in range(0, n, chunk):
            grid = np.meshgrid(x[start : start + chunk], *([x] * (d - 1)), indexing="ij")
            parts.append(float(np.sum(f(np.array(grid)))))
        total = float(np.sum(parts))
    return total * h**d


def quadrature(f, d: int, n: int = 64, levels: int = 2, rtol: float = 0.05) -> QuadratureResult:
    """Midpoint values at ``n, n/2, ...`` with a two-level error estimate."""
    ns = [n // 2**k for k in range(levels - 1, -1, -1)]
    vals = {m: midpoint_rule(f, d, m) for m in ns}
    fine = vals[ns[-1]]
    err = abs(fine - vals[ns[-2]]) if len(ns) > 1 else float("nan")
    ok = len(ns) < 2 or err <= rtol * abs(fine)
    return QuadratureResult(fine, err, vals, bool(ok))


def symmetry_images(d: int):
    """Coordinate permutations combined with sign flips."""
    for perm in itertools.permutations(range(d)):
        for signs in itertools.product((1, -1), repeat=d):
            yield perm, signs
