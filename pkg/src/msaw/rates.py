"""Rate functions w = gamma + s + r and their standing conditions.

The jump rate across a bond is ``w(l(x) - l(y))``.  ``s`` is the even part of
``w`` minus its infimum ``gamma`` and ``r`` the odd part.  Both are stored as
ascending coefficient lists, so everything here is exact polynomial algebra.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as P
from scipy import optimize

GRID_HALF_WIDTH = 50.0
GRID_STEP = 1e-3
COND_TOL = 1e-9
GAMMA_TOL = 1e-6


class InvalidRateSpec(ValueError):
    pass


def _trim(coeffs) -> np.ndarray:
    c = np.asarray(coeffs, dtype=float).ravel()
    if c.size == 0:
        return np.zeros(1)
    return P.polytrim(c, 0.0) if np.any(c) else np.zeros(1)


@dataclass(frozen=True)
class RateSpec:
    gamma: float
    r_coeffs: tuple = (0.0, 1.0)
    s_coeffs: tuple = (0.0,)
    c: float = 1.0
    interaction: bool = True

    def __post_init__(self):
        vals = [self.gamma, self.c, *self.r_coeffs, *self.s_coeffs]
        if not all(math.isfinite(float(v)) for v in vals):
            raise InvalidRateSpec("non-finite rate coefficient")
        if self.gamma <= 0:
            raise InvalidRateSpec(f"gamma must be positive, got {self.gamma}")
        object.__setattr__(self, "r_coeffs", tuple(float(v) for v in self.r_coeffs))
        object.__setattr__(self, "s_coeffs", tuple(float(v) for v in self.s_coeffs))
        if not self.interaction:
            # w == gamma: the simple random walk limit used as an oracle
            object.__setattr__(self, "r_coeffs", (0.0,))
            object.__setattr__(self, "s_coeffs", (0.0,))

    @classmethod
    def constant(cls, gamma: float) -> "RateSpec":
        """Interaction switched off, ``w == gamma``."""
        return cls(gamma=gamma, r_coeffs=(0.0,), s_coeffs=(0.0,), c=1.0, interaction=False)

    @classmethod
    def quartic(cls, gamma=1.0, s4=1.0, s2=0.0, linear=1.0) -> "RateSpec":
        """``r(u) = linear*u`` and ``s(u) = s4 u^4 + s2 u^2 + s0``.

        ``s0`` is chosen so that ``inf w == gamma`` exactly.
        """
        s0 = -_min_poly(np.array([0.0, linear, s2, 0.0, s4]))
        return cls(gamma=gamma, r_coeffs=(0.0, linear), s_coeffs=(s0, 0.0, s2, 0.0, s4), c=linear)

    # polynomial views --------------------------------------------------
    @property
    def r(self) -> np.ndarray:
        return _trim(self.r_coeffs)

    @property
    def s(self) -> np.ndarray:
        return _trim(self.s_coeffs)

    @property
    def w(self) -> np.ndarray:
        return P.polyadd(P.polyadd([self.gamma], self.s), self.r)

    @property
    def R(self) -> np.ndarray:
        return P.polyint(self.r)

    @property
    def is_gaussian(self) -> bool:
        """True when the stationary measure is the free field (``r(u) = c u``)."""
        r = self.r
        return self.interaction and r.size == 2 and r[0] == 0.0 and r[1] > 0

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "c": self.c,
            "r_coeffs": list(self.r_coeffs),
            "s_coeffs": list(self.s_coeffs),
            "interaction": self.interaction,
        }


def _min_poly(coeffs: np.ndarray) -> float:
    """Global minimum of a polynomial bounded below (exact via critical points)."""
    c = _trim(coeffs)
    if c.size == 1:
        return float(c[0])
    crit = P.polyroots(P.polyder(c))
    real = crit[np.abs(crit.imag) < 1e-9].real
    if real.size == 0:
        return -math.inf
    return float(np.min(P.polyval(real, c)))


def eval_w(spec: RateSpec, u):
    return P.polyval(u, spec.w)


def eval_r(spec: RateSpec, u):
    return P.polyval(u, spec.r)


def eval_s(spec: RateSpec, u):
    return P.polyval(u, spec.s)


def potential_R(spec: RateSpec, u):
    """``R(u) = int_0^u r``, integrated term by term."""
    return P.polyval(u, spec.R)


@dataclass
class ValidationReport:
    conditions: dict = field(default_factory=dict)
    inf_w: float = math.nan
    inf_r_prime: float = math.nan
    r_entire_sum: float = math.nan
    s4_over_gamma: float = math.nan
    messages: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.conditions) and all(self.conditions.values())

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "conditions": dict(self.conditions),
            "inf_w": self.inf_w,
            "inf_r_prime": self.inf_r_prime,
            "r_entire_sum": self.r_entire_sum,
            "s4_over_gamma": self.s4_over_gamma,
            "messages": list(self.messages),
        }


def _tail_bounded_below(c: np.ndarray) -> bool:
    # leading term decides |u| -> infinity
    c = _trim(c)
    deg = c.size - 1
    return deg == 0 or (deg % 2 == 0 and c[-1] > 0)


def validate(spec: RateSpec) -> ValidationReport:
    """Check ellipticity, parity, convexity and the entire-function series.

    Conditions are evaluated on ``[-50, 50]`` at step ``1e-3`` and completed
    by critical-point / leading-coefficient analysis outside that window.
    """
    rep = ValidationReport()
    r, s, w = spec.r, spec.s, spec.w
    grid = np.linspace(-GRID_HALF_WIDTH, GRID_HALF_WIDTH, int(round(2 * GRID_HALF_WIDTH / GRID_STEP)) + 1)

    rep.conditions["r_odd"] = bool(np.all(r[0::2] == 0.0))
    rep.conditions["s_even"] = bool(np.all(s[1::2] == 0.0))
    if not rep.conditions["r_odd"]:
        rep.messages.append("r has even-degree coefficients")
    if not rep.conditions["s_even"]:
        rep.messages.append("s has odd-degree coefficients")

    w_grid = P.polyval(grid, w)
    if _tail_bounded_below(w):
        inf_w = min(float(w_grid.min()), _min_poly(w))
    else:
        inf_w = -math.inf
    rep.inf_w = inf_w
    rep.conditions["ellipticity"] = bool(
        math.isfinite(inf_w) and inf_w >= spec.gamma - COND_TOL and abs(inf_w - spec.gamma) <= GAMMA_TOL
    )
    if not rep.conditions["ellipticity"]:
        rep.messages.append(f"inf w = {inf_w!r} does not match gamma = {spec.gamma!r}")

    s_min = min(float(P.polyval(grid, s).min()), _min_poly(s)) if _tail_bounded_below(s) else -math.inf
    rep.conditions["s_nonnegative"] = bool(s_min >= -COND_TOL)

    rp = P.polyder(r) if r.size > 1 else np.zeros(1)
    if _tail_bounded_below(rp):
        inf_rp = min(float(P.polyval(grid, rp).min()), _min_poly(rp))
    else:
        inf_rp = -math.inf
    rep.inf_r_prime = inf_rp
    rep.conditions["convexity"] = bool(inf_rp >= spec.c - COND_TOL and spec.c > 0)
    if not rep.conditions["convexity"]:
        rep.messages.append(f"inf r' = {inf_rp!r} is below c = {spec.c!r}")

    # polynomial s is dominated by any Gaussian envelope
    rep.conditions["s_small"] = True

    fact = np.array([math.factorial(k) for k in range(r.size)], dtype=float)
    series = np.sum((2.0 / spec.c) ** (np.arange(r.size) / 2.0) * np.abs(r * fact))
    rep.r_entire_sum = float(series)
    rep.conditions["r_entire"] = bool(math.isfinite(series))

    rep.s4_over_gamma = float(s[4] / spec.gamma) if s.size > 4 else 0.0
    return rep


def minimize_even_plus_odd(spec: RateSpec) -> tuple[float, float]:
    """Numerical minimiser of ``s + r`` (cross-check for ``gamma``)."""
    f = lambda u: float(P.polyval(u, P.polyadd(spec.s, spec.r)))
    grid = np.linspace(-5, 5, 2001)
    u0 = grid[np.argmin([f(u) for u in grid])]
    res = optimize.minimize_scalar(f, bracket=(u0 - 0.01, u0, u0 + 0.01), tol=1e-12)
    return float(res.x), float(res.fun)
