"""Multiplier ``t(n)`` and the minimal threshold ``n1`` of the graded sector condition.

With ``n2 = infinity`` the multiplier is ``t(n) = max(n, n1)^kappa``.  The two
conditions, for every ``n >= 0`` and ``|j| <= r``, are

    |t(n)^2 - t(n+j)^2| / t(n)^2 * (n / (12 r^2 kappa) + C) <= B
    (t(n) - t(n+j))^2 / t(n)^2 * (n^2 / (6 r^3 kappa^2) + C) <= B

with budget ``B = 1 / (2 (2r + 1))``.  For ``n >= n1`` the worst shift is
``j = +r`` and both left sides decrease to the plateau ``1 / (6r)``; below
``n1`` they are dominated by their value at ``n1``.  The minimal ``n1`` is
therefore the first ``n`` where both ``j = +r`` expressions fit the budget.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SLACK = 1e-12
N_MAX = 10**15


class InfeasibleError(ValueError):
    def __init__(self, message: str, limit: float, budget: float):
        super().__init__(message)
        self.limit = limit
        self.budget = budget


@dataclass(frozen=True)
class GscParams:
    r: int
    kappa: float = 2.0
    C: float = 0.0
    n1: int = 1
    n2: float = math.inf

    def __post_init__(self):
        if self.r < 1 or int(self.r) != self.r:
            raise ValueError("r must be a positive integer")
        if self.kappa < 2:
            raise ValueError("kappa must be >= 2")
        if self.C < 0:
            raise ValueError("C must be non-negative")
        if not 0 < self.n1 < self.n2:
            raise ValueError("need 0 < n1 < n2")


def t_multiplier(n, params: GscParams):
    n = np.asarray(n, dtype=float)
    return np.clip(n, params.n1, params.n2) ** params.kappa


def budget(r: int) -> float:
    return 1.0 / (2.0 * (2 * r + 1))


def plateau_limit(r: int) -> float:
    return 1.0 / (6.0 * r)


def _coef1(n, r, kappa, C):
    return n / (12.0 * r * r * kappa) + C


def _coef2(n, r, kappa, C):
    return n * n / (6.0 * r**3 * kappa * kappa) + C


def upper_expressions(n: float, r: int, kappa: float, C: float) -> tuple[float, float]:
    """Both left sides at ``n >= n1`` with ``j = +r``, computed without cancellation."""
    x = math.log1p(r / n)
    f1 = math.expm1(2 * kappa * x) * _coef1(n, r, kappa, C)
    f2 = math.expm1(kappa * x) ** 2 * _coef2(n, r, kappa, C)
    return f1, f2


def _fits(n, r, kappa, C) -> bool:
    B = budget(r)
    f1, f2 = upper_expressions(n, r, kappa, C)
    return f1 <= B + SLACK and f2 <= B + SLACK


@dataclass
class ThresholdResult:
    n1: int
    r: int
    kappa: float
    C: float
    budget: float
    plateau: float
    margin: float
    boundary: bool
    values_at_n1: tuple

    def to_dict(self) -> dict:
        return {
            "n1": self.n1, "r": self.r, "kappa": self.kappa, "C": self.C, "budget": self.budget,
            "plateau": self.plateau, "margin": self.margin, "boundary": self.boundary,
            "values_at_n1": list(self.values_at_n1),
        }


def gsc_threshold(r: int, kappa: float = 2.0, C: float = 0.0, n_max: int = N_MAX) -> ThresholdResult:
    """Smallest ``n1`` satisfying both conditions (non-strict, slack ``1e-12``)."""
    GscParams(r, kappa, C)
    B = budget(r)
    plateau = plateau_limit(r)
    if plateau > B + SLACK:
        raise InfeasibleError(f"plateau {plateau} exceeds budget {B}", plateau, B)
    hi = 1
    while not _fits(hi, r, kappa, C):
        hi *= 2
        if hi > n_max:
            raise InfeasibleError(f"no threshold below {n_max}", plateau, B)
    lo = hi // 2
    if hi == 1:
        lo = 0
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _fits(mid, r, kappa, C):
            hi = mid
        else:
            lo = mid
    vals = upper_expressions(hi, r, kappa, C)
    return ThresholdResult(hi, r, kappa, C, B, plateau, B - max(vals),
                           abs(plateau - B) <= SLACK, vals)


def condition_values(n: np.ndarray, j: int, params: GscParams) -> tuple[np.ndarray, np.ndarray]:
    """Both left sides with the actual multiplier at integer ``n`` and shift ``j``."""
    n = np.asarray(n, dtype=float)
    tn = t_multiplier(n, params)
    tj = t_multiplier(np.maximum(n + j, 0), params)
    r, k, C = params.r, params.kappa, params.C
    f1 = np.abs(tn**2 - tj**2) / tn**2 * _coef1(n, r, k, C)
    f2 = (tn - tj) ** 2 / tn**2 * _coef2(n, r, k, C)
    return f1, f2


def verify_threshold(n1: int, r: int, kappa: float = 2.0, C: float = 0.0,
                     scan_factor: int = 10, tail_points: int = 200) -> dict:
    """Re-scan every ``n <= scan_factor * n1`` and ``|j| <= r`` directly.

    Beyond the scan window the ``j = +r`` expressions are checked on a
    logarithmic grid for monotone decrease towards the plateau.
    """
    params = GscParams(r, kappa, C, n1)
    B = budget(r)
    n = np.arange(0, scan_factor * n1 + 1)
    worst = 0.0
    for j in range(-r, r + 1):
        f1, f2 = condition_values(n, j, params)
        worst = max(worst, float(f1.max()), float(f2.max()))
    tail = np.unique(np.geomspace(scan_factor * n1, 1e14, tail_points).astype(np.int64))
    t1, t2 = zip(*(upper_expressions(float(m), r, kappa, C) for m in tail))
    monotone = bool(np.all(np.diff(t1) <= 1e-15) and np.all(np.diff(t2) <= 1e-15))
    tail_ok = bool(max(t1) <= B + SLACK and max(t2) <= B + SLACK)
    minimal = True
    if n1 > 1:
        p_prev = GscParams(r, kappa, C, n1 - 1)
        prev = max(max(float(a.max()), float(b.max())) for a, b in
                   (condition_values(np.arange(0, n1 + r + 1), j, p_prev) for j in range(-r, r + 1)))
        minimal = prev > B + SLACK
    return {
        "n1": n1, "scanned_up_to": int(n[-1]), "worst": worst, "budget": B,
        "scan_ok": worst <= B + SLACK, "tail_monotone": monotone, "tail_ok": tail_ok,
        "minimal": minimal, "passed": bool(worst <= B + SLACK and monotone and tail_ok and minimal),
    }


def plateau_check(r: int, kappa: float = 2.0, C: float = 0.0, n: float = 1e15) -> dict:
    """Numerical large-``n`` limits of both expressions against ``1/(6r)``.

    The ``O(1/n)`` remainder is removed by Richardson extrapolation between
    ``n`` and ``2n``.
    """
    a1, a2 = upper_expressions(n, r, kappa, C)
    b1, b2 = upper_expressions(2 * n, r, kappa, C)
    lim1, lim2 = 2 * b1 - a1, 2 * b2 - a2
    target = plateau_limit(r)
    return {"closed_form": target, "budget": budget(r), "limit_first": lim1, "limit_second": lim2,
            "error": max(abs(lim1 - target), abs(lim2 - target))}
