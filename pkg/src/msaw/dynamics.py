"""Continuous-time myopic self-avoiding walk on the torus.

The walker at ``X`` jumps to ``X + e`` at rate ``w(l(X) - l(X + e))`` while
``l(X)`` grows at unit speed.  Waiting times are drawn by inverting the
closed-form cumulative hazard; the jump direction uses the rates at the jump
instant.  Displacements are tracked unwrapped so windings are visible.
"""
from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as P

from . import _kernel as K
from .gibbs import BOND_MULTIPLICITY, McmcConfig, heat_bath_sweeps, sample_gff_batch
from .lattice import SpectralCache, Torus
from .rates import RateSpec, eval_r, eval_s, eval_w, validate
from .seeding import replica_rng

log = logging.getLogger(__name__)

BUFFER = 1 << 15
RECENTER_EVERY = 10**6


class NumericError(RuntimeError):
    pass


def _padded(spec: RateSpec):
    s, r = spec.s, spec.r
    m = max(s.size, r.size, 1)
    sp = np.zeros(m)
    rp = np.zeros(m)
    sp[: s.size] = s
    rp[: r.size] = r
    return sp, rp, K.binomial_table(m)


@dataclass
class WalkerState:
    torus: Torus
    spec: RateSpec
    local_time: np.ndarray
    X: np.ndarray = None
    t: float = 0.0
    jump_count: int = 0
    rng: np.random.Generator = field(default=None, repr=False)
    displacement: np.ndarray = None

    def __post_init__(self):
        self.local_time = np.array(self.local_time, dtype=float).reshape(self.torus.shape)
        if not np.all(np.isfinite(self.local_time)):
            raise ValueError("non-finite local time")
        d = self.torus.d
        self.X = np.zeros(d, dtype=np.int64) if self.X is None else np.asarray(self.X, dtype=np.int64) % self.torus.L
        self.displacement = np.zeros(d, dtype=np.int64) if self.displacement is None else np.asarray(self.displacement, dtype=np.int64)
        if self.rng is None:
            self.rng = np.random.default_rng(0)

    def differences(self) -> np.ndarray:
        """``u_e = l(X) - l(X + e)`` in the order ``+e1, -e1, +e2, ...``."""
        here = self.local_time[tuple(self.X)]
        return np.array([here - self.local_time[self.torus.wrap(self.X + e)] for e in self.torus.unit_vectors()])

    def rates(self) -> np.ndarray:
        return eval_w(self.spec, self.differences())

    def copy(self) -> "WalkerState":
        rng = np.random.Generator(type(self.rng.bit_generator)())
        rng.bit_generator.state = self.rng.bit_generator.state
        return WalkerState(self.torus, self.spec, self.local_time.copy(), self.X.copy(), self.t,
                           self.jump_count, rng, self.displacement.copy())


def env_of(state: WalkerState) -> np.ndarray:
    """``eta(x) = l(X + x)``."""
    return state.torus.shift(state.local_time, state.X)


def _shifted_w(state: WalkerState) -> np.ndarray:
    """Taylor coefficients of ``sum_e w(u_e + tau)`` in ``tau``."""
    sp, rp, binom = _padded(state.spec)
    W = np.zeros(sp.size)
    W[0] = 2 * state.torus.d * state.spec.gamma
    tmp = np.zeros(sp.size)
    for u in state.differences():
        K.taylor_shift(sp, float(u), binom, tmp)
        W += tmp
        K.taylor_shift(rp, float(u), binom, tmp)
        W += tmp
    return W


def cumulative_hazard(state: WalkerState, tau: float) -> float:
    if tau < 0:
        raise ValueError("tau must be non-negative")
    return float(K.hazard(_shifted_w(state), float(tau))[0])


def solve_hazard(state: WalkerState, E: float) -> tuple[float, float]:
    """``tau`` with ``Lambda(tau) = E`` and the absolute residual."""
    tau, resid, ok = K.solve_tau(_shifted_w(state), float(E), 2 * state.torus.d * state.spec.gamma)
    if not ok:
        raise NumericError(f"hazard inversion failed for E={E}")
    return tau, resid


def sample_jump(state: WalkerState, E: float | None = None, U: float | None = None):
    """Waiting time and direction index of the next jump.

    Returns ``(tau, e_index, gamma_flag)``.  ``E`` and ``U`` default to fresh
    draws from the state's generator (exponential first, then uniform).
    """
    E = state.rng.standard_exponential() if E is None else E
    U = state.rng.random() if U is None else U
    tau, _ = solve_hazard(state, E)
    rates = eval_w(state.spec, state.differences() + tau)
    e, flag = K.pick_direction(np.asarray(rates, dtype=float), state.spec.gamma, float(U))
    return tau, int(e), bool(flag)


def step(state: WalkerState) -> WalkerState:
    """One jump, in place; returns the state."""
    tau, e, _ = sample_jump(state)
    state.local_time[tuple(state.X)] += tau
    state.t += tau
    vec = state.torus.unit_vectors()[e]
    state.X = (state.X + vec) % state.torus.L
    state.displacement = state.displacement + vec
    state.jump_count += 1
    return state


def phi_bar(spec: RateSpec, env: np.ndarray, torus: Torus) -> np.ndarray:
    """``s(eta(0) - eta(e_l)) - s(eta(0) - eta(-e_l))`` for each ``l``."""
    z = (0,) * torus.d
    out = []
    for l in range(torus.d):
        e = np.zeros(torus.d, dtype=int)
        e[l] = 1
        out.append(eval_s(spec, env[z] - env[torus.wrap(e)]) - eval_s(spec, env[z] - env[torus.wrap(-e)]))
    return np.array(out)


def phi_tilde(spec: RateSpec, env: np.ndarray, torus: Torus) -> np.ndarray:
    z = (0,) * torus.d
    out = []
    for l in range(torus.d):
        e = np.zeros(torus.d, dtype=int)
        e[l] = 1
        out.append(eval_r(spec, env[z] - env[torus.wrap(e)]) - eval_r(spec, env[z] - env[torus.wrap(-e)]))
    return np.array(out)


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class ObservationSeries:
    times: np.ndarray
    displacement: np.ndarray  # (S, d) int
    comp_bar: np.ndarray
    comp_tilde: np.ndarray
    gamma_displacement: np.ndarray  # jumps taken in the rate-gamma slice
    snapshots: np.ndarray | None = None  # (S, k) gradients of eta
    jump_count: int = 0
    max_residual: float = 0.0
    max_range: int = 0

    def records(self) -> list:
        return [
            {"t": float(t), "X": [int(v) for v in x], "comp_bar": [float(v) for v in cb],
             "comp_tilde": [float(v) for v in ct]}
            for t, x, cb, ct in zip(self.times, self.displacement, self.comp_bar, self.comp_tilde)
        ]

    @staticmethod
    def merge(a: "ObservationSeries", b: "ObservationSeries") -> "ObservationSeries":
        """Append segment ``b`` (run after ``a``, measured from its own start) to ``a``."""
        if a.times.size and b.times.size and b.times[0] <= a.times[-1]:
            raise ValueError("series overlap")

        def cum(x, y):
            base = x[-1] if x.shape[0] else np.zeros_like(y[0])
            return np.concatenate([x, y + base])

        snaps = None if a.snapshots is None or b.snapshots is None else np.concatenate([a.snapshots, b.snapshots])
        return ObservationSeries(
            np.concatenate([a.times, b.times]), cum(a.displacement, b.displacement),
            cum(a.comp_bar, b.comp_bar), cum(a.comp_tilde, b.comp_tilde),
            cum(a.gamma_displacement, b.gamma_displacement), snaps,
            a.jump_count + b.jump_count, max(a.max_residual, b.max_residual),
            max(a.max_range, b.max_range),
        )


def default_snapshot_family(d: int):
    """Gradient probes ``(offset, direction index)`` around the walker."""
    off = []
    dirs = []
    for l in range(d):
        off.append(np.zeros(d, dtype=np.int64))
        dirs.append(2 * l)
    if d >= 2:
        x = np.zeros(d, dtype=np.int64)
        x[1] = 1
        off.append(x)
        dirs.append(0)
    x = np.zeros(d, dtype=np.int64)
    x[0] = -1
    off.append(x)
    dirs.append(0)
    return np.array(off, dtype=np.int64), np.array(dirs, dtype=np.int64)


def run(state: WalkerState, T: float, sample_times, snapshots=None, warn: bool = True) -> ObservationSeries:
    """Simulate from ``state`` to absolute time ``T``; mutates ``state``.

    ``sample_times`` must lie in ``[state.t, T]``.  Compensator integrals and
    displacement are measured from the start of this call.
    """
    if not T > state.t:
        raise ValueError("horizon must exceed the current time")
    if not np.all(np.isfinite(state.local_time)):
        raise ValueError("non-finite local time")
    times = np.asarray(sample_times, dtype=float)
    if times.size and (np.any(np.diff(times) <= 0) or times[0] < state.t or times[-1] > T):
        raise ValueError("sample times must be strictly increasing inside [t, T]")
    torus = state.torus
    d = torus.d
    S = times.size
    if snapshots is None:
        snap_off, snap_dir = np.zeros((0, d), dtype=np.int64), np.zeros(0, dtype=np.int64)
    else:
        snap_off, snap_dir = (np.asarray(a, dtype=np.int64) for a in snapshots)
    sp, rp, binom = _padded(state.spec)
    ell = state.local_time.reshape(-1).copy()
    pos = state.X.astype(np.int64).copy()
    disp = np.zeros(d, dtype=np.int64)
    fstate = np.zeros(2 * d + 2)
    fstate[0] = state.t
    istate = np.zeros(3 + d, dtype=np.int64)
    out_disp = np.zeros((S, d), dtype=np.int64)
    out_cbar = np.zeros((S, d))
    out_ctil = np.zeros((S, d))
    out_g = np.zeros((S, d), dtype=np.int64)
    out_snap = np.zeros((S, snap_dir.size))
    jumps0 = state.jump_count
    while True:
        E = state.rng.standard_exponential(BUFFER)
        U = state.rng.random(BUFFER)
        istate[2] = 0
        status = K.run_walk(ell, pos, disp, fstate, istate, sp, rp, float(state.spec.gamma), binom,
                            torus.L, float(T), times, out_disp, out_cbar, out_ctil, out_g,
                            snap_off, snap_dir, out_snap, E, U, RECENTER_EVERY)
        if status == K.STATUS_DONE:
            break
        if status == K.STATUS_NUMERIC:
            raise NumericError("hazard inversion failed in both Newton and bisection")
    state.local_time = ell.reshape(torus.shape)
    state.X = pos
    state.t = float(T)
    state.displacement = state.displacement + disp
    state.jump_count = jumps0 + int(istate[0])
    reach = int(np.max(np.abs(disp)))
    if warn and reach >= torus.L / 4:
        warnings.warn(f"walker range {reach} reaches L/4 = {torus.L / 4}; finite-volume effects likely",
                      RuntimeWarning)
    return ObservationSeries(times, out_disp, out_cbar, out_ctil, out_g,
                             out_snap if snap_dir.size else None, int(istate[0]), float(fstate[-1]), reach)


# ---------------------------------------------------------------------------
# initial profiles and ensembles


def stationary_field(spec: RateSpec, torus: Torus, rng: np.random.Generator,
                     cache: SpectralCache | None = None, mcmc: McmcConfig | None = None) -> np.ndarray:
    """A draw of the stationary gradient measure as a mean-zero field.

    Linear ``r(u) = c u`` gives the free field with covariance ``b / (2c)``
    exactly; other models fall back to heat-bath sweeps started from it.
    """
    cache = SpectralCache.build(torus) if cache is None else cache
    if not spec.interaction:
        # every profile is invariant when w == gamma; use the free field
        return sample_gff_batch(cache, rng)
    slope = max(spec.r[1], spec.c) if spec.r.size > 1 else spec.c
    g = sample_gff_batch(cache, rng) / math.sqrt(BOND_MULTIPLICITY * slope)
    if spec.is_gaussian:
        return g
    cfg = McmcConfig() if mcmc is None else mcmc
    vals = g[None].copy()
    heat_bath_sweeps(vals, spec, torus, rng, cfg.sweeps, cfg.proposal_scale, None)
    return vals[0] - vals[0].mean()


@dataclass
class EnsembleResult:
    times: np.ndarray
    displacement: np.ndarray  # (R, S, d)
    comp_bar: np.ndarray
    comp_tilde: np.ndarray
    gamma_displacement: np.ndarray
    snapshots: np.ndarray | None  # (R, S, k)
    jump_counts: np.ndarray
    max_residual: float
    seeds: list
    initial_fields: np.ndarray | None = None
    wound_fraction: float = 0.0  # replicas whose range reached L/4


def run_replica(spec: RateSpec, torus: Torus, T: float, sample_times, seed: int, index: int,
                init: str = "stationary", snapshots=None, cache=None, mcmc=None,
                initial_field=None) -> tuple[ObservationSeries, WalkerState]:
    """Replica ``index``: field from stream 1, dynamics from stream 0."""
    if initial_field is not None:
        field0 = np.asarray(initial_field, dtype=float)
    elif init == "stationary":
        field0 = stationary_field(spec, torus, replica_rng(seed, index, 1), cache, mcmc)
    elif init == "flat":
        field0 = np.zeros(torus.shape)
    else:
        raise ValueError(f"unknown init {init!r}")
    state = WalkerState(torus, spec, field0, rng=replica_rng(seed, index, 0))
    return run(state, T, sample_times, snapshots, warn=False), state


def run_ensemble(spec: RateSpec, torus: Torus, T: float, sample_times, replicas: int, seed: int,
                 init: str = "stationary", snapshots=None, threads: int = 1, mcmc=None,
                 keep_fields: bool = False, check: bool = True) -> EnsembleResult:
    """Independent replicas; output order is by replica index regardless of threads."""
    if replicas < 1:
        raise ValueError("need at least one replica")
    if check and spec.interaction:
        rep = validate(spec)
        if not rep.passed:
            raise ValueError("rate spec violates standing conditions: " + "; ".join(rep.messages))
    cache = SpectralCache.build(torus)
    snapshots = default_snapshot_family(torus.d) if snapshots is True else snapshots

    def one(i):
        series, state = run_replica(spec, torus, T, sample_times, seed, i, init, snapshots, cache, mcmc)
        return series, (state.local_time if keep_fields else None)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            out = list(ex.map(one, range(replicas)))
    else:
        out = [one(i) for i in range(replicas)]
    series = [o[0] for o in out]
    log.info("ensemble: %d replicas, %d jumps", replicas, sum(s.jump_count for s in series))
    wound = float(np.mean([s.max_range >= torus.L / 4 for s in series]))
    if wound > 0:
        log.warning("%.0f%% of replicas reached range L/4 = %g; finite-volume effects possible",
                    100 * wound, torus.L / 4)
    snaps = None if series[0].snapshots is None else np.stack([s.snapshots for s in series])
    return EnsembleResult(
        np.asarray(sample_times, dtype=float),
        np.stack([s.displacement for s in series]),
        np.stack([s.comp_bar for s in series]),
        np.stack([s.comp_tilde for s in series]),
        np.stack([s.gamma_displacement for s in series]),
        snaps,
        np.array([s.jump_count for s in series]),
        max(s.max_residual for s in series),
        list(range(replicas)),
        np.stack([o[1] for o in out]) if keep_fields else None,
        wound,
    )


# ---------------------------------------------------------------------------
# independent sampler for law-level cross-checks


def thinning_jump(state: WalkerState, rng: np.random.Generator, max_rounds: int = 10**6):
    """Ogata thinning with a majorant on a growing window.

    On ``[t0, t0 + h]`` the total rate is bounded by
    ``sum_e (gamma + sum_k |c_k| (|u_e| + h)^k)``; the window doubles when no
    jump is accepted inside it.
    """
    spec = state.spec
    u = state.differences()
    s_abs = np.abs(spec.s)
    r_abs = np.abs(spec.r)
    tau0 = 0.0
    h = 1.0
    for _ in range(max_rounds):
        M = sum(spec.gamma + P.polyval(abs(ue) + tau0 + h, s_abs) + P.polyval(abs(ue) + tau0 + h, r_abs) for ue in u)
        tau = tau0
        while True:
            tau += rng.standard_exponential() / M
            if tau > tau0 + h:
                break
            rates = eval_w(spec, u + tau)
            if rng.random() * M < rates.sum():
                e = int(np.searchsorted(np.cumsum(rates), rng.random() * rates.sum(), side="right"))
                return tau, min(e, rates.size - 1)
        tau0 += h
        h *= 2
    raise NumericError("thinning did not accept a jump")
