import warnings

import numpy as np
import pytest
from scipy import integrate, stats

from msaw.dynamics import (NumericError, ObservationSeries, WalkerState, cumulative_hazard, default_snapshot_family,
                           env_of, phi_bar, phi_tilde, run, run_ensemble, run_replica, sample_jump, solve_hazard,
                           stationary_field, step, thinning_jump)
from msaw.gibbs import BOND_MULTIPLICITY
from msaw.lattice import SpectralCache, Torus
from msaw.rates import RateSpec, eval_w


@pytest.fixture
def state(quartic, rng):
    t = Torus(3, 6)
    return WalkerState(t, quartic, rng.standard_normal(t.shape), rng=np.random.default_rng(3))


class TestHazard:
    def test_matches_quadrature(self, state):
        u = state.differences()
        for tau in (0.05, 0.7, 2.3):
            exact, _ = integrate.quad(lambda s: eval_w(state.spec, u + s).sum(), 0, tau, epsabs=1e-13)
            assert cumulative_hazard(state, tau) == pytest.approx(exact, rel=1e-12)

    @pytest.mark.parametrize("E", [1e-8, 0.3, 5.0, 300.0])
    def test_inversion_residual(self, state, E):
        tau, resid = solve_hazard(state, E)
        assert resid / (1 + E) <= 1e-10
        assert cumulative_hazard(state, tau) == pytest.approx(E, rel=1e-10)

    def test_negative_tau(self, state):
        with pytest.raises(ValueError):
            cumulative_hazard(state, -1.0)

    def test_constant_rate_closed_form(self):
        t = Torus(3, 4)
        st = WalkerState(t, RateSpec.constant(0.5), np.zeros(t.shape))
        tau, _ = solve_hazard(st, 1.5)
        assert tau == pytest.approx(1.5 / 3.0, rel=1e-13)

    def test_direction_uses_rates_at_jump(self, state):
        tau, e, _ = sample_jump(state, E=0.4, U=0.999999)
        rates = eval_w(state.spec, state.differences() + tau)
        assert e == rates.size - 1 or np.cumsum(rates)[e] / rates.sum() >= 0.999999


class TestLawCrossCheck:
    def test_inversion_matches_thinning(self, quartic):
        t = Torus(3, 4)
        field0 = np.random.default_rng(11).standard_normal(t.shape) * 0.6
        base = WalkerState(t, quartic, field0, rng=np.random.default_rng(1))
        rng = np.random.default_rng(2)
        n = 4000
        inv = [sample_jump(base) for _ in range(n)]
        thin = [thinning_jump(base, rng) for _ in range(n)]
        assert stats.ks_2samp([a[0] for a in inv], [b[0] for b in thin]).pvalue > 1e-3
        c1 = np.bincount([a[1] for a in inv], minlength=6)
        c2 = np.bincount([b[1] for b in thin], minlength=6)
        assert stats.chi2_contingency(np.stack([c1, c2]) + 0.5).pvalue > 1e-3


class TestStep:
    def test_step_bookkeeping(self, state):
        before = state.local_time.copy()
        x0 = state.X.copy()
        step(state)
        assert state.jump_count == 1
        assert np.abs(state.displacement).sum() == 1
        assert state.local_time[tuple(x0)] - before[tuple(x0)] == pytest.approx(state.t)
        assert np.all(np.isfinite(state.local_time))

    def test_env_centred_at_walker(self, state):
        state.X = np.array([2, 1, 5])
        assert env_of(state)[0, 0, 0] == state.local_time[2, 1, 5]

    def test_compensators_vanish_for_flat_env(self, quartic):
        t = Torus(3, 4)
        env = np.zeros(t.shape)
        assert np.allclose(phi_bar(quartic, env, t), 0)
        assert np.allclose(phi_tilde(quartic, env, t), 0)

    def test_phi_tilde_linear(self, quartic):
        t = Torus(3, 4)
        env = np.zeros(t.shape)
        env[1, 0, 0] = -1.0
        assert phi_tilde(quartic, env, t)[0] == pytest.approx(1.0)

    def test_rejects_nan_field(self, quartic):
        with pytest.raises(ValueError):
            WalkerState(Torus(2, 4), quartic, np.full((4, 4), np.nan))


class TestRun:
    def test_local_time_budget(self, state):
        total0 = state.local_time.sum()
        series = run(state, 20.0, [5.0, 20.0], warn=False)
        assert state.local_time.sum() - total0 == pytest.approx(20.0, rel=1e-12)
        assert series.jump_count == state.jump_count
        assert int(np.abs(series.displacement[-1]).sum()) % 2 == series.jump_count % 2

    def test_residuals_small(self, state):
        series = run(state, 30.0, [30.0], warn=False)
        assert series.max_residual <= 1e-10

    def test_srw_has_no_compensator(self):
        t = Torus(3, 8)
        st = WalkerState(t, RateSpec.constant(1.0), np.zeros(t.shape), rng=np.random.default_rng(0))
        s = run(st, 50.0, [25.0, 50.0], warn=False)
        assert np.all(s.comp_bar == 0) and np.all(s.comp_tilde == 0)
        assert np.array_equal(s.gamma_displacement, s.displacement)

    def test_bad_sample_times(self, state):
        with pytest.raises(ValueError):
            run(state, 10.0, [5.0, 3.0])
        with pytest.raises(ValueError):
            run(state, 10.0, [11.0])
        with pytest.raises(ValueError):
            run(state, 0.0, [])

    def test_range_warning(self):
        t = Torus(3, 4)
        st = WalkerState(t, RateSpec.constant(1.0), np.zeros(t.shape), rng=np.random.default_rng(0))
        with pytest.warns(RuntimeWarning, match="L/4"):
            run(st, 50.0, [50.0])

    def test_snapshots_at_time_zero(self, quartic):
        t = Torus(3, 6)
        field0 = np.random.default_rng(5).standard_normal(t.shape)
        st = WalkerState(t, quartic, field0, rng=np.random.default_rng(1))
        off, dirs = default_snapshot_family(3)
        s = run(st, 1.0, [0.0, 1.0], (off, dirs), warn=False)
        units = t.unit_vectors()
        expected = [field0[t.wrap(o)] - field0[t.wrap(o + units[k])] for o, k in zip(off, dirs)]
        assert np.allclose(s.snapshots[0], expected)

    def test_continuation_merge(self, quartic):
        t = Torus(3, 6)
        field0 = np.random.default_rng(8).standard_normal(t.shape)
        a = WalkerState(t, quartic, field0, rng=np.random.default_rng(1))
        s1 = run(a, 5.0, [2.0, 5.0], warn=False)
        s2 = run(a, 9.0, [7.0, 9.0], warn=False)
        m = ObservationSeries.merge(s1, s2)
        assert np.array_equal(m.displacement[-1], a.displacement)
        assert m.jump_count == a.jump_count
        with pytest.raises(ValueError):
            ObservationSeries.merge(s2, s1)

    def test_records_shape(self, state):
        recs = run(state, 3.0, [1.0, 3.0], warn=False).records()
        assert [r["t"] for r in recs] == [1.0, 3.0]
        assert set(recs[0]) == {"t", "X", "comp_bar", "comp_tilde"}


class TestMergeAssociativity:
    def test_three_segments(self, quartic):
        t = Torus(3, 6)
        st = WalkerState(t, quartic, np.random.default_rng(2).standard_normal(t.shape), rng=np.random.default_rng(4))
        segs = [run(st, T, [T - 1.0, T], warn=False) for T in (3.0, 6.0, 9.0)]
        left = ObservationSeries.merge(ObservationSeries.merge(segs[0], segs[1]), segs[2])
        right = ObservationSeries.merge(segs[0], ObservationSeries.merge(segs[1], segs[2]))
        for name in ("displacement", "comp_bar", "comp_tilde", "gamma_displacement"):
            assert np.allclose(getattr(left, name), getattr(right, name), atol=1e-12)


class TestEnsemble:
    def test_stationary_field_gaussian_variance(self):
        spec = RateSpec(1.0, (0.0, 1.0), (0.0,))
        t = Torus(3, 8)
        cache = SpectralCache.build(t)
        rng = np.random.default_rng(0)
        f = np.stack([stationary_field(spec, t, rng, cache) for _ in range(400)])
        g2 = ((f - np.roll(f, -1, axis=1)) ** 2).mean(axis=(1, 2, 3))
        exact = cache.green.bond_variance(0) / BOND_MULTIPLICITY
        assert abs(g2.mean() - exact) <= 3 * g2.std(ddof=1) / 20

    def test_thread_invariance_and_prefix_stability(self, quartic):
        t = Torus(3, 6)
        a = run_ensemble(quartic, t, 5.0, [0.0, 5.0], 6, seed=9, snapshots=True)
        b = run_ensemble(quartic, t, 5.0, [0.0, 5.0], 6, seed=9, snapshots=True, threads=3)
        c = run_ensemble(quartic, t, 5.0, [0.0, 5.0], 8, seed=9, snapshots=True)
        assert np.array_equal(a.displacement, b.displacement)
        assert np.array_equal(a.comp_bar, b.comp_bar)
        assert np.array_equal(a.snapshots, c.snapshots[:6])

    def test_invalid_spec_rejected(self):
        spec = RateSpec(1.0, (0.0, 1.0), (0.4725, 0.0, 0.0, 0.0, 1.0))
        with pytest.raises(ValueError, match="standing conditions"):
            run_ensemble(spec, Torus(3, 4), 1.0, [1.0], 2, seed=0)

    def test_flat_init(self, quartic):
        series, st = run_replica(quartic, Torus(3, 4), 2.0, [2.0], seed=1, index=0, init="flat")
        assert series.jump_count == st.jump_count
        with pytest.raises(ValueError):
            run_replica(quartic, Torus(3, 4), 2.0, [2.0], seed=1, index=0, init="hot")
