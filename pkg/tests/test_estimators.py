import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msaw.estimators import (MIN_REPLICAS, EnsembleStats, Underpowered, bond_power, chat_estimate, clt_check,
                             diffusive_bounds_check, jackknife, lln_check, martingale_check, mean_se,
                             phi_tilde_local, sigma_estimate, stationarity_check, yaglom_check)
from msaw.gibbs import sample_gff_batch
from msaw.lattice import Torus


def brownian(rng, n, times, d=3, var=2.0):
    dt = np.diff(np.concatenate([[0.0], times]))
    inc = rng.standard_normal((n, len(times), d)) * np.sqrt(var * dt)[None, :, None]
    return np.cumsum(inc, axis=1)


TIMES = np.array([125.0, 200.0, 250.0, 375.0, 400.0, 500.0])


class TestJackknife:
    def test_mean_matches_classical(self, rng):
        x = rng.standard_normal(200)
        m, se = jackknife(x, np.mean)
        assert m == pytest.approx(x.mean())
        assert se == pytest.approx(x.std(ddof=1) / np.sqrt(200), rel=1e-10)

    def test_blocked(self, rng):
        x = rng.standard_normal(1000)
        _, se = jackknife(x, np.mean, n_blocks=50)
        assert se == pytest.approx(x.std() / np.sqrt(1000), rel=0.3)

    def test_vector_estimator(self, rng):
        x = rng.standard_normal((100, 3))
        m, se = jackknife(x, lambda a: a.mean(axis=0))
        assert m.shape == se.shape == (3,)

    def test_needs_two(self):
        with pytest.raises(Underpowered):
            jackknife(np.ones(1), np.mean)


class TestEnsembleStats:
    def test_matches_numpy(self, rng):
        x = rng.standard_normal((50, 4, 3))
        s = EnsembleStats(4, 3).extend(x)
        assert np.allclose(s.mean, x.mean(axis=0))
        assert np.allclose(s.covariance[1], np.cov(x[:, 1].T))

    def test_merge_mismatch(self):
        with pytest.raises(ValueError):
            EnsembleStats(2, 3).merge(EnsembleStats(3, 3))

    def test_compensated_sum(self):
        s = EnsembleStats(1, 1).extend([np.array([[1e16]]), np.array([[1.0]]), np.array([[-1e16]])])
        assert s.mean[0, 0] * 3 == 1.0


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), cut=st.integers(1, 39), cut2=st.integers(1, 19))
def test_merge_associative_commutative(seed, cut, cut2):
    x = np.random.default_rng(seed).standard_normal((40, 2, 3)) * 10
    a, rest = x[:cut], x[cut:]
    b, c = rest[: min(cut2, len(rest) - 1)], rest[min(cut2, len(rest) - 1):]
    A, B, C = (EnsembleStats(2, 3).extend(v) for v in (a, b, c))
    left, right, swapped = A.merge(B).merge(C), A.merge(B.merge(C)), C.merge(A).merge(B)
    whole = EnsembleStats(2, 3).extend(x)
    for s in (left, right, swapped):
        assert s.count == 40
        assert np.allclose(s.mean, whole.mean, atol=1e-12, rtol=0)
        assert np.allclose(s.second_moment, whole.second_moment, atol=1e-12, rtol=0)
        w = np.linalg.eigvalsh(s.covariance)
        assert w.min() >= -1e-10


@pytest.fixture(scope="module")
def bm():
    return brownian(np.random.default_rng(1), 800, TIMES)


class TestWalkChecks:
    def test_underpowered(self):
        x = np.zeros((MIN_REPLICAS - 1, 6, 3))
        with pytest.raises(Underpowered):
            lln_check(TIMES, x, [500.0])

    def test_off_grid_time(self, bm):
        with pytest.raises(KeyError):
            lln_check(TIMES, bm, [123.0])

    def test_lln(self, bm):
        assert lln_check(TIMES, bm, [250.0, 500.0])["passed"]
        assert not lln_check(TIMES, bm + TIMES[None, :, None] * 0.05, [500.0])["passed"]

    def test_diffusive(self, bm):
        out = diffusive_bounds_check(TIMES, bm, 1.0, [125.0, 250.0, 375.0, 500.0])
        assert out["passed"] and out["upper_is_surrogate"] and out["plateau_passed"]
        assert not diffusive_bounds_check(TIMES, bm, 3.0, [125.0, 250.0, 375.0, 500.0])["lower_passed"]

    def test_superdiffusive_fails_plateau(self, rng):
        x = rng.standard_normal((800, 6, 3)) * TIMES[None, :, None] * 0.2
        out = diffusive_bounds_check(TIMES, x, 1.0, [125.0, 250.0, 375.0, 500.0])
        assert not out["upper_surrogate_passed"]

    def test_needs_four_points(self, bm):
        with pytest.raises(ValueError):
            diffusive_bounds_check(TIMES, bm, 1.0, [250.0, 500.0])

    def test_sigma(self, bm):
        out = sigma_estimate(TIMES, bm, 500.0)
        assert out["passed"]
        assert np.allclose(np.diag(out["sigma2"]), 2.0, atol=0.3)

    def test_clt(self, bm):
        out = clt_check(TIMES, bm, 200.0, 400.0)
        assert out["passed"] and out["ad_is_advisory"]
        assert all(abs(c["cov_over_var"] - 1) < 0.15 for c in out["components"])

    def test_clt_detects_heavy_tails(self, rng):
        x = np.repeat(rng.standard_t(3, size=(3000, 1, 3)), len(TIMES), axis=1)
        assert not clt_check(TIMES, x, 200.0, 400.0)["passed"]

    def test_martingale(self, rng):
        N = rng.standard_normal((500, 3))
        M = rng.standard_normal((500, 3))
        comp = rng.standard_normal((500, 3))
        X = N + M + comp
        assert martingale_check(X, comp, np.zeros_like(comp), N)["passed"]
        assert not martingale_check(X, comp - 0.5, np.zeros_like(comp), N)["compensated_ok"]


class TestEnvironmentChecks:
    def test_stationarity_identical(self, rng):
        a = rng.standard_normal((100, 5))
        assert stationarity_check(a, a)["passed"]

    def test_stationarity_detects_shift(self, rng):
        a = rng.standard_normal((500, 5))
        assert not stationarity_check(a, a + 0.3)["passed"]

    def test_expected_second(self, rng):
        a = rng.standard_normal((2000, 2)) * np.sqrt(0.4)
        out = stationarity_check(a, rng.standard_normal((2000, 2)) * np.sqrt(0.4), expected_second=0.4)
        assert out["second_moment_vs_exact"]["ok"]

    def test_gaussian_wick(self, rng):
        a = rng.standard_normal((20000, 1)) * 0.7
        m4, se4 = mean_se(a[:, 0] ** 4)
        assert abs(m4 - 3 * 0.49**2) <= 3 * se4

    def test_yaglom_exchangeable(self, rng):
        z = rng.standard_normal((2000, 3))
        a = z + 0.5 * rng.standard_normal((2000, 3))
        b = -(z + 0.5 * rng.standard_normal((2000, 3)))
        assert yaglom_check(a, b)["passed"]

    def test_yaglom_detects_drift(self, rng):
        a = rng.standard_normal((2000, 2))
        assert not yaglom_check(a, a + 1.0, pairs=[(0, 0)])["passed"]


class TestChat:
    def test_gaussian_bond_structure_function(self, cache8):
        t = cache8.torus
        f = sample_gff_batch(cache8, np.random.default_rng(4), 1500)
        res = chat_estimate(f, bond_power(t, 1))
        p = np.array(t.momenta())
        exact = np.abs(np.exp(1j * p[0]) - 1) ** 2 * cache8.bhat_grid
        live = exact > 1e-12
        assert np.all(res.values[~live] < 1e-20)
        z = np.abs(res.values[live] - exact[live]) / res.se[live]
        assert np.mean(z <= 3) > 0.98
        assert res.values[0, 0, 0] == pytest.approx(0.0, abs=1e-12)

    def test_infrared_finite(self, cache8):
        f = sample_gff_batch(cache8, np.random.default_rng(5), 200)
        res = chat_estimate(f, bond_power(cache8.torus, 1))
        assert np.isfinite(res.infrared(cache8.dhat_grid))

    def test_warns_if_not_centred(self, cache8):
        f = sample_gff_batch(cache8, np.random.default_rng(6), 100)
        with pytest.warns(RuntimeWarning):
            chat_estimate(f, bond_power(cache8.torus, 2))

    def test_phi_tilde_linear(self, cache8):
        t = cache8.torus
        f = sample_gff_batch(cache8, np.random.default_rng(7), 2)
        v = phi_tilde_local(t, [0.0, 1.0])(f)
        assert np.allclose(v, t.shift(f, (-1, 0, 0)) - t.shift(f, (1, 0, 0)))
