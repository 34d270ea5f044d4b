import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msaw.gsc import (GscParams, InfeasibleError, budget, condition_values, gsc_threshold, plateau_check,
                      plateau_limit, t_multiplier, upper_expressions, verify_threshold)


class TestParams:
    @pytest.mark.parametrize("kw", [dict(r=0), dict(r=2, kappa=1.5), dict(r=2, C=-1.0), dict(r=2, n1=5, n2=5)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            GscParams(**kw)

    def test_multiplier(self):
        p = GscParams(2, 2.0, 0.0, n1=5, n2=10)
        assert t_multiplier([0, 5, 7, 20], p).tolist() == [25.0, 25.0, 49.0, 100.0]


class TestThreshold:
    def test_reference_value(self):
        res = gsc_threshold(2, 2.0, 0.0)
        assert res.n1 == 17 and res.margin >= 0 and not res.boundary

    @pytest.mark.parametrize("r,expected", [(3, 18), (4, 21)])
    def test_other_widths(self, r, expected):
        assert gsc_threshold(r).n1 == expected

    def test_rescan(self):
        out = verify_threshold(17, 2)
        assert out["passed"] and out["minimal"] and out["scanned_up_to"] == 170

    def test_non_minimal_detected(self):
        assert not verify_threshold(30, 2)["minimal"]

    def test_below_threshold_fails_scan(self):
        assert not verify_threshold(10, 2)["scan_ok"]

    def test_boundary_case(self):
        res = gsc_threshold(1)
        assert res.boundary and res.n1 > 10**10

    def test_infeasible(self):
        with pytest.raises(InfeasibleError):
            gsc_threshold(1, 2.0, 5.0, n_max=10**6)

    def test_constant_raises_threshold(self):
        assert gsc_threshold(2, 2.0, 0.01).n1 > gsc_threshold(2, 2.0, 0.0).n1


class TestPlateau:
    @pytest.mark.parametrize("r", [1, 2, 3, 5])
    def test_limits(self, r):
        out = plateau_check(r)
        assert out["error"] <= 1e-12
        assert out["closed_form"] == pytest.approx(1 / (6 * r))
        assert out["budget"] == pytest.approx(1 / (2 * (2 * r + 1)))

    def test_plateau_below_budget_for_r_at_least_two(self):
        assert all(plateau_limit(r) < budget(r) for r in range(2, 20))
        assert plateau_limit(1) == pytest.approx(budget(1))


@settings(max_examples=30, deadline=None)
@given(n=st.integers(20, 10**9), r=st.integers(1, 6))
def test_stable_expression_matches_direct(n, r):
    p = GscParams(r, 2.0, 0.0, n1=1)
    f1, f2 = condition_values(np.array([n]), r, p)
    u1, u2 = upper_expressions(float(n), r, 2.0, 0.0)
    assert u1 == pytest.approx(f1[0], rel=1e-6)
    assert u2 == pytest.approx(f2[0], rel=1e-6, abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(r=st.integers(2, 6), kappa=st.sampled_from([2.0, 2.5, 3.0]))
def test_threshold_satisfies_conditions(r, kappa):
    res = gsc_threshold(r, kappa)
    assert verify_threshold(res.n1, r, kappa)["passed"]
