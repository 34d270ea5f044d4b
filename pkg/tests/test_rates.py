import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msaw.rates import (InvalidRateSpec, RateSpec, eval_r, eval_s, eval_w, minimize_even_plus_odd,
                        potential_R, validate)

S0_EXACT = 0.75 * 4 ** (-1 / 3)


class TestRateSpec:
    def test_quartic_offset_is_exact_infimum(self, quartic):
        assert quartic.s_coeffs[0] == pytest.approx(S0_EXACT, abs=1e-14)
        u = np.linspace(-3, 3, 600001)
        assert eval_w(quartic, u).min() == pytest.approx(1.0, abs=1e-9)

    def test_minimiser_cross_check(self, quartic):
        x, f = minimize_even_plus_odd(quartic)
        assert x == pytest.approx(-(4 ** (-1 / 3)), abs=1e-6)
        assert f == pytest.approx(0.0, abs=1e-10)

    def test_constant_switches_interaction_off(self):
        spec = RateSpec.constant(0.5)
        assert not spec.interaction
        assert np.allclose(eval_w(spec, [-4.0, 0.0, 7.0]), 0.5)

    def test_interaction_flag_zeroes_coefficients(self):
        spec = RateSpec(1.0, (0.0, 3.0), (1.0, 0.0, 2.0), interaction=False)
        assert spec.r_coeffs == (0.0,) and spec.s_coeffs == (0.0,)

    @pytest.mark.parametrize("gamma", [0.0, -1.0])
    def test_gamma_must_be_positive(self, gamma):
        with pytest.raises(InvalidRateSpec):
            RateSpec(gamma)

    def test_rejects_non_finite(self):
        with pytest.raises(InvalidRateSpec):
            RateSpec(1.0, (0.0, math.nan))

    def test_gaussian_detection(self, quartic):
        assert RateSpec(1.0, (0.0, 2.0), (0.0,), c=2.0).is_gaussian
        assert not RateSpec(1.0, (0.0, 1.0, 0.0, 1.0)).is_gaussian
        assert not RateSpec.constant(1.0).is_gaussian
        assert quartic.is_gaussian  # r is linear; s does not enter the measure

    def test_potential_is_antiderivative(self, quartic):
        u = np.linspace(-2, 2, 9)
        assert np.allclose(potential_R(quartic, u), u**2 / 2)
        assert potential_R(quartic, 0.0) == 0.0


class TestValidate:
    def test_quartic_passes(self, quartic):
        rep = validate(quartic)
        assert rep.passed, rep.messages
        assert rep.s4_over_gamma == 1.0

    def test_slightly_off_offset_fails_gamma_match(self):
        spec = RateSpec(1.0, (0.0, 1.0), (0.4725, 0.0, 0.0, 0.0, 1.0))
        rep = validate(spec)
        assert not rep.conditions["ellipticity"]

    def test_even_r_rejected(self):
        rep = validate(RateSpec(1.0, (0.1, 1.0), (1.0,)))
        assert not rep.conditions["r_odd"]

    def test_odd_s_rejected(self):
        rep = validate(RateSpec(1.0, (0.0, 1.0), (1.0, 0.5, 1.0)))
        assert not rep.conditions["s_even"]

    def test_convexity_uses_c(self):
        rep = validate(RateSpec(1.0, (0.0, 1.0), (0.0, 0.0, 1.0), c=2.0))
        assert not rep.conditions["convexity"]

    def test_unbounded_w_fails(self):
        rep = validate(RateSpec(1.0, (0.0, 1.0, 0.0, -1.0), (0.0,)))
        assert not rep.passed

    def test_report_serialises(self, quartic):
        d = validate(quartic).to_dict()
        assert d["passed"] and set(d["conditions"]) >= {"ellipticity", "convexity", "r_odd", "s_even"}


@settings(max_examples=40, deadline=None)
@given(s4=st.floats(0.1, 5.0), lin=st.floats(0.2, 3.0), gamma=st.floats(0.1, 4.0))
def test_quartic_family_always_valid(s4, lin, gamma):
    spec = RateSpec.quartic(gamma=gamma, s4=s4, linear=lin)
    rep = validate(spec)
    assert rep.passed, rep.messages
    assert rep.inf_w == pytest.approx(gamma, abs=1e-6)


@settings(max_examples=40, deadline=None)
@given(u=st.floats(-10, 10))
def test_w_is_gamma_plus_s_plus_r(u):
    spec = RateSpec.quartic()
    assert eval_w(spec, u) == pytest.approx(1.0 + eval_s(spec, u) + eval_r(spec, u), rel=1e-12, abs=1e-12)
