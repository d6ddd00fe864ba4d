import math

import numpy as np
import pytest

from ddlab.bounds import (
    BoundInputs,
    HypothesisError,
    constants,
    corollary2,
    l2_theorem,
    prop4,
    theorem1,
    theorem3,
    tstar,
)


def inputs(**kw):
    base = dict(d=2, diam=1.0, beta_bar=1.0, T=10.0, eps=0.01, delta=0.01,
                M=0.0)
    base.update(kw)
    return BoundInputs(**base)


class TestConstants:
    def test_kappa(self):
        assert constants(inputs())["kappa"] == 1.0

    def test_second_moment_cap(self):
        c = constants(inputs(d=2, diam=1.0))
        assert c["K0"] == 1290.0
        assert constants(inputs(diam=0.0))["K0"] == 330.0

    def test_increment_cap(self):
        assert constants(inputs(d=2, diam=1.0))["L0"] == 128.0 + 20544.0 * 4

    def test_drift_mismatch_constant(self):
        c = constants(inputs(d=1, diam=0.0))
        assert c["C0"] == pytest.approx(2**3.5 * (4 + 256 + 43664))

    def test_sharp_disc_constant(self):
        c = constants(inputs(d=1, diam=0.0))
        assert c["D0_disc"] == pytest.approx(2**7 * (8 + 512 + 87328))

    def test_bit_reproducible(self):
        a = constants(inputs())
        b = constants(inputs())
        assert a == b


class TestTstar:
    def test_zero_diam(self):
        assert tstar(10.0, 1.0, 0.0) == 8.0

    def test_log_diam(self):
        assert tstar(10.0, 1.0, math.e - 1.0) == pytest.approx(6.0)

    def test_unit_slope_in_T(self):
        assert tstar(11.0, 1.0, 0.0) - tstar(10.0, 1.0, 0.0) == pytest.approx(1.0)

    def test_refuses_negative(self):
        with pytest.raises(HypothesisError):
            tstar(1.0, 1.0, 10.0)


class TestTheorem1:
    def test_report_decomposition(self):
        rep = theorem1(inputs())
        assert rep.total == pytest.approx(
            rep.term_disc + rep.term_mixing + rep.term_noising)
        assert "modulo" in rep.caveat

    def test_dirac_noising_term(self):
        rep = theorem1(inputs(diam=0.0, d=2, eps=0.01))
        assert rep.constants["kappa"] == 0.0
        assert rep.term_noising == pytest.approx(
            math.sqrt(2.0) * math.sqrt(2.0) * math.sqrt(0.01))

    def test_hypothesis_violations_named(self):
        with pytest.raises(HypothesisError, match="M <= 1/32"):
            theorem1(inputs(M=0.5))
        with pytest.raises(HypothesisError, match="T >="):
            theorem1(inputs(T=0.5))
        with pytest.raises(HypothesisError, match="eps"):
            theorem1(inputs(eps=0.5))

    def test_monotone_in_error_knobs(self):
        base = theorem1(inputs(M=0.001, delta=0.001)).total
        assert theorem1(inputs(M=0.002, delta=0.001)).total >= base
        assert theorem1(inputs(M=0.001, delta=0.002)).total >= base
        # below the minimizer, shrinking eps inflates the total
        assert theorem1(inputs(M=0.001, delta=0.001, eps=0.005)).total >= base

    def test_limit_is_noising_term(self):
        # T -> inf, M, delta -> 0 leaves only the sqrt(eps) term
        rep = theorem1(inputs(T=1e6, M=0.0, delta=0.0))
        assert rep.total == pytest.approx(rep.term_noising)

    def test_linear_dependence_on_M_and_sqrt_delta(self):
        t0 = theorem1(inputs(M=0.0, delta=0.0))
        t1 = theorem1(inputs(M=0.01, delta=0.0))
        t2 = theorem1(inputs(M=0.02, delta=0.0))
        assert (t2.term_disc - t0.term_disc) == pytest.approx(
            2.0 * (t1.term_disc - t0.term_disc), rel=1e-12)


class TestCorollary2:
    def test_parameter_set_at_level_cap(self):
        p = corollary2(1.0 / 32.0, diam=0.0, beta_bar=1.0, d=1)
        assert p["kappa"] == 0.0
        assert p["M"] == pytest.approx((1.0 / 32.0) ** 5)
        assert p["delta"] == pytest.approx((1.0 / 32.0) ** 10)
        assert p["gamma_K"] == pytest.approx(1.0 / 1024.0)
        assert p["T"] == pytest.approx(1024.0)

    def test_bound_linear_in_level(self):
        a = corollary2(1.0 / 64.0, 0.0, 1.0, 1)["bound"]
        b = corollary2(1.0 / 128.0, 0.0, 1.0, 1)["bound"]
        assert a == pytest.approx(2.0 * b, rel=1e-12)

    def test_level_range(self):
        with pytest.raises(HypothesisError):
            corollary2(0.1, 0.0, 1.0, 1)


class TestTheorem3:
    def test_gamma_zero_matches_exponential_form_at_zero_diam(self):
        # kappa = 0 makes the headline bound polynomial too; the eps powers
        # of the first two terms then agree across the two routes
        e1, e2 = 1.0 / 32.0, 1.0 / 64.0
        r_lo = theorem3(inputs(diam=0.0, Gamma=0.0, eps=e1, M=0.001))
        r_hi = theorem3(inputs(diam=0.0, Gamma=0.0, eps=e2, M=0.001))
        assert r_hi.term_disc / r_lo.term_disc == pytest.approx(
            (e1 / e2) ** 2, rel=1e-12)
        h_lo = theorem1(inputs(diam=0.0, eps=e1, M=0.001))
        h_hi = theorem1(inputs(diam=0.0, eps=e2, M=0.001))
        assert h_hi.term_disc / h_lo.term_disc == pytest.approx(
            (e1 / e2) ** 2, rel=1e-12)

    def test_power_law_in_eps(self):
        g = 1.5
        r1 = theorem3(inputs(Gamma=g, eps=1.0 / 32.0, M=0.001))
        r2 = theorem3(inputs(Gamma=g, eps=1.0 / 64.0, M=0.001))
        assert r2.term_disc / r1.term_disc == pytest.approx(2 ** (g + 2.0),
                                                            rel=1e-12)

    def test_user_supplied_exponent_reported(self):
        rep = theorem3(inputs(Gamma=0.7))
        assert rep.constants["D0_poly"] > 0
        assert rep.constants["D0_poly_disc"] > 0


class TestProp4:
    def test_statistical_term_vanishes(self):
        big = prop4(inputs(N=10**12, d_M=1.0, eta_w=0.01))
        base = theorem1(inputs())
        assert big.total == pytest.approx(base.total, rel=1e-6)

    def test_power(self):
        r = prop4(inputs(N=100, d_M=1.0, eta_w=1e-12, D1=1.0))
        assert r.constants["statistical_term"] == pytest.approx(1.0 / 100.0)

    def test_intrinsic_dimension_governs(self):
        # ambient dimension changes the front constants, not the N-power
        a = prop4(inputs(N=100, d=2, d_M=1.0, eta_w=1e-12))
        b = prop4(inputs(N=100, d=50, d_M=1.0, eta_w=1e-12))
        assert a.constants["statistical_term"] == b.constants["statistical_term"]


class TestL2Variant:
    def test_coupling_term_scales_with_steps(self):
        a = l2_theorem(inputs(M=0.001), K=100, zeta=0.1)
        b = l2_theorem(inputs(M=0.001), K=200, zeta=0.1)
        assert b.constants["coupling_term"] == pytest.approx(
            2.0 * a.constants["coupling_term"], rel=1e-12)

    def test_threshold_hypothesis(self):
        with pytest.raises(HypothesisError):
            l2_theorem(inputs(M=0.02), K=10, zeta=0.1)  # M/zeta = 0.2 > 1/32
