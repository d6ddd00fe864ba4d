import math

import numpy as np
import pytest

from ddlab.schedule import constant_schedule
from ddlab.scores import MixtureScore, exact_score, perturb, PerturbSpec
from ddlab.sampler import make_stepgrid
from ddlab.targets import DiracTarget, EmpiricalTarget, HypercubeTarget, two_atom_target
from ddlab.verify import (
    SLACK,
    check_contraction_window,
    check_hessian_bounds,
    check_hessian_scaling,
    check_interpolation_identity,
    check_noise_scale,
    check_reverse_integrals,
    check_score_dissipativity,
    check_score_time_derivative,
    check_tangent_contraction,
    check_zero_field_law,
    run_all,
    _mixture_dt_flipped,
)


class _Corrupt:
    """Exact field plus a constant offset, for sensitivity probes."""

    def __init__(self, base, offset):
        self._base = base
        self.sched = base.sched
        self.d = base.d
        self._offset = offset

    def score(self, t, x):
        return self._base.score(t, x) + self._offset

    def __getattr__(self, name):
        return getattr(self._base, name)


class TestScoreChecks:
    def test_dirac_dissipativity_is_tight(self, sched, dirac2):
        rep = check_score_dissipativity(dirac2, sched, 200, 0)
        assert rep.passed
        # the inner-product inequality is an equality at diam = 0
        assert rep.worst_margin == pytest.approx(0.0, abs=1e-9)

    def test_two_atom_thousand_probes(self, sched, two_atom):
        rep = check_score_dissipativity(two_atom, sched, 1000, 1)
        assert rep.violations == 0

    def test_corrupted_field_flagged(self, sched, two_atom):
        field = _Corrupt(exact_score(two_atom, sched), 0.1)
        rep = check_score_dissipativity(two_atom, sched, 500, 2, field)
        assert rep.violations > 0

    def test_hessian_bounds_dirac_meets_cap(self, sched, dirac2):
        rep = check_hessian_bounds(dirac2, sched, 300, 3)
        assert rep.passed
        assert rep.details["opnorm_cross_err"] < 1e-8

    def test_hessian_bounds_five_atom(self, sched, five_atom):
        rep = check_hessian_bounds(five_atom, sched, 1000, 4)
        assert rep.violations == 0
        assert rep.details["opnorm_cross_err"] < 1e-8

    def test_dt_bound_and_fd_gate(self, sched, five_atom):
        rep = check_score_time_derivative(five_atom, sched, 1000, 5)
        assert rep.violations == 0
        assert rep.details["fd_gate_residual"] < 1e-5

    def test_exactly_one_sign_branch_passes_fd(self, sched, five_atom):
        field = MixtureScore(sched, five_atom.atoms)
        rng = np.random.default_rng(6)
        h = 1e-6
        for _ in range(10):
            t = rng.uniform(0.1, 3.9)
            x = rng.normal(size=2)
            fd = (field.score(t + h, x) - field.score(t - h, x)) / (2 * h)
            good = np.linalg.norm(field.dt_score(t, x) - fd)
            bad = np.linalg.norm(_mixture_dt_flipped(field, t, x) - fd)
            scale = max(np.linalg.norm(fd), 1e-9)
            assert good / scale < 1e-5
            assert bad / scale > 1e-3

    def test_fd_gate_aborts_on_corruption(self, sched, five_atom):
        class BadDt(_Corrupt):
            def dt_score(self, t, x):
                return self._base.dt_score(t, x) + 0.05

        field = BadDt(exact_score(five_atom, sched), 0.0)
        with pytest.raises(AssertionError, match="finite differences"):
            check_score_time_derivative(five_atom, sched, 100, 7, field)


class TestScheduleChecks:
    def test_reverse_integrals(self, sched):
        assert check_reverse_integrals(sched, 100, 0).violations == 0

    def test_noise_scale(self, sched):
        assert check_noise_scale(sched, 1.0, 1000, 1).violations == 0

    def test_contraction_window_zero_diam(self, sched):
        # integrand <= -beta/2 pointwise holds trivially when diam = 0
        rep = check_contraction_window(sched, 1.0, 0.0, 50, 2)
        assert rep.violations == 0

    def test_contraction_window_unit_diam(self):
        sched = constant_schedule(1.0, 10.0)
        rep = check_contraction_window(sched, 1.0, 1.0, 100, 3)
        assert rep.violations == 0
        assert rep.details["t_star"] == pytest.approx(
            10.0 - 2.0 * (1.0 + math.log(2.0)))


class TestFlowChecks:
    def test_tangent_contraction_two_atom(self, sched, two_atom):
        grid = make_stepgrid(sched, eps=0.1, delta=0.05)
        rep = check_tangent_contraction(two_atom, sched, grid, 20, 0)
        assert rep.violations == 0
        assert rep.details["max_ratio_to_envelope"] <= 1.0

    def test_envelope_overflow_refused(self, two_atom):
        sched = constant_schedule(1.0, 40.0)
        grid = make_stepgrid(sched, eps=1e-4, delta=0.05)
        with pytest.raises(ValueError, match="truncation"):
            check_tangent_contraction(two_atom, sched, grid, 2, 0)

    def test_zero_field_law_passes(self):
        sched = constant_schedule(1.0, 1.01)
        rep = check_zero_field_law(sched, eps=0.01, delta=0.02, n=20000,
                                   seed=0, d=2)
        assert rep.violations == 0
        assert rep.details["variance_exact"] == pytest.approx(
            2.0 * math.exp(2.0) - 1.0, rel=1e-9)


@pytest.fixture(scope="module")
def setup():
    sched = constant_schedule(1.0, 2.0)
    rng = np.random.default_rng(5)
    atoms = rng.uniform(-0.5, 0.5, size=(5, 1))
    atoms -= 0.5 * (atoms.min() + atoms.max())
    target = EmpiricalTarget(d=1, atoms=atoms)
    grid = make_stepgrid(sched, eps=0.1, delta=0.17)
    return sched, target, grid


class TestInterpolationIdentity:
    def test_exact_field_residual_within_tolerance(self, setup):
        sched, target, grid = setup
        field = exact_score(target, sched)
        rep = check_interpolation_identity(target, sched, grid, field,
                                           n_paths=20, seed=0, n_sub=8)
        assert rep.violations == 0
        assert rep.details["max_residual"] <= 0.1

    def test_first_order_in_substeps(self, setup):
        sched, target, grid = setup
        field = exact_score(target, sched)
        r8 = check_interpolation_identity(target, sched, grid, field,
                                          n_paths=10, seed=1, n_sub=8)
        r16 = check_interpolation_identity(target, sched, grid, field,
                                           n_paths=10, seed=1, n_sub=16)
        ratio = r16.details["median_residual"] / r8.details["median_residual"]
        assert 0.3 <= ratio <= 0.75

    def test_perturbed_field_envelope_respected(self, setup):
        sched, target, grid = setup
        base = exact_score(target, sched)
        field = perturb(base, 0.01, PerturbSpec(mode="radial"))
        rep = check_interpolation_identity(target, sched, grid, field,
                                           n_paths=10, seed=2, n_sub=8)
        assert rep.details["envelope_worst_margin"] >= -SLACK


class TestHessianScaling:
    def test_convex_product_bounded(self, sched):
        cube = HypercubeTarget(d=1, p=1, side=1.0)
        rep = check_hessian_scaling(cube, sched, mode="convex")
        assert rep.violations == 0
        assert abs(rep.details["slope"]) <= 0.15

    def test_midpoint_product_bounded_below(self, sched):
        two = two_atom_target(2.0, d=2)
        rep = check_hessian_scaling(two, sched, mode="midpoint")
        assert rep.violations == 0
        # sigma^4 |H(0)| -> m^2 |a|^2 at the midpoint of atoms at +-a
        prods = np.asarray(rep.details["products"])
        assert prods[0] == pytest.approx(1.0, rel=1e-2)

    def test_dirac_product_is_exactly_one(self, sched, dirac2):
        field = exact_score(dirac2, sched)
        for t in np.geomspace(1e-4, 1.0, 7):
            ev = sched.eval(t)
            H = field.hessian(t, np.zeros(2))
            assert ev.sigma2 * np.abs(np.linalg.eigvalsh(H)).max() \
                == pytest.approx(1.0, rel=1e-12)


@pytest.fixture(scope="module")
def battery(sched):
    rng = np.random.default_rng(3)
    atoms = 0.4 * rng.standard_normal((5, 2))
    atoms -= 0.5 * (atoms.min(axis=0) + atoms.max(axis=0))
    return {
        "dirac": DiracTarget(d=2),
        "two_atom": two_atom_target(1.0, d=2),
        "five_atom": EmpiricalTarget(d=2, atoms=atoms),
        "hypercube": HypercubeTarget(d=2, p=1, side=1.0),
    }


class TestRunAll:
    def test_full_suite_clean(self, sched, battery):
        rep = run_all(battery, sched, n_probes=200, seed=0)
        assert rep.passed
        assert rep.total_violations == 0

    def test_deterministic(self, sched, battery):
        a = run_all(battery, sched, suite="score-bounds", n_probes=100, seed=1)
        b = run_all(battery, sched, suite="score-bounds", n_probes=100, seed=1)
        assert a.as_dict() == b.as_dict()

    def test_corruption_flips_checks(self, sched, battery):
        rep = run_all(battery, sched, suite="score-bounds", n_probes=100,
                      seed=2, corruption=0.1)
        assert sum(1 for r in rep.reports if not r.passed) >= 3
