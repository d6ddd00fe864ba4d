import math

import numpy as np
import pytest
from scipy.integrate import quad

from ddlab.schedule import constant_schedule
from ddlab.scores import (
    DiracScore,
    HypercubeScore,
    MixtureScore,
    PerturbSpec,
    PerturbedScore,
    ScoreSingularityError,
    UnsupportedFieldOperation,
    ZeroScore,
    dsm_loss,
    empirical_mean_square_error,
    exact_score,
    l2_perturb,
    perturb,
)
from ddlab.targets import CircleTarget, DiracTarget


def fd_gradient(f, x, h=1e-5):
    return np.array([
        (f(x + h * e) - f(x - h * e)) / (2 * h) for e in np.eye(len(x))
    ])


@pytest.fixture(scope="module")
def mix(sched, five_atom):
    return MixtureScore(sched, five_atom.atoms)


class TestScore:
    def test_gaussian_closed_form(self):
        s = constant_schedule(1.0, 2.0)
        # sigma^2 = 0.75 at t = log 2
        f = DiracScore(s, np.zeros(2))
        out = f.score(math.log(2.0), np.array([1.0, 0.0]))
        assert out == pytest.approx([-4.0 / 3.0, 0.0], rel=1e-12)

    def test_symmetric_pair_cancels_at_origin(self, sched, two_atom):
        f = MixtureScore(sched, two_atom.atoms)
        for t in (0.05, 0.4, 2.0):
            assert np.allclose(f.score(t, np.zeros(2)), 0.0, atol=1e-14)

    def test_matches_fd_of_log_density(self, sched, mix):
        rng = np.random.default_rng(0)
        for _ in range(100):
            t = rng.uniform(0.05, 4.0)
            x = rng.normal(size=2) * 2
            fd = fd_gradient(lambda z: mix.log_density(t, z), x)
            s = mix.score(t, x)
            assert np.linalg.norm(s - fd) <= 1e-6 * max(np.linalg.norm(s), 1e-3)

    def test_singularity_guard(self, mix):
        with pytest.raises(ScoreSingularityError):
            mix.score(0.0, np.zeros(2))

    def test_batch_matches_single(self, sched, mix):
        xb = np.random.default_rng(1).normal(size=(7, 2))
        batch = mix.score(0.3, xb)
        for i, x in enumerate(xb):
            assert np.allclose(batch[i], mix.score(0.3, x), atol=1e-14)

    def test_overflow_free_extremes(self, sched, mix, cube12):
        hc = HypercubeScore(sched, 1, 2)
        x = np.array([1e3, 1e3])
        t = 5.05e-7  # sigma^2 ~ 1e-6
        assert math.isclose(sched.eval(t).sigma2, 1e-6, rel_tol=0.02)
        for f in (mix, hc):
            assert np.all(np.isfinite(f.score(t, x)))
            assert np.all(np.isfinite(f.hessian(t, x)))


class TestHessian:
    def test_dirac_isotropic(self):
        s = constant_schedule(1.0, 2.0)
        f = DiracScore(s, np.zeros(2))
        t = -0.5 * math.log(0.5)  # sigma^2 = 0.5
        assert np.allclose(f.hessian(t, np.ones(2)), -2.0 * np.eye(2), atol=1e-12)

    def test_covariance_equals_pairwise_form(self, sched):
        rng = np.random.default_rng(5)
        for n_atoms in (2, 3, 5, 8):
            f = MixtureScore(sched, rng.normal(size=(n_atoms, 2)) * 0.5)
            for _ in range(10):
                t = rng.uniform(0.05, 4.0)
                x = rng.normal(size=2)
                H1 = f.hessian(t, x)
                H2 = f.hessian_pairwise(t, x)
                assert np.abs(H1 - H2).max() < 1e-12 * max(np.abs(H1).max(), 1.0)

    def test_matches_fd_jacobian_of_score(self, sched, mix):
        rng = np.random.default_rng(2)
        for _ in range(100):
            t = rng.uniform(0.05, 4.0)
            x = rng.normal(size=2) * 2
            J = np.stack([
                (mix.score(t, x + 1e-5 * e) - mix.score(t, x - 1e-5 * e)) / 2e-5
                for e in np.eye(2)
            ]).T
            H = mix.hessian(t, x)
            assert np.abs(H - J).max() <= 1e-5 * max(np.abs(H).max(), 1.0)

    def test_symmetry(self, sched, mix):
        H = mix.hessian(0.2, np.array([0.3, -0.7]))
        assert np.abs(H - H.T).max() <= 1e-10 * np.abs(H).max()

    def test_quadratic_form_bound(self, sched, five_atom, mix):
        # <V, H V> <= -(1 - m^2 diam^2/(2 sigma^2))/sigma^2 |V|^2
        rng = np.random.default_rng(3)
        diam = five_atom.diameter()
        for _ in range(100):
            t = rng.uniform(0.01, 4.0)
            x = rng.normal(size=2) * 3
            V = rng.normal(size=(2, 2))
            ev = sched.eval(t)
            qf = float(np.tensordot(V, mix.hessian(t, x) @ V))
            cap = -(1 - ev.m**2 * diam**2 / (2 * ev.sigma2)) / ev.sigma2 \
                * float((V**2).sum())
            assert qf <= cap + 1e-9

    def test_operator_norm_bound(self, sched, five_atom, mix):
        rng = np.random.default_rng(4)
        diam = five_atom.diameter()
        for _ in range(200):
            t = rng.uniform(0.01, 4.0)
            x = rng.normal(size=2) * 3
            ev = sched.eval(t)
            H = mix.hessian(t, x)
            assert np.abs(np.linalg.eigvalsh(H)).max() \
                <= (1 + diam**2) / ev.sigma2**2 + 1e-9

    def test_hessian_batch_matches_loop(self, sched, mix):
        xb = np.random.default_rng(6).normal(size=(5, 2))
        hb = mix.hessian_batch(0.7, xb)
        for i, x in enumerate(xb):
            assert np.allclose(hb[i], mix.hessian(0.7, x), atol=1e-13)


class TestDtScore:
    def test_dirac_closed_form(self, sched):
        # d/dt of -x/sigma_t^2 is +2 beta m^2 x / sigma^4
        f = DiracScore(sched, np.zeros(2))
        x = np.array([0.7, -0.2])
        for t in (0.1, 0.5, 2.0):
            ev = sched.eval(t)
            expected = 2.0 * 1.0 * ev.m**2 * x / ev.sigma2**2
            assert np.allclose(f.dt_score(t, x), expected, rtol=1e-12)

    def test_matches_fd_in_t(self, sched):
        rng = np.random.default_rng(7)
        f = MixtureScore(sched, rng.normal(size=(4, 2)) * 0.5)
        for _ in range(100):
            t = rng.uniform(0.1, 3.9)
            x = rng.normal(size=2)
            fd = (f.score(t + 1e-6, x) - f.score(t - 1e-6, x)) / 2e-6
            an = f.dt_score(t, x)
            assert np.linalg.norm(an - fd) <= 1e-5 * max(np.linalg.norm(fd), 1e-6)

    def test_growth_envelope_far_field(self, sched, five_atom, mix):
        diam = five_atom.diameter()
        rng = np.random.default_rng(8)
        for _ in range(50):
            t = rng.uniform(0.02, 4.0)
            x = rng.normal(size=2) * 50.0
            ev = sched.eval(t)
            cap = (1.0 / ev.sigma2**3) * (2 + diam**2) \
                * (diam + np.linalg.norm(x))
            assert np.linalg.norm(mix.dt_score(t, x)) <= cap + 1e-9

    def test_hypercube_unsupported(self, sched):
        hc = HypercubeScore(sched, 1, 2)
        with pytest.raises(UnsupportedFieldOperation):
            hc.dt_score(0.5, np.zeros(2))


class TestPerturbation:
    def test_zero_level_is_identity(self, sched, mix):
        spec = PerturbSpec(mode="fixed", u=np.array([1.0, 0.0]))
        assert perturb(mix, 0.0, spec) is mix

    def test_offset_at_origin(self, sched):
        # amp = M (1 + |x|)/sigma^2 = 0.01 * 1 / 0.5 = 0.02 along e1
        s = constant_schedule(1.0, 2.0)
        f = DiracScore(s, np.zeros(2))
        t = -0.5 * math.log(0.5)
        p = perturb(f, 0.01, PerturbSpec(mode="fixed", u=np.array([1.0, 0.0])))
        diff = p.score(t, np.zeros(2)) - f.score(t, np.zeros(2))
        assert diff == pytest.approx([0.02, 0.0], rel=1e-12)

    @pytest.mark.parametrize("mode", ["fixed", "radial"])
    def test_error_saturates_envelope_exactly(self, sched, mix, mode):
        spec = PerturbSpec(mode=mode,
                           u=np.array([0.6, 0.8]) if mode == "fixed" else None)
        p = perturb(mix, 0.03, spec)
        rng = np.random.default_rng(9)
        for _ in range(1000):
            t = rng.uniform(0.01, 4.0)
            x = rng.normal(size=2) * 2
            ev = sched.eval(t)
            err = np.linalg.norm(p.score(t, x) - mix.score(t, x))
            envelope = 0.03 * (1 + np.linalg.norm(x)) / ev.sigma2
            if mode == "radial" and np.linalg.norm(x) == 0:
                assert err == 0.0
            else:
                assert err == pytest.approx(envelope, rel=1e-12)

    def test_no_hessian_on_perturbed(self, sched, mix):
        p = perturb(mix, 0.01, PerturbSpec(mode="radial"))
        with pytest.raises(UnsupportedFieldOperation):
            p.hessian(0.5, np.zeros(2))

    def test_l2_perturb_without_region_matches_perturb(self, sched, mix):
        spec = PerturbSpec(mode="radial", growth="flat")
        a = l2_perturb(mix, 0.02, 0.5, None, spec)
        b = perturb(mix, 0.02, spec)
        x = np.random.default_rng(10).normal(size=(20, 2))
        assert np.allclose(a.score(0.3, x), b.score(0.3, x), atol=1e-15)

    def test_l2_budget_outside_bad_region(self, sched, mix):
        # flat growth keeps the mean-square error within its stated budget
        spec = PerturbSpec(mode="radial", growth="flat")
        field = l2_perturb(mix, 0.05, 0.25,
                           lambda xb: np.linalg.norm(xb, axis=-1) > 1e9, spec)
        cloud = np.random.default_rng(11).normal(size=(2000, 2))
        rep = empirical_mean_square_error(field, 0.5, cloud)
        assert rep["mse"] <= rep["budget"] * (1 + 1e-12)

    def test_markov_bound_on_threshold_region(self, sched, mix):
        # P(|err| > (M/zeta)/sigma^2) <= zeta^2 E[1 + |Y|^2]
        zeta = 0.5
        M = 0.05
        bad = lambda xb: np.linalg.norm(xb, axis=-1) > 2.0
        spec = PerturbSpec(mode="radial", growth="flat")
        field = l2_perturb(mix, M, zeta, bad, spec)
        rng = np.random.default_rng(12)
        cloud = rng.normal(size=(5000, 2))
        t = 0.5
        s2 = sched.eval(t).sigma2
        err = np.linalg.norm(field.score(t, cloud) - mix.score(t, cloud), axis=-1)
        p_hat = (err > (M / zeta) / s2).mean()
        markov = zeta**2 * (1 + (cloud**2).sum(-1)).mean()
        assert p_hat <= markov


class TestDsmLoss:
    def test_zero_field_dirac_equals_conditional_variance_integral(self):
        # |0 - (-z/sigma)|^2 integrates to int d/sigma_t^2 dt
        s = constant_schedule(1.0, 2.0)
        tgt = DiracTarget(d=2)
        field = ZeroScore(s, 2)
        est = dsm_loss(field, tgt, n_mc=4000, n_time=64, seed=0)
        oracle, _ = quad(lambda t: 2.0 / s.eval(t).sigma2, est.t_lower, 2.0,
                         limit=200)
        assert est.value == pytest.approx(oracle, rel=0.05)

    def test_exact_field_dirac_is_zero(self):
        # the conditional score of a point mass IS the exact score
        s = constant_schedule(1.0, 2.0)
        field = DiracScore(s, np.zeros(2))
        est = dsm_loss(field, DiracTarget(d=2), n_mc=64, n_time=16, seed=1)
        assert est.value == pytest.approx(0.0, abs=1e-22)

    def test_exact_score_minimizes(self, sched, two_atom):
        # expectation-zero cross term: exact <= perturbed on matched seeds
        exact = MixtureScore(sched, two_atom.atoms)
        worse = perturb(exact, 0.02, PerturbSpec(mode="radial"))
        l_exact = dsm_loss(exact, two_atom, n_mc=2000, n_time=24, seed=2)
        l_worse = dsm_loss(worse, two_atom, n_mc=2000, n_time=24, seed=2)
        assert l_exact.value <= l_worse.value

    def test_monte_carlo_scaling(self, sched, two_atom):
        # 4x the samples halves the replicate standard error
        exact = MixtureScore(sched, two_atom.atoms)
        small = [dsm_loss(exact, two_atom, n_mc=50, n_time=8, seed=s).value
                 for s in range(30)]
        big = [dsm_loss(exact, two_atom, n_mc=200, n_time=8, seed=100 + s).value
               for s in range(30)]
        ratio = np.std(big, ddof=1) / np.std(small, ddof=1)
        assert 0.3 <= ratio <= 0.75

    def test_reported_std_err_scaling(self, sched, two_atom):
        # variance estimates are themselves noisy, so average a few seeds
        exact = MixtureScore(sched, two_atom.atoms)
        ratios = []
        for seed in range(5):
            a = dsm_loss(exact, two_atom, n_mc=100, n_time=8, seed=seed)
            b = dsm_loss(exact, two_atom, n_mc=400, n_time=8, seed=seed)
            ratios.append(b.std_err / a.std_err)
        assert np.mean(ratios) == pytest.approx(0.5, abs=0.15)


class TestExactScoreDispatch:
    def test_circle_requires_discretization(self, sched):
        with pytest.raises(UnsupportedFieldOperation):
            exact_score(CircleTarget(d=2), sched)

    def test_dispatch_types(self, sched, dirac2, two_atom, cube12):
        assert isinstance(exact_score(dirac2, sched), DiracScore)
        assert isinstance(exact_score(two_atom, sched), MixtureScore)
        assert isinstance(exact_score(cube12, sched), HypercubeScore)
