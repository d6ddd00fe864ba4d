import itertools
import math

import numpy as np
import pytest
from scipy.integrate import quad

from ddlab.metrics import (
    CloudSizeError,
    support_distance,
    w1,
    w1_1d,
    w1_exact,
    w1_sliced,
)
from ddlab.targets import DiracTarget, HypercubeTarget


class TestW11d:
    def test_identical(self):
        a = np.random.default_rng(0).normal(size=100)
        assert w1_1d(a, a).value == 0.0

    def test_point_pair(self):
        assert w1_1d(np.array([0.0]), np.array([1.0])).value == 1.0

    def test_exhaustive_two_point(self):
        # min over both pairings of {0,2} -> {1,1}: min(1+1, 2+0)/2 = 1
        a, b = np.array([0.0, 2.0]), np.array([1.0, 1.0])
        brute = min(
            np.abs(a - b[list(p)]).mean()
            for p in itertools.permutations(range(2))
        )
        assert w1_1d(a, b).value == pytest.approx(brute)

    def test_unequal_sizes_exact(self):
        # CDF-area route agrees with duplicating points to a common size
        rng = np.random.default_rng(1)
        a = rng.normal(size=30)
        b = rng.normal(size=20) + 0.3
        a_dup = np.repeat(a, 2)   # 60 atoms, same measure
        b_dup = np.repeat(b, 3)   # 60 atoms, same measure
        assert w1_1d(a, b).value == pytest.approx(
            w1_1d(a_dup, b_dup).value, rel=1e-12)


class TestW1Exact:
    def test_identical_clouds(self):
        a = np.random.default_rng(0).normal(size=(50, 3))
        assert w1_exact(a, a).value == 0.0

    def test_matches_1d_sorted_coupling(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(64, 1))
        b = rng.normal(size=(64, 1)) + 0.5
        assert w1_exact(a, b).value == pytest.approx(w1_1d(a, b).value,
                                                     abs=1e-12)

    def test_translation(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(40, 2))
        v = np.array([0.3, -0.4])
        assert w1_exact(a, a + v).value == pytest.approx(0.5, rel=1e-9)

    def test_size_cap(self):
        a = np.zeros((1500, 2))
        with pytest.raises(CloudSizeError):
            w1_exact(a, a)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(30, 2))
        b = rng.normal(size=(30, 2))
        pa = a[rng.permutation(30)]
        pb = b[rng.permutation(30)]
        assert w1_exact(a, b).value == pytest.approx(w1_exact(pa, pb).value,
                                                     rel=1e-12)

    def test_triangle_inequality(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            a, b, c = (rng.normal(size=(16, 2)) for _ in range(3))
            assert w1_exact(a, c).value <= (
                w1_exact(a, b).value + w1_exact(b, c).value + 1e-12)


class TestW1Sliced:
    def test_identical(self):
        a = np.random.default_rng(0).normal(size=(200, 2))
        assert w1_sliced(a, a, n_proj=16).value == 0.0

    def test_shifted_gaussians_mean_abs_projection(self):
        # E_theta |<v, theta>| = 2 |v| / pi in d = 2
        rng = np.random.default_rng(1)
        v = np.array([0.8, -0.6])
        a = rng.normal(size=(60_000, 2))
        est = w1_sliced(a, a + v, n_proj=512, seed=2)
        assert est.value == pytest.approx(2.0 / math.pi, rel=0.05)

    def test_stable_under_refinement(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(2000, 2))
        b = rng.normal(size=(2000, 2)) + 0.3
        e1 = w1_sliced(a, b, n_proj=128, seed=4)
        e2 = w1_sliced(a, b, n_proj=256, seed=5)
        assert abs(e2.value - e1.value) <= 2 * (e1.std_err + e2.std_err)

    def test_projection_contracts(self):
        rng = np.random.default_rng(6)
        a = rng.normal(size=(128, 2))
        b = rng.normal(size=(128, 2)) + 1.0
        sl = w1_sliced(a, b, n_proj=256, seed=7)
        ex = w1_exact(a, b)
        assert sl.value <= ex.value + 3 * sl.std_err


class TestPolicy:
    def test_dispatch(self):
        rng = np.random.default_rng(0)
        assert w1(rng.normal(size=(10, 1)), rng.normal(size=(10, 1))).method \
            == "exact_1d"
        assert w1(rng.normal(size=(10, 2)), rng.normal(size=(10, 2))).method \
            == "exact_assignment"
        big = rng.normal(size=(2000, 2))
        assert w1(big, big, n_proj=8).method == "sliced"
        wide = rng.normal(size=(10, 9))
        assert w1(wide, wide, n_proj=8).method == "sliced"


class TestSupportDistance:
    def test_on_support(self, two_atom):
        rep = support_distance(two_atom.sample(20, 0), two_atom)
        assert rep.mean == 0.0 and rep.max == 0.0

    def test_hypercube_offset(self):
        t = HypercubeTarget(d=2, p=1, side=1.0)
        rep = support_distance(np.array([[0.0, 0.3]]), t)
        assert rep.mean == pytest.approx(0.3)

    def test_dirac_backward_run_concentrates(self):
        from ddlab.schedule import constant_schedule
        from ddlab.scores import DiracScore
        from ddlab.sampler import make_stepgrid, sample_backward
        sched = constant_schedule(1.0, 4.0)
        grid = make_stepgrid(sched, eps=1e-2, delta=0.05)
        cloud = sample_backward(DiracScore(sched, np.zeros(2)), sched, grid,
                                5000, 0)
        rep = support_distance(cloud, DiracTarget(d=2))
        sigma_eps = math.sqrt(sched.eval(1e-2).sigma2)
        assert rep.mean <= 3.0 * math.sqrt(2.0) * sigma_eps
