import numpy as np
import pytest

from ddlab.targets import (
    CircleTarget,
    DiracTarget,
    EmpiricalTarget,
    HypercubeTarget,
    two_atom_target,
)


class TestSampling:
    def test_dirac_copies(self):
        t = DiracTarget(d=3)
        s = t.sample(3, 0)
        assert s.shape == (3, 3) and np.all(s == 0)

    def test_hypercube_support_membership(self):
        t = HypercubeTarget(d=3, p=2, side=1.0)
        s = t.sample(500, 1)
        assert np.all(np.abs(s[:, :2]) <= 0.5)
        assert np.all(s[:, 2] == 0.0)

    def test_empirical_atom_frequencies(self):
        t = EmpiricalTarget(d=1, atoms=[[0.0], [1.0]])
        s = t.sample(10_000, 2)
        freq = (s[:, 0] == 0.0).mean()
        # binomial: 0.5 +- 3 sqrt(.25/n) ~ 0.015 < 0.02
        assert abs(freq - 0.5) < 0.02

    def test_deterministic_given_seed(self):
        t = CircleTarget(d=2)
        assert np.array_equal(t.sample(64, 9), t.sample(64, 9))

    def test_circle_on_support(self):
        t = CircleTarget(d=3, radius=2.0)
        s = t.sample(100, 4)
        assert np.allclose(np.linalg.norm(s[:, :2], axis=1), 2.0, atol=1e-12)
        assert np.all(s[:, 2] == 0.0)


class TestDiameter:
    def test_dirac(self):
        assert DiracTarget(d=2).diameter() == 0.0

    def test_hypercube_sqrt_p(self):
        assert HypercubeTarget(d=8, p=4, side=1.0).diameter() == pytest.approx(2.0)

    def test_empirical_pythagorean(self):
        t = EmpiricalTarget(d=2, atoms=[[0, 0], [3, 4]])
        assert t.diameter() == pytest.approx(5.0)

    def test_circle(self):
        assert CircleTarget(d=2, radius=1.5).diameter() == 3.0

    def test_diameter_dominates_sampled_pairs(self, five_atom):
        s = five_atom.sample(200, 0)
        pair = np.linalg.norm(s[:, None, :] - s[None, :, :], axis=-1)
        assert pair.max() <= five_atom.diameter() + 1e-12


class TestMinkowskiDim:
    @pytest.mark.parametrize("target,dim", [
        (DiracTarget(d=2), 0.0),
        (HypercubeTarget(d=3, p=2), 2.0),
        (CircleTarget(d=2), 1.0),
    ])
    def test_known_values(self, target, dim):
        assert target.minkowski_dim() == dim


class TestAsEmpirical:
    def test_dirac_atoms(self):
        emp = DiracTarget(d=2).as_empirical(5, 0)
        assert emp.atoms.shape == (5, 2) and np.all(emp.atoms == 0)

    def test_circle_atoms_on_support(self):
        emp = CircleTarget(d=2).as_empirical(64, 3)
        assert np.allclose(np.linalg.norm(emp.atoms, axis=1), 1.0, atol=1e-12)

    def test_hypercube_clt_mean(self):
        emp = HypercubeTarget(d=1, p=1, side=1.0).as_empirical(1000, 5)
        # sd of the mean = side/sqrt(12 n) ~ 0.009 << 0.05
        assert abs(emp.atoms.mean()) < 0.05

    def test_grid_atoms_equispaced(self):
        emp = CircleTarget(d=2).grid_atoms(8)
        angles = np.sort(np.arctan2(emp.atoms[:, 1], emp.atoms[:, 0]))
        gaps = np.diff(angles)
        assert np.allclose(gaps, np.pi / 4, atol=1e-12)


class TestProjection:
    def test_on_support_distance_zero(self, two_atom):
        s = two_atom.sample(50, 1)
        assert np.all(two_atom.support_distance(s) < 1e-14)

    def test_hypercube_normal_distance(self):
        t = HypercubeTarget(d=2, p=1, side=1.0)
        assert t.support_distance(np.array([[0.0, 0.3]]))[0] == pytest.approx(0.3)

    def test_circle_radial(self):
        t = CircleTarget(d=2)
        assert t.support_distance(np.array([[2.0, 0.0]]))[0] == pytest.approx(1.0)
        # center projects somewhere on the circle, distance = radius
        assert t.support_distance(np.array([[0.0, 0.0]]))[0] == pytest.approx(1.0)

    def test_two_atom_separation(self):
        t = two_atom_target(1.0, d=2)
        assert t.diameter() == pytest.approx(1.0)
        assert np.allclose(sorted(t.atoms[:, 0]), [-0.5, 0.5])


class TestValidation:
    def test_empty_atoms_rejected(self):
        with pytest.raises(ValueError):
            EmpiricalTarget(d=2, atoms=np.empty((0, 2)))

    def test_bad_p_rejected(self):
        with pytest.raises(ValueError):
            HypercubeTarget(d=2, p=3)

    def test_recentered_bounding_box(self):
        t = EmpiricalTarget(d=1, atoms=[[1.0], [3.0]])
        r = t.recentered()
        assert np.allclose(sorted(r.atoms[:, 0]), [-1.0, 1.0])
