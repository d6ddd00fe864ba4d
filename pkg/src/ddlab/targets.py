"""Compactly supported target distributions with sampling and geometry.

Four variants cover the lab's needs: a point mass, a finite atom cloud, a
uniform hypercube of intrinsic dimension ``p`` embedded in ``R^d``, and a
circle embedded in ``R^d``.  Every variant knows how to sample itself, its
exact diameter, its (analytic) box-counting dimension, and how to project an
arbitrary point onto its support.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist

__all__ = [
    "CompactTarget",
    "DiracTarget",
    "EmpiricalTarget",
    "HypercubeTarget",
    "CircleTarget",
    "target_rng",
]


def target_rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class CompactTarget:
    """Common interface: bounded support in R^d containing points near 0."""

    d: int

    def sample(self, n: int, seed) -> np.ndarray:
        raise NotImplementedError

    def diameter(self) -> float:
        raise NotImplementedError

    def minkowski_dim(self) -> float:
        """Analytic box-counting dimension of the support."""
        raise NotImplementedError

    def project(self, x: np.ndarray) -> np.ndarray:
        """Nearest point of the support, rows of ``x`` handled independently."""
        raise NotImplementedError

    def support_distance(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.linalg.norm(x - self.project(x), axis=-1)

    def as_empirical(self, N: int, seed) -> "EmpiricalTarget":
        """Empirical measure of N i.i.d. draws."""
        if N < 1:
            raise ValueError("N must be >= 1")
        return EmpiricalTarget(d=self.d, atoms=self.sample(N, seed))

    def recentered(self) -> "CompactTarget":
        """Translate so the bounding-box center of the support sits at 0."""
        return self


@dataclass(frozen=True)
class DiracTarget(CompactTarget):
    """Point mass at ``point``."""

    point: np.ndarray = None

    def __post_init__(self):
        pt = np.zeros(self.d) if self.point is None else np.asarray(self.point, float)
        if pt.shape != (self.d,):
            raise ValueError("point must have shape (d,)")
        object.__setattr__(self, "point", pt)

    def sample(self, n, seed):
        if n < 1:
            raise ValueError("n must be >= 1")
        return np.tile(self.point, (n, 1))

    def diameter(self):
        return 0.0

    def minkowski_dim(self):
        return 0.0

    def project(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.broadcast_to(self.point, x.shape).copy()

    def recentered(self):
        return DiracTarget(d=self.d, point=np.zeros(self.d))


@dataclass(frozen=True)
class EmpiricalTarget(CompactTarget):
    """Uniform measure over a finite, non-empty set of atoms (rows)."""

    atoms: np.ndarray = None

    def __post_init__(self):
        atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        if atoms.shape[0] < 1 or atoms.shape[1] != self.d:
            raise ValueError("atoms must be a non-empty (N, d) array")
        object.__setattr__(self, "atoms", atoms)

    def sample(self, n, seed):
        if n < 1:
            raise ValueError("n must be >= 1")
        rng = target_rng(seed)
        idx = rng.integers(0, self.atoms.shape[0], size=n)
        return self.atoms[idx].copy()

    def diameter(self):
        if self.atoms.shape[0] == 1:
            return 0.0
        return float(pdist(self.atoms).max())

    def minkowski_dim(self):
        return 0.0

    def project(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        d2 = ((x[:, None, :] - self.atoms[None, :, :]) ** 2).sum(axis=-1)
        return self.atoms[np.argmin(d2, axis=1)].copy()

    def recentered(self):
        center = 0.5 * (self.atoms.min(axis=0) + self.atoms.max(axis=0))
        return EmpiricalTarget(d=self.d, atoms=self.atoms - center)


def two_atom_target(separation: float = 1.0, d: int = 2) -> EmpiricalTarget:
    """Symmetric two-atom cloud at +-(separation/2) e_1; diameter = separation."""
    a = np.zeros((2, d))
    a[0, 0] = +0.5 * separation
    a[1, 0] = -0.5 * separation
    return EmpiricalTarget(d=d, atoms=a)


@dataclass(frozen=True)
class HypercubeTarget(CompactTarget):
    """Uniform measure on [-side/2, side/2]^p x {0}^(d-p)."""

    p: int = 1
    side: float = 1.0

    def __post_init__(self):
        if not (1 <= self.p <= self.d):
            raise ValueError("need 1 <= p <= d")
        if self.side <= 0:
            raise ValueError("side must be positive")

    def sample(self, n, seed):
        if n < 1:
            raise ValueError("n must be >= 1")
        rng = target_rng(seed)
        out = np.zeros((n, self.d))
        out[:, : self.p] = rng.uniform(-0.5 * self.side, 0.5 * self.side,
                                       size=(n, self.p))
        return out

    def diameter(self):
        return self.side * float(np.sqrt(self.p))

    def minkowski_dim(self):
        return float(self.p)

    def project(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.zeros_like(x)
        out[:, : self.p] = np.clip(x[:, : self.p], -0.5 * self.side,
                                   0.5 * self.side)
        return out


@dataclass(frozen=True)
class CircleTarget(CompactTarget):
    """Uniform measure on the circle of given radius in the first two
    coordinates, centered at ``center`` (default 0)."""

    radius: float = 1.0
    center: np.ndarray = None

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("circle needs d >= 2")
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        c = np.zeros(self.d) if self.center is None else np.asarray(self.center, float)
        if c.shape != (self.d,):
            raise ValueError("center must have shape (d,)")
        object.__setattr__(self, "center", c)

    def _embed(self, angles: np.ndarray) -> np.ndarray:
        out = np.tile(self.center, (angles.shape[0], 1))
        out[:, 0] += self.radius * np.cos(angles)
        out[:, 1] += self.radius * np.sin(angles)
        return out

    def sample(self, n, seed):
        if n < 1:
            raise ValueError("n must be >= 1")
        rng = target_rng(seed)
        return self._embed(rng.uniform(0.0, 2.0 * np.pi, size=n))

    def grid_atoms(self, N: int) -> EmpiricalTarget:
        """Deterministic N-point equispaced discretization of the circle."""
        if N < 1:
            raise ValueError("N must be >= 1")
        angles = 2.0 * np.pi * np.arange(N) / N
        return EmpiricalTarget(d=self.d, atoms=self._embed(angles))

    def diameter(self):
        return 2.0 * self.radius

    def minkowski_dim(self):
        return 1.0

    def project(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        rel = x[:, :2] - self.center[:2]
        norm = np.linalg.norm(rel, axis=1, keepdims=True)
        # Points at the exact center project to angle 0 by convention.
        safe = np.where(norm > 0, norm, 1.0)
        unit = np.where(norm > 0, rel / safe, np.array([1.0, 0.0]))
        out = np.tile(self.center, (x.shape[0], 1))
        out[:, :2] += self.radius * unit
        return out

    def recentered(self):
        return CircleTarget(d=self.d, radius=self.radius,
                            center=np.zeros(self.d))
