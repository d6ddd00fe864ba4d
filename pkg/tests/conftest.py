import numpy as np
import pytest

from ddlab.schedule import constant_schedule
from ddlab.targets import DiracTarget, EmpiricalTarget, HypercubeTarget, two_atom_target


@pytest.fixture(scope="session")
def sched():
    return constant_schedule(1.0, 4.0)


@pytest.fixture(scope="session")
def dirac2():
    return DiracTarget(d=2)


@pytest.fixture(scope="session")
def two_atom():
    return two_atom_target(1.0, d=2)


@pytest.fixture(scope="session")
def five_atom():
    rng = np.random.default_rng(3)
    atoms = 0.4 * rng.standard_normal((5, 2))
    atoms -= 0.5 * (atoms.min(axis=0) + atoms.max(axis=0))
    return EmpiricalTarget(d=2, atoms=atoms)


@pytest.fixture(scope="session")
def cube12():
    return HypercubeTarget(d=2, p=1, side=1.0)
