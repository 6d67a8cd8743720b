import numpy as np
import pytest

from sfeec.basis import build_space
from sfeec.mesh import generate_cubical_lattice, generate_periodic_triangulation
from sfeec.operators import derivative_matrix, mass_matrix


@pytest.fixture(scope="session")
def small_tri():
    return generate_periodic_triangulation(16, seed=0)


@pytest.fixture(scope="session")
def tri256():
    return generate_periodic_triangulation(256, seed=3)


@pytest.fixture(scope="session")
def cube_aniso():
    return generate_cubical_lattice(4, 4, 4, 1.0, 0.5, 2.0)


def complex_of(mesh, family):
    """Spaces, derivative and mass matrices of one de Rham chain."""
    top = mesh.dimension
    spaces = [build_space(mesh, family, p) for p in range(top + 1)]
    ds = [derivative_matrix(spaces[p], spaces[p + 1]) for p in range(top)]
    ms = [mass_matrix(s) for s in spaces]
    return spaces, ds, ms


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
