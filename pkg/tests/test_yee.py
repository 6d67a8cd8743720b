import numpy as np
import pytest
import scipy.sparse as sp

from sfeec.basis import build_space
from sfeec.dynamics import UnitSystem
from sfeec.mesh import generate_cubical_lattice, generate_periodic_triangulation
from sfeec.operators import derivative_matrix, mass_matrix
from sfeec.yee import (EQUIVALENCE_TOL, YeeGrid, cochains_to_grid, equivalence_check,
                       grid_to_cochains, lumped_mass, yee_fdtd_step, yee_half_step_b, yee_run)

SPACING = (1.0, 0.5, 2.0)


def random_grid(rng, shape=(4, 4, 4), spacing=SPACING):
    return YeeGrid(shape, spacing, tuple(rng.standard_normal(shape) for _ in range(3)),
                   tuple(rng.standard_normal(shape) for _ in range(3)))


def loop_step(grid, dt, c2=1.0):
    """Scalar-loop FDTD step written index by index."""
    nx, ny, nz = grid.shape
    dx, dy, dz = grid.spacing
    Ex, Ey, Ez = (f.copy() for f in grid.E)
    Bx, By, Bz = (f.copy() for f in grid.B)
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                im, jm, km = i - 1, j - 1, k - 1
                Ex[i, j, k] += c2 * dt * ((Bz[i, j, k] - Bz[i, jm, k]) / dy - (By[i, j, k] - By[i, j, km]) / dz)
                Ey[i, j, k] += c2 * dt * ((Bx[i, j, k] - Bx[i, j, km]) / dz - (Bz[i, j, k] - Bz[im, j, k]) / dx)
                Ez[i, j, k] += c2 * dt * ((By[i, j, k] - By[im, j, k]) / dx - (Bx[i, j, k] - Bx[i, jm, k]) / dy)
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                ip, jp, kp = (i + 1) % nx, (j + 1) % ny, (k + 1) % nz
                Bx[i, j, k] -= dt * ((Ez[i, jp, k] - Ez[i, j, k]) / dy - (Ey[i, j, kp] - Ey[i, j, k]) / dz)
                By[i, j, k] -= dt * ((Ex[i, j, kp] - Ex[i, j, k]) / dz - (Ez[ip, j, k] - Ez[i, j, k]) / dx)
                Bz[i, j, k] -= dt * ((Ey[ip, j, k] - Ey[i, j, k]) / dx - (Ex[i, jp, k] - Ex[i, j, k]) / dy)
    return (Ex, Ey, Ez), (Bx, By, Bz)


def test_lumped_mass_unit_and_scaled():
    V1 = build_space(generate_cubical_lattice(2, 2, 2, 1, 1, 1), "Q1-", 1)
    assert (lumped_mass(V1) != sp.identity(V1.N)).nnz == 0
    V1 = build_space(generate_cubical_lattice(2, 2, 2, 1, 0.5, 1), "Q1-", 1)
    assert np.array_equal(lumped_mass(V1).toarray(), 0.5 * np.eye(V1.N))


def test_lumped_mass_rejects_simplicial_space():
    V1 = build_space(generate_periodic_triangulation(16), "P1-", 1)
    with pytest.raises(ValueError):
        lumped_mass(V1)


def test_lumping_preserves_row_sums(cube_aniso):
    V1 = build_space(cube_aniso, "Q1-", 1)
    M1 = mass_matrix(V1)
    assert np.allclose(np.asarray(M1.sum(axis=1)).ravel(), lumped_mass(V1).diagonal(), rtol=1e-13)


def test_grid_shape_checked():
    with pytest.raises(ValueError):
        YeeGrid((2, 2, 2), (1, 1, 1), tuple(np.zeros((2, 2, 2)) for _ in range(3)),
                (np.zeros((2, 2, 2)), np.zeros((2, 2, 2)), np.zeros((2, 2, 3))))


def test_zero_fields_stay_zero():
    g = yee_run(YeeGrid.zeros((3, 3, 3), (1, 1, 1)), 0.1, 20)
    assert all(not f.any() for f in (*g.E, *g.B))


def test_uniform_field_is_static():
    g = YeeGrid.zeros((3, 4, 2), SPACING)
    g = YeeGrid(g.shape, g.spacing, (np.full(g.shape, 2.5), g.E[1], g.E[2]), g.B)
    out = yee_run(g, 0.1, 30)
    assert np.array_equal(out.E[0], g.E[0])
    assert all(not f.any() for f in (*out.E[1:], *out.B))


def test_vectorized_step_matches_loops(rng):
    g = random_grid(rng)
    out = yee_fdtd_step(g, 0.07, UnitSystem(0.5, 1.0))
    E, B = loop_step(g, 0.07, c2=2.0)
    for f, h in zip((*out.E, *out.B), (*E, *B)):
        assert np.abs(f - h).max() <= 1e-13
    assert out.e_time == pytest.approx(0.07) and out.b_time == pytest.approx(0.07)


def test_curl_matrix_is_the_yee_stencil(rng):
    shape = (3, 4, 5)
    mesh = generate_cubical_lattice(*shape, *SPACING)
    C = derivative_matrix(build_space(mesh, "Q1-", 1), build_space(mesh, "Q1-", 2))
    g = random_grid(rng, shape)
    _, e = grid_to_cochains(g)
    vol = float(np.prod(SPACING))
    # one B-only update with dt = 1 from zero B gives -curl E
    zero_b = YeeGrid(shape, SPACING, g.E, tuple(np.zeros(shape) for _ in range(3)))
    curl_e = np.concatenate([f.ravel() for f in yee_half_step_b(zero_b, 1.0).B])
    assert np.abs(C @ (e / vol) + curl_e).max() <= 1e-13
    # C^T is the backward-difference curl acting on B
    b, _ = grid_to_cochains(g)
    zero_e = YeeGrid(shape, SPACING, tuple(np.zeros(shape) for _ in range(3)), g.B)
    curl_b = np.concatenate([f.ravel() for f in yee_fdtd_step(zero_e, 1.0).E])
    assert np.abs(C.T @ b - curl_b).max() <= 1e-13


def test_cochain_round_trip(rng):
    g = random_grid(rng)
    b, e = grid_to_cochains(g)
    back = cochains_to_grid(b, e, g.shape, g.spacing)
    for f, h in zip((*g.E, *g.B), (*back.E, *back.B)):
        assert np.allclose(f, h, rtol=1e-15, atol=0)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_equivalence_anisotropic(seed):
    assert equivalence_check(4, 4, 4, SPACING, 0.1, 100, seed) <= EQUIVALENCE_TOL


def test_equivalence_non_cubic_grid_and_units():
    assert equivalence_check(3, 4, 5, (0.3, 0.7, 1.1), 0.05, 60, 4, UnitSystem(2.0, 0.5)) <= EQUIVALENCE_TOL


def test_equivalence_zero_step():
    assert equivalence_check(4, 4, 4, SPACING, 0.0, 100, 0) == 0.0


def test_equivalence_detects_a_wrong_step():
    # half the time step in one scheme only must be visible
    a = yee_run(random_grid(np.random.default_rng(1)), 0.1, 10)
    b = yee_run(random_grid(np.random.default_rng(1)), 0.05, 10)
    assert max(np.abs(f - h).max() for f, h in zip(a.E, b.E)) > 1e-3
