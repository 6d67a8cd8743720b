"""Lumped-mass Q1- discretization versus the classical Yee scheme.

Field layout on a periodic nx x ny x nz grid (index [i, j, k]):

    Ex at (i+1/2, j, k)      Bx at (i, j+1/2, k+1/2)
    Ey at (i, j+1/2, k)      By at (i+1/2, j, k+1/2)
    Ez at (i, j, k+1/2)      Bz at (i+1/2, j+1/2, k)

which is the Q1- edge/face numbering of :func:`generate_cubical_lattice`
flattened in C order. :func:`yee_fdtd_step` and its helpers use nothing but
numpy so they can serve as an independent reference.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .basis import Cochain, FormSpace, build_space
from .dynamics import FieldState, SplitScheme, UnitSystem, step
from .mesh import generate_cubical_lattice
from .operators import derivative_matrix

__all__ = [
    "lumped_mass",
    "YeeGrid",
    "yee_fdtd_step",
    "yee_half_step_b",
    "yee_run",
    "grid_to_cochains",
    "cochains_to_grid",
    "equivalence_check",
]

EQUIVALENCE_TOL = 1e-12


def lumped_mass(space: FormSpace) -> sp.csr_matrix:
    """Diagonal lumped mass Delta_V * I for a Q1- space on a cubical mesh."""
    if space.family != "Q1-" or space.mesh.cell_kind != "cube":
        raise ValueError(f"lumping is defined for Q1- cubical spaces, not {space.family}")
    vol = float(np.prod(space.mesh.lattice_spacings))
    return sp.identity(space.n_dofs, format="csr") * vol


@dataclass(frozen=True)
class YeeGrid:
    shape: tuple[int, int, int]
    spacing: tuple[float, float, float]
    E: tuple[np.ndarray, np.ndarray, np.ndarray]
    B: tuple[np.ndarray, np.ndarray, np.ndarray]
    e_time: float = 0.0
    b_time: float = 0.0

    def __post_init__(self):
        for f in (*self.E, *self.B):
            if f.shape != tuple(self.shape):
                raise ValueError(f"field of shape {f.shape} on a {self.shape} grid")

    @classmethod
    def zeros(cls, shape, spacing) -> "YeeGrid":
        z = tuple(np.zeros(shape) for _ in range(3))
        return cls(tuple(shape), tuple(spacing), z, tuple(np.zeros(shape) for _ in range(3)))


def _fwd(f, axis, h):
    return (np.roll(f, -1, axis) - f) / h


def _bwd(f, axis, h):
    return (f - np.roll(f, 1, axis)) / h


def _curl_e(E, spacing):
    ex, ey, ez = E
    dx, dy, dz = spacing
    return (_fwd(ez, 1, dy) - _fwd(ey, 2, dz),
            _fwd(ex, 2, dz) - _fwd(ez, 0, dx),
            _fwd(ey, 0, dx) - _fwd(ex, 1, dy))


def _curl_b(B, spacing):
    bx, by, bz = B
    dx, dy, dz = spacing
    return (_bwd(bz, 1, dy) - _bwd(by, 2, dz),
            _bwd(bx, 2, dz) - _bwd(bz, 0, dx),
            _bwd(by, 0, dx) - _bwd(bx, 1, dy))


def yee_half_step_b(grid: YeeGrid, dt: float) -> YeeGrid:
    """Advance B alone by ``dt`` (use dt/2 for the staggering start-up and wind-down)."""
    curl = _curl_e(grid.E, grid.spacing)
    B = tuple(b - dt * c for b, c in zip(grid.B, curl))
    return replace(grid, B=B, b_time=grid.b_time + dt)


def yee_fdtd_step(grid: YeeGrid, dt: float, units: UnitSystem = UnitSystem()) -> YeeGrid:
    """One leapfrog step: E from curl B at the half step, then B from the new E."""
    curl = _curl_b(grid.B, grid.spacing)
    E = tuple(e + units.c2 * dt * c for e, c in zip(grid.E, curl))
    grid = replace(grid, E=E, e_time=grid.e_time + dt)
    return yee_half_step_b(grid, dt)


def yee_run(grid: YeeGrid, dt: float, steps: int, units: UnitSystem = UnitSystem()) -> YeeGrid:
    """``steps`` leapfrog steps from co-located E and B, returning co-located fields."""
    if steps == 0:
        return grid
    grid = yee_half_step_b(grid, 0.5 * dt)
    for _ in range(steps):
        grid = yee_fdtd_step(grid, dt, units)
    # the last full B update overshoots by half a step
    return yee_half_step_b(grid, -0.5 * dt)


def grid_to_cochains(grid: YeeGrid) -> tuple[np.ndarray, np.ndarray]:
    """(b, e) coefficient vectors: b = B and e = Delta_V * E (lumped mass weighting)."""
    vol = float(np.prod(grid.spacing))
    b = np.concatenate([f.ravel() for f in grid.B])
    e = vol * np.concatenate([f.ravel() for f in grid.E])
    return b, e


def cochains_to_grid(b: np.ndarray, e: np.ndarray, shape, spacing, time: float = 0.0) -> YeeGrid:
    vol = float(np.prod(spacing))
    nc = int(np.prod(shape))
    B = tuple(b[a * nc:(a + 1) * nc].reshape(shape) for a in range(3))
    E = tuple((e[a * nc:(a + 1) * nc] / vol).reshape(shape) for a in range(3))
    return YeeGrid(tuple(shape), tuple(spacing), E, B, time, time)


def equivalence_check(nx: int, ny: int, nz: int, spacing=(1.0, 1.0, 1.0), dt: float = 0.1,
                      steps: int = 100, seed: int = 0, units: UnitSystem = UnitSystem()) -> float:
    """Max |difference| between lumped Strang (b, e) evolution and the Yee oracle.

    Both runs start from the same random fields; the comparison is made in
    Yee units (E = e / Delta_V, B = b).
    """
    shape = (nx, ny, nz)
    rng = np.random.default_rng(seed)
    grid0 = YeeGrid(shape, tuple(spacing),
                    tuple(rng.standard_normal(shape) for _ in range(3)),
                    tuple(rng.standard_normal(shape) for _ in range(3)))

    mesh = generate_cubical_lattice(nx, ny, nz, *spacing)
    V1, V2 = build_space(mesh, "Q1-", 1), build_space(mesh, "Q1-", 2)
    C = derivative_matrix(V1, V2)
    b, e = grid_to_cochains(grid0)
    state = FieldState("be", Cochain(V2, b), Cochain(V1, e, "mass-weighted"))
    if dt != 0.0:
        vol = float(np.prod(spacing))
        Q = sp.identity(V1.n_dofs, format="csr") / vol
        scheme = SplitScheme("strang", dt, Q, lumped_mass(V2), C, units, check_cfl=False)
        for _ in range(steps):
            state = step(state, scheme)
    feec = cochains_to_grid(state.first.values, state.e.values, shape, spacing)

    ref = yee_run(grid0, dt, steps if dt != 0.0 else 0, units)
    dev = [np.abs(f - g).max() for f, g in zip((*feec.E, *feec.B), (*ref.E, *ref.B))]
    return float(max(dev))
