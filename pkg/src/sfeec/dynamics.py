"""Split-step time integration of the semi-discrete Maxwell system.

The state is either (a, e) or (b, e) with b = C a. The Hamiltonian

    H = 1/2 (eps0 e^T Q e + (1/mu0) b^T M2 b)

splits into an electric part, whose exact flow shears a (or b) by e, and a
magnetic part, whose exact flow shears e by C^T M2 b. Both flows are linear
and are applied in closed form.

Q stands in for M1^-1. A sparse approximate inverse need not be symmetric,
and the shear ``a -= dt Q e`` is symplectic only when Q is. Every flow
therefore uses the symmetric part (Q + Q^T)/2, which is the exact flow of the
electric Hamiltonian evaluated with Q (the quadratic form only sees that part).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from .basis import Cochain

__all__ = [
    "UnitSystem",
    "FieldState",
    "SplitScheme",
    "CFLWarning",
    "flow_He",
    "flow_Ha",
    "step",
    "energy",
    "gauss_residual",
    "electric_energy_terms",
    "step_matrix",
    "symplectic_check",
    "spectral_radius_estimate",
    "evolve",
]

SCHEMES = ("strang", "lie-trotter")
FORMULATIONS = ("ae", "be")
DEFAULT_SYMPLECTIC_CAP = 600


class CFLWarning(RuntimeWarning):
    """Time step likely violates the explicit stability bound."""


@dataclass(frozen=True)
class UnitSystem:
    eps0: float = 1.0
    mu0: float = 1.0

    def __post_init__(self):
        if not (self.eps0 > 0 and self.mu0 > 0):
            raise ValueError(f"eps0 and mu0 must be positive, got {self.eps0}, {self.mu0}")

    @property
    def c2(self) -> float:
        return 1.0 / (self.eps0 * self.mu0)


@dataclass(frozen=True)
class FieldState:
    """Immutable field snapshot; ``first`` is a (plain 1-form) or b (plain 2-form)."""

    formulation: str
    first: Cochain
    e: Cochain
    time: float = 0.0

    def __post_init__(self):
        if self.formulation not in FORMULATIONS:
            raise ValueError(f"formulation must be one of {FORMULATIONS}, got {self.formulation!r}")
        if self.e.representation != "mass-weighted":
            raise ValueError("e must be a mass-weighted cochain")
        if self.first.representation != "plain":
            raise ValueError("a and b must be plain cochains")
        want = 1 if self.formulation == "ae" else 2
        if self.first.space.p != want or self.e.space.p != 1:
            raise ValueError(f"{self.formulation} state needs a {want}-form and a 1-form")

    def with_values(self, first: np.ndarray, e: np.ndarray, time: float | None = None) -> "FieldState":
        return FieldState(self.formulation,
                          Cochain(self.first.space, first),
                          Cochain(self.e.space, e, "mass-weighted"),
                          self.time if time is None else time)


def _symmetric_part(q):
    if sp.issparse(q):
        q = sp.csr_matrix(q, dtype=float)
        return sp.csr_matrix(0.5 * (q + q.T))
    if isinstance(q, np.ndarray):
        return 0.5 * (q + q.T)
    if isinstance(q, LinearOperator):
        # a factorized inverse of a symmetric matrix; symmetric up to rounding
        return q
    raise TypeError(f"unsupported operator type {type(q).__name__}")


@dataclass(frozen=True, eq=False)
class SplitScheme:
    """Splitting method and the discrete operators it composes.

    ``Q`` approximates M1^-1 (any sparse matrix, dense array or linear
    operator); ``M2`` is the exact or lumped 2-form mass matrix.
    """

    kind: str
    dt: float
    Q: object
    M2: sp.spmatrix
    C: sp.spmatrix
    units: UnitSystem = field(default_factory=UnitSystem)
    check_cfl: bool = True
    Qs: object = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.kind!r}")
        if not self.dt > 0:
            raise ValueError(f"time step must be positive, got {self.dt}")
        n1 = self.C.shape[1]
        if self.Q.shape != (n1, n1) or self.M2.shape != (self.C.shape[0],) * 2:
            raise ValueError(f"incompatible shapes Q{self.Q.shape} C{self.C.shape} M2{self.M2.shape}")
        object.__setattr__(self, "Qs", _symmetric_part(self.Q))
        if self.check_cfl:
            rho = spectral_radius_estimate(self)
            courant = self.dt * np.sqrt(self.units.c2 * rho)
            if courant > 2.0:
                warnings.warn(f"dt = {self.dt:g} gives dt*omega_max ~ {courant:.3g} > 2; "
                              "the explicit scheme is likely unstable", CFLWarning, stacklevel=3)

    def with_dt(self, dt: float) -> "SplitScheme":
        return replace(self, dt=dt, check_cfl=False)


def spectral_radius_estimate(scheme: SplitScheme, iterations: int = 60, seed: int = 0) -> float:
    """Power-iteration estimate of the largest eigenvalue of Q C^T M2 C."""
    n = scheme.C.shape[1]
    x = np.random.default_rng(seed).standard_normal(n)
    lam = 0.0
    for _ in range(iterations):
        y = scheme.Qs @ (scheme.C.T @ (scheme.M2 @ (scheme.C @ x)))
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 0.0
        lam = norm / np.linalg.norm(x)
        x = y / norm
    return float(lam)


# flows on raw arrays; columns of a 2-D array are independent states

def _he(formulation, first, e, scheme, dt):
    qe = scheme.Qs @ e
    if formulation == "ae":
        return first - dt * qe, e
    return first - dt * (scheme.C @ qe), e


def _ha(formulation, first, e, scheme, dt):
    b = scheme.C @ first if formulation == "ae" else first
    return first, e + dt * scheme.units.c2 * (scheme.C.T @ (scheme.M2 @ b))


def _step(formulation, first, e, scheme):
    dt = scheme.dt
    if scheme.kind == "strang":
        first, e = _he(formulation, first, e, scheme, 0.5 * dt)
        first, e = _ha(formulation, first, e, scheme, dt)
        return _he(formulation, first, e, scheme, 0.5 * dt)
    first, e = _he(formulation, first, e, scheme, dt)
    return _ha(formulation, first, e, scheme, dt)


def flow_He(state: FieldState, scheme: SplitScheme, dt: float) -> FieldState:
    """Exact flow of the electric sub-Hamiltonian for time ``dt``; the clock is not advanced."""
    first, e = _he(state.formulation, state.first.values, state.e.values, scheme, dt)
    return state.with_values(first, e)


def flow_Ha(state: FieldState, scheme: SplitScheme, dt: float) -> FieldState:
    """Exact flow of the magnetic sub-Hamiltonian for time ``dt``; the clock is not advanced."""
    first, e = _ha(state.formulation, state.first.values, state.e.values, scheme, dt)
    return state.with_values(first, e)


def step(state: FieldState, scheme: SplitScheme) -> FieldState:
    """One Strang or Lie-Trotter step; advances the clock by ``scheme.dt``."""
    first, e = _step(state.formulation, state.first.values, state.e.values, scheme)
    return state.with_values(first, e, state.time + scheme.dt)


def energy(state: FieldState, scheme: SplitScheme) -> float:
    u = scheme.units
    e = state.e.values
    b = state.first.values
    if state.formulation == "ae":
        b = scheme.C @ b
    return float(0.5 * (u.eps0 * (e @ (scheme.Qs @ e)) + (b @ (scheme.M2 @ b)) / u.mu0))


def electric_energy_terms(state: FieldState, scheme: SplitScheme) -> tuple[float, float]:
    """(eps0/2) e^T Q e and (eps0/2) e^T sym(Q) e; equal up to rounding for any Q."""
    e = state.e.values
    half = 0.5 * scheme.units.eps0
    return float(half * (e @ (scheme.Q @ e))), float(half * (e @ (scheme.Qs @ e)))


def gauss_residual(state: FieldState, D: sp.spmatrix) -> float:
    """Max-norm of D b for a (b, e) state."""
    if state.formulation != "be":
        raise ValueError("gauss_residual needs a (b, e) state")
    r = D @ state.first.values
    return float(np.abs(r).max()) if len(r) else 0.0


def step_matrix(scheme: SplitScheme) -> np.ndarray:
    """Dense matrix of one (a, e) step acting on the stacked vector [a; e]."""
    n = scheme.C.shape[1]
    eye = np.eye(2 * n)
    first, e = _step("ae", eye[:n], eye[n:], scheme)
    return np.vstack([np.asarray(first), np.asarray(e)])


def symplectic_check(scheme: SplitScheme, max_dofs: int = DEFAULT_SYMPLECTIC_CAP) -> float:
    """Return max |Phi^T J Phi - J| for the (a, e) step matrix Phi.

    J is the canonical Poisson matrix scaled by 1/eps0. The step is built
    densely, so spaces above ``max_dofs`` 1-form DOFs are refused.
    """
    n = scheme.C.shape[1]
    if n > max_dofs:
        raise ValueError(f"dense symplectic check refused for N1 = {n} > {max_dofs}")
    phi = step_matrix(scheme)
    J = np.zeros((2 * n, 2 * n))
    J[:n, n:] = -np.eye(n)
    J[n:, :n] = np.eye(n)
    J /= scheme.units.eps0
    return float(np.abs(phi.T @ J @ phi - J).max())


def evolve(state: FieldState, scheme: SplitScheme, steps: int, diag_every: int = 1,
           D: sp.spmatrix | None = None) -> Iterator[tuple[int, FieldState, float, float]]:
    """Yield ``(step, state, energy, gauss_residual)`` every ``diag_every`` steps.

    Step 0 is always reported. The residual is NaN for (a, e) states or
    when ``D`` is not given.
    """
    if steps < 0 or diag_every < 1:
        raise ValueError("steps must be >= 0 and diag_every >= 1")

    def diag(s):
        g = gauss_residual(s, D) if (D is not None and s.formulation == "be") else float("nan")
        return energy(s, scheme), g

    yield (0, state, *diag(state))
    for k in range(1, steps + 1):
        state = step(state, scheme)
        if k % diag_every == 0 or k == steps:
            yield (k, state, *diag(state))
