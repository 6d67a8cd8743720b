"""Finite element p-form spaces on periodic meshes.

Families:

* ``Q1-``: generalized Whitney forms on cubes, face-averaged degrees of freedom.
* ``P1-``: Whitney forms on triangles, integral degrees of freedom.
* ``P2-``: second-order trimmed family on triangles (quadratic Lagrange,
  first-kind Nedelec of degree 2, discontinuous linear 2-forms).

Each family is defined on a reference cell by a polynomial spanning set and
a list of degree-of-freedom functionals; the local basis is the dual of the
functionals. Physical forms are pushforwards of reference forms under the
affine cell map, and every functional is pullback invariant, so the
reference basis serves every cell once local and global orientations agree
(they do: both follow ascending vertex id / positive axis direction).

Form components are stored in a fixed order: 1-forms (dx, dy[, dz]); 2-forms
in 3-D as (dy^dz, dz^dx, dx^dy), in 2-D as (dx^dy); top forms as one value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from typing import Callable, Sequence

import numpy as np

from .mesh import PeriodicMesh, TRIANGLE_EDGES
from .quadrature import quadrature_rule

__all__ = [
    "AnalyticForm",
    "Cochain",
    "FormSpace",
    "ReferenceElement",
    "build_space",
    "evaluate_basis",
    "evaluate_global_basis",
    "evaluate_cochain",
    "canonical_projection",
    "reference_element",
    "local_mass_matrix",
    "FAMILIES",
]

FAMILIES = ("Q1-", "P1-", "P2-")
DEFAULT_PROJECTION_ORDER = 6


def n_components(dim: int, p: int) -> int:
    return math.comb(dim, p)


# ---------------------------------------------------------------------------
# polynomials: {exponent tuple: coefficient}


Poly = dict


def _peval(poly: Poly, x: np.ndarray) -> np.ndarray:
    out = np.zeros(len(x))
    for expo, c in poly.items():
        term = np.full(len(x), float(c))
        for i, e in enumerate(expo):
            if e:
                term = term * x[:, i] ** e
        out += term
    return out


def _pdiff(poly: Poly, var: int) -> Poly:
    out = {}
    for expo, c in poly.items():
        if expo[var]:
            e = list(expo)
            e[var] -= 1
            out[tuple(e)] = out.get(tuple(e), 0) + c * expo[var]
    return out


def _padd(*terms: tuple[float, Poly]) -> Poly:
    out: Poly = {}
    for s, poly in terms:
        for expo, c in poly.items():
            out[expo] = out.get(expo, 0) + s * c
    return {e: c for e, c in out.items() if c != 0}


def _mono(*expo) -> Poly:
    return {tuple(expo): 1}


def _pmul(a: Poly, b: Poly) -> Poly:
    out: Poly = {}
    for ea, ca in a.items():
        for eb, cb in b.items():
            e = tuple(x + y for x, y in zip(ea, eb))
            out[e] = out.get(e, 0) + ca * cb
    return out


def _exterior_derivative(form: list[Poly], dim: int, p: int) -> list[Poly]:
    """d of a polynomial p-form given by its components."""
    if dim == 2:
        if p == 0:
            return [_pdiff(form[0], 0), _pdiff(form[0], 1)]
        if p == 1:
            return [_padd((1, _pdiff(form[1], 0)), (-1, _pdiff(form[0], 1)))]
    else:
        if p == 0:
            return [_pdiff(form[0], a) for a in range(3)]
        if p == 1:
            u = form
            return [
                _padd((1, _pdiff(u[2], 1)), (-1, _pdiff(u[1], 2))),
                _padd((1, _pdiff(u[0], 2)), (-1, _pdiff(u[2], 0))),
                _padd((1, _pdiff(u[1], 0)), (-1, _pdiff(u[0], 1))),
            ]
        if p == 2:
            return [_padd(*((1, _pdiff(form[a], a)) for a in range(3)))]
    raise ValueError(f"no exterior derivative of a {p}-form in {dim}-D")


# ---------------------------------------------------------------------------
# reference elements


@dataclass(frozen=True, eq=False)
class ReferenceElement:
    """Local finite element on a reference cell.

    ``entities[i] = (entity_dim, local_entity, k)`` says local DOF ``i`` is the
    k-th functional owned by local sub-entity ``local_entity`` of dimension
    ``entity_dim``. ``coeffs`` expresses the dual basis in the spanning set.
    """

    family: str
    cell: str
    dim: int
    p: int
    span: list[list[Poly]]
    entities: list[tuple[int, int, int]]
    _dofs: Callable[[int], tuple[np.ndarray, np.ndarray]] = field(repr=False)
    coeffs: np.ndarray = field(default=None, repr=False)

    @property
    def n_local(self) -> int:
        return len(self.entities)

    @property
    def n_comp(self) -> int:
        return n_components(self.dim, self.p)

    def dof_operator(self, order: int = DEFAULT_PROJECTION_ORDER) -> tuple[np.ndarray, np.ndarray]:
        """Points ``(npts, dim)`` and weights ``(n_local, npts, n_comp)``.

        DOF i of a reference form with values ``u`` at the points is
        ``sum(weights[i] * u)``.
        """
        return self._dofs(order)

    def _span_values(self, forms, x: np.ndarray) -> np.ndarray:
        out = np.empty((len(x), len(forms), len(forms[0])))
        for s, comps in enumerate(forms):
            for c, poly in enumerate(comps):
                out[:, s, c] = _peval(poly, x)
        return out

    def values(self, x: np.ndarray) -> np.ndarray:
        """Basis values ``(npts, n_local, n_comp)`` at reference points."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.einsum("is,psc->pic", self.coeffs, self._span_values(self.span, x))

    def d_values(self, x: np.ndarray) -> np.ndarray:
        """Values of d(basis) ``(npts, n_local, n_comp(p+1))``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        dspan = [_exterior_derivative(f, self.dim, self.p) for f in self.span]
        return np.einsum("is,psc->pic", self.coeffs, self._span_values(dspan, x))

    def apply_dofs(self, values: np.ndarray, order: int = DEFAULT_PROJECTION_ORDER) -> np.ndarray:
        _, w = self.dof_operator(order)
        return np.einsum("ipc,...pc->...i", w, values)


def _finish(ref: ReferenceElement) -> ReferenceElement:
    pts, w = ref.dof_operator(DEFAULT_PROJECTION_ORDER)
    span_vals = ref._span_values(ref.span, pts)
    dof_matrix = np.einsum("ipc,psc->is", w, span_vals)
    if dof_matrix.shape[0] != dof_matrix.shape[1]:
        raise AssertionError(f"{ref.family} p={ref.p}: {dof_matrix.shape} DOF matrix")
    object.__setattr__(ref, "coeffs", np.linalg.inv(dof_matrix).T)
    return ref


class _DofBuilder:
    """Accumulates functionals as (points, component weights) blocks."""

    def __init__(self, n_comp: int):
        self.n_comp = n_comp
        self.blocks: list[tuple[np.ndarray, np.ndarray]] = []

    def add(self, points: np.ndarray, weights: np.ndarray) -> None:
        self.blocks.append((np.atleast_2d(points), np.asarray(weights).reshape(len(points), self.n_comp)))

    def build(self):
        pts = np.concatenate([b[0] for b in self.blocks])
        w = np.zeros((len(self.blocks), len(pts), self.n_comp))
        start = 0
        for i, (p, wi) in enumerate(self.blocks):
            w[i, start:start + len(p)] = wi
            start += len(p)
        return pts, w


TRI_VERTS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def _triangle_dofs(family: str, p: int, order: int):
    edge = quadrature_rule("interval", order + 1)
    tri = quadrature_rule("triangle", order + 1)
    s, ws = edge.points[:, 0], edge.weights
    b = _DofBuilder(n_components(2, p))
    lam = [1.0 - tri.points[:, 0] - tri.points[:, 1], tri.points[:, 0], tri.points[:, 1]]
    if p == 0:
        for v in TRI_VERTS:
            b.add(v[None, :], [1.0])
        if family == "P2-":
            for i, j in TRIANGLE_EDGES:
                pts = TRI_VERTS[i] + s[:, None] * (TRI_VERTS[j] - TRI_VERTS[i])
                b.add(pts, ws)
    elif p == 1:
        tests = [np.ones_like(s)] if family == "P1-" else [np.ones_like(s), 2.0 * s - 1.0]
        for i, j in TRIANGLE_EDGES:
            t = TRI_VERTS[j] - TRI_VERTS[i]
            pts = TRI_VERTS[i] + s[:, None] * t
            for q in tests:
                b.add(pts, (ws * q)[:, None] * t[None, :])
        if family == "P2-":
            # u ^ d(lambda_1) and u ^ d(lambda_2)
            b.add(tri.points, tri.weights[:, None] * np.array([0.0, -1.0]))
            b.add(tri.points, tri.weights[:, None] * np.array([1.0, 0.0]))
    else:
        if family == "P1-":
            b.add(tri.points, tri.weights)
        else:
            for li in lam:
                b.add(tri.points, tri.weights * li)
    return b.build()


def _triangle_element(family: str, p: int) -> ReferenceElement:
    one, x, y = _mono(0, 0), _mono(1, 0), _mono(0, 1)
    zero: Poly = {}
    if family == "P1-":
        span = {0: [[one], [x], [y]],
                1: [[one, zero], [zero, one], [_padd((-1, y)), x]],
                2: [[one]]}[p]
        ents = {0: [(0, v, 0) for v in range(3)],
                1: [(1, e, 0) for e in range(3)],
                2: [(2, 0, 0)]}[p]
    else:
        if p == 0:
            span = [[m] for m in (one, x, y, _mono(2, 0), _mono(1, 1), _mono(0, 2))]
            ents = [(0, v, 0) for v in range(3)] + [(1, e, 0) for e in range(3)]
        elif p == 1:
            lin = (one, x, y)
            span = [[m, zero] for m in lin] + [[zero, m] for m in lin]
            for m in (x, y):  # Koszul terms m * (-y, x)
                span.append([_pmul(m, _padd((-1, y))), _pmul(m, x)])
            ents = [(1, e, k) for e in range(3) for k in range(2)] + [(2, 0, 0), (2, 0, 1)]
        else:
            span = [[one], [x], [y]]
            ents = [(2, 0, k) for k in range(3)]
    return _finish(ReferenceElement(family, "triangle", 2, p, span, ents,
                                    lambda order: _triangle_dofs(family, p, order)))


def _cube_dofs(p: int, order: int):
    line = quadrature_rule("interval", order + 1)
    sq = quadrature_rule("square", min(order + 1, 9))
    cube = quadrature_rule("cube", min(order + 1, 9))
    b = _DofBuilder(n_components(3, p))
    if p == 0:
        for o in product((0.0, 1.0), repeat=3):
            b.add(np.array([o]), [1.0])
    elif p == 1:
        for a in range(3):
            free = [c for c in range(3) if c != a]
            for bits in product((0.0, 1.0), repeat=2):
                pts = np.zeros((len(line.points), 3))
                pts[:, a] = line.points[:, 0]
                pts[:, free] = bits
                w = np.zeros((len(pts), 3))
                w[:, a] = line.weights
                b.add(pts, w)
    elif p == 2:
        for a in range(3):
            bb, cc = (a + 1) % 3, (a + 2) % 3
            for bit in (0.0, 1.0):
                pts = np.zeros((len(sq.points), 3))
                pts[:, a] = bit
                pts[:, bb] = sq.points[:, 0]
                pts[:, cc] = sq.points[:, 1]
                w = np.zeros((len(pts), 3))
                w[:, a] = sq.weights
                b.add(pts, w)
    else:
        b.add(cube.points, cube.weights)
    return b.build()


def _cube_element(p: int) -> ReferenceElement:
    def hat(axis, bit):
        e = [0, 0, 0]
        e[axis] = 1
        return _mono(*e) if bit else _padd((1, _mono(0, 0, 0)), (-1, _mono(*e)))

    zero: Poly = {}
    span, ents = [], []
    if p == 0:
        for n, o in enumerate(product((0, 1), repeat=3)):
            span.append([_pmul(_pmul(hat(0, o[0]), hat(1, o[1])), hat(2, o[2]))])
            ents.append((0, n, 0))
    elif p == 1:
        for a in range(3):
            free = [c for c in range(3) if c != a]
            for bits in product((0, 1), repeat=2):
                comps = [zero, zero, zero]
                comps[a] = _pmul(hat(free[0], bits[0]), hat(free[1], bits[1]))
                span.append(comps)
                ents.append((1, len(ents), 0))
    elif p == 2:
        for a in range(3):
            for bit in (0, 1):
                comps = [zero, zero, zero]
                comps[a] = hat(a, bit)
                span.append(comps)
                ents.append((2, len(ents), 0))
    else:
        span = [[_mono(0, 0, 0)]]
        ents = [(3, 0, 0)]
    return _finish(ReferenceElement("Q1-", "cube", 3, p, span, ents,
                                    lambda order: _cube_dofs(p, order)))


@lru_cache(maxsize=None)
def reference_element(family: str, p: int) -> ReferenceElement:
    if family == "Q1-":
        if not 0 <= p <= 3:
            raise ValueError(f"Q1- p-forms need 0 <= p <= 3, got {p}")
        return _cube_element(p)
    if family in ("P1-", "P2-"):
        if not 0 <= p <= 2:
            raise ValueError(f"{family} p-forms on triangles need 0 <= p <= 2, got {p}")
        return _triangle_element(family, p)
    raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")


# ---------------------------------------------------------------------------
# affine maps


def _pushforward(jac: np.ndarray, p: int) -> np.ndarray:
    """Matrices taking reference components to physical ones, per cell."""
    n, dim, _ = jac.shape
    det = np.linalg.det(jac)
    if p == 0:
        return np.ones((n, 1, 1))
    if p == dim:
        return (1.0 / det)[:, None, None]
    if p == 1:
        return np.linalg.inv(jac).transpose(0, 2, 1)
    # 2-forms in 3-D transform like J B / det J
    return jac / det[:, None, None]


def _pullback(jac: np.ndarray, p: int) -> np.ndarray:
    n, dim, _ = jac.shape
    det = np.linalg.det(jac)
    if p == 0:
        return np.ones((n, 1, 1))
    if p == dim:
        return det[:, None, None]
    if p == 1:
        return jac.transpose(0, 2, 1)
    return np.linalg.inv(jac) * det[:, None, None]


# ---------------------------------------------------------------------------
# spaces


@dataclass(frozen=True, eq=False)
class FormSpace:
    """Global finite element space of p-forms.

    ``dof_entity[g] = (entity_dim, entity_id, k)``; ``cell_dofs[c, i]`` is the
    global DOF of local basis function i in cell c; the physical basis
    function is ``dof_scale[g]`` times the pushforward of the reference one.
    """

    mesh: PeriodicMesh
    p: int
    family: str
    n_dofs: int
    dof_entity: np.ndarray
    cell_dofs: np.ndarray
    dof_scale: np.ndarray
    normalization: str
    ref: ReferenceElement = field(repr=False)
    origin: np.ndarray = field(repr=False)
    jacobian: np.ndarray = field(repr=False)

    @property
    def N(self) -> int:
        return self.n_dofs

    @property
    def n_comp(self) -> int:
        return self.ref.n_comp

    def to_physical(self, ref_points: np.ndarray) -> np.ndarray:
        """Physical coordinates ``(n_cells, npts, dim)`` of reference points."""
        return self.origin[:, None, :] + np.einsum("cij,pj->cpi", self.jacobian, ref_points)

    def pushforward(self) -> np.ndarray:
        return _pushforward(self.jacobian, self.p)

    def pullback(self) -> np.ndarray:
        return _pullback(self.jacobian, self.p)


def _cell_geometry(mesh: PeriodicMesh) -> tuple[np.ndarray, np.ndarray]:
    x = mesh.cell_coordinates()
    origin = x[:, 0]
    if mesh.cell_kind == "cube":
        jac = np.broadcast_to(np.diag(mesh.lattice_spacings), (mesh.n_cells, 3, 3)).copy()
    else:
        jac = np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]], axis=2)
    return origin, jac


def build_space(mesh: PeriodicMesh, family: str, p: int) -> FormSpace:
    """Assemble the global DOF table of the ``family`` p-form space on ``mesh``."""
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")
    if (family == "Q1-") != (mesh.cell_kind == "cube"):
        raise ValueError(f"family {family} does not match a {mesh.cell_kind} mesh")
    if not 0 <= p <= mesh.dimension:
        raise ValueError(f"form degree {p} out of range for a {mesh.dimension}-D mesh")
    ref = reference_element(family, p)

    per_entity: dict[int, int] = {}
    for d, _, k in ref.entities:
        per_entity[d] = max(per_entity.get(d, 0), k + 1)
    offset, start = {}, 0
    for d in sorted(per_entity):
        offset[d] = start
        start += per_entity[d] * mesh.n_faces(d)
    n_dofs = start

    cell_dofs = np.empty((mesh.n_cells, ref.n_local), dtype=np.int64)
    for i, (d, le, k) in enumerate(ref.entities):
        ent = mesh.cell_entities[d][:, le]
        cell_dofs[:, i] = offset[d] + ent * per_entity[d] + k

    dof_entity = np.empty((n_dofs, 3), dtype=np.int64)
    for d in sorted(per_entity):
        nd = per_entity[d]
        ids = np.arange(mesh.n_faces(d))
        block = slice(offset[d], offset[d] + nd * len(ids))
        dof_entity[block, 0] = d
        dof_entity[block, 1] = np.repeat(ids, nd)
        dof_entity[block, 2] = np.tile(np.arange(nd), len(ids))

    if family == "Q1-":
        normalization = "face-averaged"
        dof_scale = mesh.face_measures(p)
    else:
        normalization = "integral"
        dof_scale = np.ones(n_dofs)

    origin, jac = _cell_geometry(mesh)
    return FormSpace(mesh, p, family, n_dofs, dof_entity, cell_dofs, dof_scale,
                     normalization, ref, origin, jac)


def evaluate_basis(space: FormSpace, cell_id: int, ref_point: Sequence[float]) -> np.ndarray:
    """Physical components of the local basis of one cell, ``(n_local, n_comp)``.

    Row i belongs to global DOF ``space.cell_dofs[cell_id, i]``.
    """
    if not 0 <= cell_id < space.mesh.n_cells:
        raise IndexError(f"cell {cell_id} out of range")
    ref_vals = space.ref.values(np.asarray(ref_point, dtype=float)[None, :])[0]
    push = space.pushforward()[cell_id]
    scale = space.dof_scale[space.cell_dofs[cell_id]]
    return scale[:, None] * (ref_vals @ push.T)


def evaluate_global_basis(space: FormSpace, cell_id: int, ref_point) -> np.ndarray:
    """Every global basis function at one point, ``(N_p, n_comp)``."""
    out = np.zeros((space.n_dofs, space.n_comp))
    np.add.at(out, space.cell_dofs[cell_id], evaluate_basis(space, cell_id, ref_point))
    return out


def evaluate_cochain(space: FormSpace, values: np.ndarray, ref_points: np.ndarray) -> np.ndarray:
    """Physical components ``(n_cells, npts, n_comp)`` of the form with coefficients ``values``."""
    local = values[space.cell_dofs] * space.dof_scale[space.cell_dofs]
    ref_vals = space.ref.values(ref_points)
    return np.einsum("ci,pir,cjr->cpj", local, ref_vals, space.pushforward())


def local_mass_matrix(family: str, p: int, coords: np.ndarray) -> np.ndarray:
    """Element mass matrix of one triangle with vertex ``coords`` (3 x 2)."""
    coords = np.asarray(coords, dtype=float)
    ref = reference_element(family, p)
    jac = np.stack([coords[1] - coords[0], coords[2] - coords[0]], axis=1)[None]
    return element_mass_matrices(ref, jac)[0]


def element_mass_matrices(ref: ReferenceElement, jac: np.ndarray) -> np.ndarray:
    """Local mass matrices ``(n_cells, n_local, n_local)`` for Euclidean metric."""
    cell = "triangle" if ref.cell == "triangle" else "cube"
    rule = quadrature_rule(cell, 6 if cell == "triangle" else 5)
    vals = ref.values(rule.points)
    K = np.einsum("q,qia,qjb->abij", rule.weights, vals, vals)
    push = _pushforward(jac, ref.p)
    G = np.einsum("cka,ckb->cab", push, push)
    vol = np.abs(np.linalg.det(jac))
    return np.einsum("c,cab,abij->cij", vol, G, K)


# ---------------------------------------------------------------------------
# analytic forms and projection


@dataclass(frozen=True)
class AnalyticForm:
    """A smooth p-form given by component functions of physical coordinates.

    Each component maps an array of points ``(..., dim)`` to values ``(...)``.
    """

    p: int
    dim: int
    components: tuple[Callable[[np.ndarray], np.ndarray], ...]
    smoothness: str = "analytic"

    def __post_init__(self):
        if len(self.components) != n_components(self.dim, self.p):
            raise ValueError(f"a {self.p}-form in {self.dim}-D has "
                             f"{n_components(self.dim, self.p)} components, got {len(self.components)}")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.stack([np.broadcast_to(f(x), x.shape[:-1]) for f in self.components], axis=-1)


@dataclass
class Cochain:
    """Coefficient vector of a discrete form.

    ``representation`` is ``"plain"`` for a, b (form = values . basis) and
    ``"mass-weighted"`` for e (form = values . M^-1 . basis).
    """

    space: FormSpace
    values: np.ndarray
    representation: str = "plain"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.space.n_dofs,):
            raise ValueError(f"cochain of length {self.values.shape} for a space of "
                             f"{self.space.n_dofs} DOFs")
        if self.representation not in ("plain", "mass-weighted"):
            raise ValueError(f"unknown representation {self.representation!r}")


def canonical_projection(space: FormSpace, form: AnalyticForm,
                         order: int = DEFAULT_PROJECTION_ORDER) -> Cochain:
    """Apply the space's DOF functionals to ``form``."""
    if form.p != space.p or form.dim != space.mesh.dimension:
        raise ValueError(f"cannot project a {form.p}-form in {form.dim}-D onto "
                         f"{space.family} {space.p}-forms in {space.mesh.dimension}-D")
    pts, w = space.ref.dof_operator(order)
    x = space.to_physical(pts)
    ref_vals = np.einsum("crk,cpk->cpr", space.pullback(), form(x))
    local = np.einsum("ipr,cpr->ci", w, ref_vals)
    values = np.zeros(space.n_dofs)
    values[space.cell_dofs] = local / space.dof_scale[space.cell_dofs]
    return Cochain(space, values)
