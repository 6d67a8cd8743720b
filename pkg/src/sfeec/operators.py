"""Exterior derivative and mass matrices, curl-of-curl, L2 errors.

Sparse operators are ``scipy.sparse.csr_matrix`` instances. Anything that
supports ``Q @ x`` may stand in for an approximate inverse mass matrix,
including the factorized exact inverse from :func:`factorized_inverse`.
"""

from __future__ import annotations

from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, splu

from .basis import (AnalyticForm, Cochain, FormSpace, element_mass_matrices,
                    evaluate_cochain)
from .mesh import boundary_incidence
from .quadrature import quadrature_rule

__all__ = [
    "Cochain",
    "UndefinedRelativeError",
    "derivative_matrix",
    "mass_matrix",
    "factorized_inverse",
    "apply_curl_of_curl",
    "l2_norm",
    "l2_error",
    "write_coo",
    "read_coo",
    "is_symmetric",
]


class UndefinedRelativeError(ZeroDivisionError):
    """Relative error requested against a form of zero norm."""


def _snap_rational(x: np.ndarray, max_den: int = 64, tol: float = 1e-10) -> np.ndarray:
    out = x.copy()
    for idx, v in np.ndenumerate(x):
        f = Fraction(float(v)).limit_denominator(max_den)
        if abs(float(f) - v) < tol:
            out[idx] = float(f)
    return out


def _reference_derivative(space_p: FormSpace, space_p1: FormSpace) -> np.ndarray:
    """Local matrix of d between the reference elements (same for every cell)."""
    pts, w = space_p1.ref.dof_operator()
    dvals = space_p.ref.d_values(pts)
    return _snap_rational(np.einsum("ipc,pjc->ij", w, dvals))


def derivative_matrix(space_p: FormSpace, space_p1: FormSpace) -> sp.csr_matrix:
    """Matrix of d from ``space_p`` to ``space_p1`` (G, C or D).

    Column j holds the coefficients of d(basis_j) in the basis of
    ``space_p1``. For Whitney-type families this is the signed incidence
    matrix rescaled by the DOF normalizations.
    """
    if space_p.mesh is not space_p1.mesh or space_p.family != space_p1.family:
        raise ValueError("derivative needs two spaces of one family on one mesh")
    if space_p1.p != space_p.p + 1:
        raise ValueError(f"cannot map {space_p.p}-forms to {space_p1.p}-forms with d")
    mesh = space_p.mesh
    if space_p.family in ("Q1-", "P1-"):
        inc = boundary_incidence(mesh, space_p1.p).matrix.astype(float)
        d = sp.diags(1.0 / space_p1.dof_scale) @ inc @ sp.diags(space_p.dof_scale)
        return sp.csr_matrix(d)

    local = _reference_derivative(space_p, space_p1)
    rows = np.repeat(space_p1.cell_dofs[:, :, None], local.shape[1], axis=2)
    cols = np.repeat(space_p.cell_dofs[:, None, :], local.shape[0], axis=1)
    vals = np.broadcast_to(local, rows.shape)
    keep = vals != 0
    rows, cols, vals = rows[keep], cols[keep], vals[keep]
    # entries owned by shared entities are produced once per adjacent cell
    key = rows * space_p.n_dofs + cols
    _, first = np.unique(key, return_index=True)
    return sp.csr_matrix((vals[first], (rows[first], cols[first])),
                         shape=(space_p1.n_dofs, space_p.n_dofs))


def mass_matrix(space: FormSpace) -> sp.csr_matrix:
    """Gram matrix of the basis under the Euclidean L2 inner product of p-forms."""
    local = element_mass_matrices(space.ref, space.jacobian)
    n_loc = space.ref.n_local
    rows = np.repeat(space.cell_dofs, n_loc, axis=1).ravel()
    cols = np.tile(space.cell_dofs, (1, n_loc)).ravel()
    m = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(space.n_dofs,) * 2).tocsr()
    m.sum_duplicates()
    s = sp.diags(space.dof_scale)
    m = sp.csr_matrix(s @ m @ s)
    m = sp.csr_matrix(0.5 * (m + m.T))
    m.eliminate_zeros()
    m.sort_indices()
    return m


def factorized_inverse(m: sp.spmatrix) -> LinearOperator:
    """Exact M^-1 applied through a sparse LU factorization."""
    lu = splu(sp.csc_matrix(m))
    n = m.shape[0]

    def solve(x):
        x = np.asarray(x, dtype=float)
        return lu.solve(x) if x.ndim == 1 else lu.solve(np.ascontiguousarray(x))

    return LinearOperator((n, n), matvec=solve, matmat=solve, rmatvec=solve, dtype=float)


def apply_curl_of_curl(Q, C: sp.spmatrix, M2: sp.spmatrix, a):
    """Return ``Q @ C.T @ M2 @ C @ a``, evaluated right to left.

    ``a`` may be a plain 1-form :class:`Cochain` (a cochain is returned) or an
    array.
    """
    values = a.values if isinstance(a, Cochain) else np.asarray(a, dtype=float)
    if C.shape[1] != len(values) or M2.shape != (C.shape[0],) * 2 or Q.shape[1] != C.shape[1]:
        raise ValueError(f"incompatible shapes Q{Q.shape} C{C.shape} M2{M2.shape} a{values.shape}")
    out = Q @ (C.T @ (M2 @ (C @ values)))
    out = np.asarray(out).ravel()
    if isinstance(a, Cochain):
        return Cochain(a.space, out)
    return out


def _error_rule(space: FormSpace, order: int):
    if space.mesh.cell_kind == "cube":
        return quadrature_rule("cube", min(order, 9))
    return quadrature_rule("triangle", order)


def l2_norm(space: FormSpace, form: AnalyticForm, order: int = 6) -> float:
    rule = _error_rule(space, order)
    x = space.to_physical(rule.points)
    vol = np.abs(np.linalg.det(space.jacobian))
    sq = np.einsum("p,cpk->c", rule.weights, form(x) ** 2)
    return float(np.sqrt(vol @ sq))


def l2_error(space: FormSpace, c, exact: AnalyticForm, order: int = 6) -> tuple[float, float]:
    """Absolute and relative L2 error between a plain cochain and a smooth form.

    Norms are square roots of the integrated pointwise inner product.
    """
    values = c.values if isinstance(c, Cochain) else np.asarray(c, dtype=float)
    if isinstance(c, Cochain) and c.representation != "plain":
        raise ValueError("l2_error needs a plain-representation cochain")
    rule = _error_rule(space, order)
    x = space.to_physical(rule.points)
    ex = exact(x)
    diff = evaluate_cochain(space, values, rule.points) - ex
    vol = np.abs(np.linalg.det(space.jacobian))
    err = float(np.sqrt(vol @ np.einsum("p,cpk->c", rule.weights, diff ** 2)))
    ref = float(np.sqrt(vol @ np.einsum("p,cpk->c", rule.weights, ex ** 2)))
    if ref == 0.0:
        raise UndefinedRelativeError("exact form has zero L2 norm; relative error undefined")
    return err, err / ref


def is_symmetric(m: sp.spmatrix, tol: float = 0.0) -> bool:
    d = (m - m.T).tocoo()
    return bool(d.nnz == 0 or np.abs(d.data).max() <= tol)


def write_coo(m: sp.spmatrix, path) -> None:
    """Write ``row col value`` lines sorted by (row, col), after a shape header."""
    c = sp.coo_matrix(m)
    order = np.lexsort((c.col, c.row))
    lines = [f"# shape {c.shape[0]} {c.shape[1]}"]
    lines += [f"{r} {k} {v!r}" for r, k, v in
              zip(c.row[order].tolist(), c.col[order].tolist(), c.data[order].tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def read_coo(path) -> sp.csr_matrix:
    rows, cols, vals, shape = [], [], [], None
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if parts[:1] == ["shape"]:
                shape = (int(parts[1]), int(parts[2]))
            continue
        r, k, v = line.split()
        rows.append(int(r))
        cols.append(int(k))
        vals.append(float(v))
    if shape is None:
        shape = (max(rows, default=-1) + 1, max(cols, default=-1) + 1)
    return sp.csr_matrix((vals, (rows, cols)), shape=shape)
