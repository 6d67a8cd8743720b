"""Sparse approximate inverses by column-wise Frobenius least squares.

For each column l the entries of q_l allowed by the pattern solve

    min || M[:, I_l] q_l(I_l) - e_l ||_2

through the normal equations on the |I_l| x |I_l| Gram matrix. Only the
rows of M[:, I_l] that hold nonzeros take part, so every column problem is a
small dense one.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse.linalg import cg

__all__ = [
    "SparsityPattern",
    "SpaiReport",
    "PATTERN_KINDS",
    "make_pattern",
    "spai_approximate_inverse",
    "stencil_stats",
]

PATTERN_KINDS = ("diagonal", "S(M1)", "S(M1^2)", "dense", "custom")
_ALIASES = {"m1": "S(M1)", "m1sq": "S(M1^2)", "S(M1)": "S(M1)", "S(M1^2)": "S(M1^2)",
            "diagonal": "diagonal", "dense": "dense"}
CHUNK = 512
GRAM_EIG_CUTOFF = 1e-12


@dataclass(frozen=True, eq=False)
class SparsityPattern:
    """Allowed rows of every column, stored compressed by column."""

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    kind: str

    def column(self, col: int) -> np.ndarray:
        return self.indices[self.indptr[col]:self.indptr[col + 1]]

    def sizes(self) -> np.ndarray:
        return np.diff(self.indptr)

    def contains(self, other: "SparsityPattern") -> bool:
        mine = sp.csc_matrix((np.ones(len(self.indices)), self.indices, self.indptr), shape=(self.n,) * 2)
        theirs = sp.csc_matrix((np.ones(len(other.indices)), other.indices, other.indptr),
                               shape=(other.n,) * 2)
        return (theirs - theirs.multiply(mine)).nnz == 0

    @classmethod
    def from_matrix(cls, a: sp.spmatrix, kind: str = "custom") -> "SparsityPattern":
        c = sp.csc_matrix(a, dtype=bool)
        c.sum_duplicates()
        c.eliminate_zeros()
        c.sort_indices()
        return cls(c.shape[0], c.indptr.copy(), c.indices.copy(), kind)


@dataclass
class SpaiReport:
    frobenius_residual: float
    avg_nnz_per_row: float
    max_column_residual: float
    wall_time: float
    fallback_columns: list[int] = field(default_factory=list)
    asymmetry: float = 0.0

    def to_dict(self) -> dict:
        return {
            "frobenius_residual": self.frobenius_residual,
            "avg_nnz_per_row": self.avg_nnz_per_row,
            "max_column_residual": self.max_column_residual,
            "wall_time": self.wall_time,
            "fallback_columns": list(self.fallback_columns),
            "asymmetry": self.asymmetry,
        }


def make_pattern(M: sp.spmatrix, kind: str) -> SparsityPattern:
    """Sparsity pattern of the given kind for approximating ``M^-1``.

    ``kind`` is one of diagonal, S(M1) (alias m1), S(M1^2) (alias m1sq) or
    dense. The M-based patterns always include the diagonal.
    """
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"pattern needs a square matrix, got {M.shape}")
    if kind not in _ALIASES:
        raise ValueError(f"unknown pattern kind {kind!r}")
    kind = _ALIASES[kind]
    n = M.shape[0]
    eye = sp.identity(n, dtype=bool, format="csc")
    if kind == "diagonal":
        return SparsityPattern(n, np.arange(n + 1), np.arange(n), kind)
    if kind == "dense":
        return SparsityPattern(n, np.arange(n + 1) * n, np.tile(np.arange(n), n), kind)
    s = sp.csc_matrix(M, dtype=bool)
    s.eliminate_zeros()
    if kind == "S(M1^2)":
        s = s @ s
    pat = SparsityPattern.from_matrix(s + eye, kind)
    return pat


def _solve_gram(a: np.ndarray, rhs: np.ndarray, method: str) -> tuple[np.ndarray, bool]:
    gram = a.T @ a
    if method == "cg":
        cols = rhs.reshape(len(rhs), -1)
        out, ok = np.empty_like(cols), True
        for j in range(cols.shape[1]):
            out[:, j], info = cg(gram, cols[:, j], rtol=1e-14, atol=0.0, maxiter=10 * len(rhs))
            ok = ok and info == 0
        if ok:
            return out.reshape(rhs.shape), False
    else:
        try:
            c = la.cho_factor(gram, check_finite=False)
            # rounding can let a singular Gram matrix through with a tiny pivot
            if np.min(np.abs(np.diag(c[0]))) ** 2 > GRAM_EIG_CUTOFF * np.trace(gram):
                q = la.cho_solve(c, rhs, check_finite=False)
                if np.all(np.isfinite(q)):
                    return q, False
        except la.LinAlgError:
            pass
    # pattern columns linearly dependent: minimum-norm pseudo-solve
    w, v = np.linalg.eigh(gram)
    keep = w > GRAM_EIG_CUTOFF * max(np.trace(gram), np.finfo(float).tiny)
    q = v[:, keep] @ ((v[:, keep].T @ rhs) / w[keep])
    return q, True


def _dense_columns(Mc: sp.csc_matrix, cols: range, method: str):
    # every column shares the full index set, hence one Gram matrix
    a = Mc.toarray()
    n = a.shape[0]
    rhs = a[np.asarray(cols)].T
    q, fell_back = _solve_gram(a, rhs, method)
    r = a @ q
    r[np.asarray(cols), np.arange(len(cols))] -= 1.0
    rows = [np.arange(n)] * len(cols)
    return rows, list(q.T), (r * r).sum(axis=0).tolist(), list(cols) if fell_back else []


def _columns(Mc: sp.csc_matrix, pattern: SparsityPattern, cols: range, method: str):
    indptr, indices, data = Mc.indptr, Mc.indices, Mc.data
    out_rows, out_vals, res, fallback = [], [], [], []
    for col in cols:
        allowed = pattern.column(col)
        starts, stops = indptr[allowed], indptr[allowed + 1]
        lens = stops - starts
        take = np.concatenate([np.arange(s, e) for s, e in zip(starts, stops)]) if len(allowed) else np.empty(0, int)
        rows_all = indices[take]
        rows = np.unique(rows_all)
        a = np.zeros((len(rows), len(allowed)))
        a[np.searchsorted(rows, rows_all), np.repeat(np.arange(len(allowed)), lens)] = data[take]
        pos = np.searchsorted(rows, col)
        rhs_row = pos < len(rows) and rows[pos] == col
        if not rhs_row:
            # e_l is orthogonal to the range of M[:, I_l]; the minimizer is zero
            out_rows.append(allowed)
            out_vals.append(np.zeros(len(allowed)))
            res.append(1.0)
            continue
        q, fell_back = _solve_gram(a, a[pos].copy(), method)
        if fell_back:
            fallback.append(col)
        r = a @ q
        r[pos] -= 1.0
        out_rows.append(allowed)
        out_vals.append(q)
        res.append(float(r @ r))
    return out_rows, out_vals, res, fallback


def spai_approximate_inverse(M: sp.spmatrix, pattern: SparsityPattern, method: str = "normal",
                             n_jobs: int = 1) -> tuple[sp.csc_matrix, SpaiReport]:
    """Frobenius-optimal ``Q ~ M^-1`` restricted to ``pattern``.

    Columns are independent; with ``n_jobs > 1`` fixed blocks of columns run
    on a thread pool and are reassembled in column order, so the result does
    not depend on the thread count.
    """
    if method not in ("normal", "cg"):
        raise ValueError(f"unknown SPAI method {method!r}")
    n = M.shape[0]
    if M.shape != (n, n) or pattern.n != n:
        raise ValueError(f"pattern of size {pattern.n} for a matrix of shape {M.shape}")
    if np.any(pattern.sizes() == 0):
        raise ValueError("every pattern column must allow at least one entry")
    t0 = time.perf_counter()
    Mc = sp.csc_matrix(M, dtype=float)
    Mc.sort_indices()
    blocks = [range(s, min(s + CHUNK, n)) for s in range(0, n, CHUNK)]
    if pattern.kind == "dense" and pattern.sizes().min() == n:
        results = [_dense_columns(Mc, range(n), method)]
    elif n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            results = list(pool.map(lambda b: _columns(Mc, pattern, b, method), blocks))
    else:
        results = [_columns(Mc, pattern, b, method) for b in blocks]

    rows = [r for res in results for r in res[0]]
    vals = [v for res in results for v in res[1]]
    col_res = np.array([x for res in results for x in res[2]])
    fallback = [c for res in results for c in res[3]]
    lengths = np.array([len(r) for r in rows])
    indptr = np.concatenate([[0], np.cumsum(lengths)])
    Q = sp.csc_matrix((np.concatenate(vals), np.concatenate(rows), indptr), shape=(n, n))
    Q.eliminate_zeros()
    Q.sort_indices()

    resid = (Mc @ Q - sp.identity(n, format="csc")).tocsc()
    frob = float(np.sqrt((resid.data ** 2).sum()))
    asym = (Q - Q.T).tocoo()
    report = SpaiReport(
        frobenius_residual=frob,
        avg_nnz_per_row=Q.nnz / n,
        max_column_residual=float(np.sqrt(col_res.max())) if n else 0.0,
        wall_time=time.perf_counter() - t0,
        fallback_columns=fallback,
        asymmetry=float(np.sqrt((asym.data ** 2).sum())),
    )
    return Q, report


def stencil_stats(pattern: SparsityPattern) -> tuple[float, int, float]:
    """Average and maximum entries per column, and the average relative to diagonal.

    The pattern is a per-column map, so averages per column and per row coincide.
    """
    sizes = pattern.sizes()
    avg = float(sizes.mean())
    return avg, int(sizes.max()), avg / 1.0
