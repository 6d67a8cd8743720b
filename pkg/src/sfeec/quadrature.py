"""Quadrature on reference cells.

Reference cells: interval [0, 1], triangle with vertices (0,0), (1,0),
(0,1), and the unit square and cube.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import product

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

__all__ = ["QuadratureRule", "quadrature_rule", "MAX_ORDER"]

MAX_ORDER = {"interval": 39, "triangle": 20, "square": 9, "cube": 9}


@dataclass(frozen=True)
class QuadratureRule:
    cell_kind: str
    order: int
    points: np.ndarray
    weights: np.ndarray

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Contract the leading (point) axis of ``values`` with the weights."""
        return np.tensordot(self.weights, values, axes=(0, 0))


def _gauss01(m: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = roots_legendre(m)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def quadrature_rule(cell_kind: str, order: int) -> QuadratureRule:
    """Rule on the reference ``cell_kind`` exact for polynomials of ``order``.

    Tensor rules use ``ceil((order+1)/2)`` Gauss points per axis; triangles of
    order >= 2 use the collapsed (Gauss-Jacobi x Gauss-Legendre) product rule,
    order 1 the centroid rule.
    """
    if cell_kind not in MAX_ORDER:
        raise ValueError(f"unknown cell kind {cell_kind!r}")
    if int(order) != order or not 1 <= order <= MAX_ORDER[cell_kind]:
        raise ValueError(f"unsupported {cell_kind} quadrature order {order}")
    order = int(order)
    m = math.ceil((order + 1) / 2)

    if cell_kind == "triangle":
        if order == 1:
            pts = np.array([[1.0 / 3.0, 1.0 / 3.0]])
            wts = np.array([0.5])
        else:
            # xi = u, eta = (1-u) v; the (1-u) Jacobian is the Jacobi weight
            t, wu = roots_jacobi(m, 1.0, 0.0)
            u = 0.5 * (t + 1.0)
            wu = 0.25 * wu
            v, wv = _gauss01(m)
            uu, vv = np.meshgrid(u, v, indexing="ij")
            pts = np.stack([uu.ravel(), ((1.0 - uu) * vv).ravel()], axis=1)
            wts = np.outer(wu, wv).ravel()
        return QuadratureRule(cell_kind, order, pts, wts)

    x, w = _gauss01(m)
    dim = {"interval": 1, "square": 2, "cube": 3}[cell_kind]
    pts = np.array(list(product(x, repeat=dim)))
    wts = np.array([math.prod(c) for c in product(w, repeat=dim)])
    return QuadratureRule(cell_kind, order, pts, wts)
