"""Quadrature on the reference tetrahedron and on edges."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


@dataclass(frozen=True)
class QuadratureRule:
    """Points in barycentric coordinates, weights normalized to sum to 1.

    The integral over a tet ``K`` is ``|K| * sum_q weights[q] * f(points[q])``.
    """
    points: np.ndarray   # (Q, 4) barycentric
    weights: np.ndarray  # (Q,)
    degree: int


def _jacobi01(q, alpha):
    # nodes/weights on [0, 1] for weight (1 - x)^alpha
    x, w = roots_jacobi(q, alpha, 0.0)
    return (x + 1.0) / 2.0, w / 2.0 ** (alpha + 1)


@lru_cache(maxsize=None)
def tet_rule(degree: int = 4) -> QuadratureRule:
    """Conical (Stroud) product rule, exact for polynomials of ``degree``.

    Uses ``q = ceil((degree + 1) / 2)`` points per collapsed direction, so the
    declared degree is ``2q - 1`` (the next odd number at or above the request).
    """
    q = max(1, -(-(degree + 1) // 2))
    u, wu = _jacobi01(q, 2.0)
    v, wv = _jacobi01(q, 1.0)
    t, wt = roots_legendre(q)
    w, ww = (t + 1.0) / 2.0, wt / 2.0
    U, V, Wc = np.meshgrid(u, v, w, indexing="ij")
    x = U
    y = V * (1.0 - U)
    z = Wc * (1.0 - U) * (1.0 - V)
    weights = np.einsum("i,j,k->ijk", wu, wv, ww).ravel()
    weights = weights / weights.sum()
    pts = np.stack([1.0 - x.ravel() - y.ravel() - z.ravel(), x.ravel(), y.ravel(), z.ravel()],
                   axis=1)
    return QuadratureRule(pts, weights, 2 * q - 1)


@lru_cache(maxsize=None)
def line_rule(npoints: int = 2):
    """Gauss-Legendre on [0, 1]: parameters and weights summing to 1."""
    t, w = roots_legendre(npoints)
    return (t + 1.0) / 2.0, w / 2.0
