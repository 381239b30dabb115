"""Vector P1 elements on D and lowest-order Nedelec (Whitney) elements on the cavity.

Conventions
-----------
* Nodal fields live on the D-submesh vertices (``mesh.d_vertices`` order).
* Edge coefficients are circulations ``int_e u . tau ds`` with ``tau``
  pointing from the lower to the higher global vertex index.
* On a tet, the basis function of local edge ``(i, j)`` is
  ``sign * (lambda_i grad lambda_j - lambda_j grad lambda_i)``; its curl is
  ``2 sign grad lambda_i x grad lambda_j``.
* Gradients of vector fields are stored as ``(..., 3, 3)`` arrays indexed
  ``[i, c] = d u_c / d x_i``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Union

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError
from .mesh import INSIDE_D, LOCAL_EDGES, OUTSIDE_D, Mesh
from .quadrature import QuadratureRule, line_rule, tet_rule

VectorFunction = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class NodalField:
    values: np.ndarray  # (N, 3) on D-vertices
    mesh: Mesh

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.mesh.n_d_vertices, 3):
            raise ValueError(f"nodal values must have shape ({self.mesh.n_d_vertices}, 3), "
                             f"got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("nodal field has non-finite entries")
        object.__setattr__(self, "values", v)

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()


@dataclass(frozen=True, eq=False)
class EdgeField:
    coeffs: np.ndarray  # (E,)
    mesh: Mesh

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape != (self.mesh.n_edges,):
            raise ValueError(f"edge coefficients must have shape ({self.mesh.n_edges},), "
                             f"got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("edge field has non-finite entries")
        object.__setattr__(self, "coeffs", c)


@dataclass(frozen=True, eq=False)
class LinearSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    symmetric: bool = False

    def __post_init__(self):
        n, m = self.matrix.shape
        if n != m or self.rhs.shape != (n,):
            raise ValueError("inconsistent linear system dimensions")

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


def accumulate(rows, cols, vals, shape) -> sp.csr_matrix:
    """Sum COO triples into CSR in a canonical order.

    Triples are sorted by (row, col, value) before summation, so the result
    does not depend on the order in which elements were visited.
    """
    rows = np.asarray(rows, dtype=np.int64).ravel()
    cols = np.asarray(cols, dtype=np.int64).ravel()
    vals = np.asarray(vals, dtype=float).ravel()
    if len(vals) == 0:
        return sp.csr_matrix(shape)
    order = np.lexsort((vals, cols, rows))
    r, c, v = rows[order], cols[order], vals[order]
    start = np.flatnonzero(np.r_[True, (r[1:] != r[:-1]) | (c[1:] != c[:-1])])
    summed = np.add.reduceat(v, start)
    out = sp.csr_matrix((summed, (r[start], c[start])), shape=shape)
    out.sort_indices()
    return out


def accumulate_vector(index, vals, size) -> np.ndarray:
    index = np.asarray(index, dtype=np.int64).ravel()
    vals = np.asarray(vals, dtype=float).ravel()
    order = np.lexsort((vals, index))
    return np.bincount(index[order], weights=vals[order], minlength=size)


# ---------------------------------------------------------------- evaluation

def _bary(bary, ntets):
    bary = np.asarray(bary, dtype=float)
    if bary.ndim == 2:
        bary = np.broadcast_to(bary, (ntets,) + bary.shape)
    return bary


def nodal_values_at(mesh: Mesh, values: np.ndarray, bary) -> np.ndarray:
    """Values of a P1 field (nodal ``(N, k...)``) at barycentric points of every D-tet."""
    local = values[mesh.d_tet_nodes]                       # (T, 4, ...)
    b = _bary(bary, len(mesh.d_tets))                       # (T, Q, 4)
    return np.einsum("tqa,ta...->tq...", b, local)


def nodal_gradient(mesh: Mesh, values: np.ndarray) -> np.ndarray:
    """Elementwise-constant gradient ``(T_D, 3, 3)`` of a vector P1 field."""
    G = mesh.grads[mesh.d_tets]
    return np.einsum("tai,tac->tic", G, values[mesh.d_tet_nodes])


def whitney_basis(mesh: Mesh, bary, tets=None) -> np.ndarray:
    """Signed Whitney functions ``(T, 6, Q, 3)`` at barycentric points."""
    tets = np.arange(mesh.n_tets) if tets is None else np.asarray(tets)
    b = _bary(bary, len(tets))
    G = mesh.grads[tets]
    out = np.empty((len(tets), 6, b.shape[1], 3))
    for s, (i, j) in enumerate(LOCAL_EDGES):
        out[:, s] = (b[:, :, i, None] * G[:, None, j, :] - b[:, :, j, None] * G[:, None, i, :])
    out *= mesh.tet_edge_signs[tets][:, :, None, None]
    return out


def whitney_curls(mesh: Mesh, tets=None) -> np.ndarray:
    """Signed constant curls ``(T, 6, 3)``."""
    tets = np.arange(mesh.n_tets) if tets is None else np.asarray(tets)
    G = mesh.grads[tets]
    out = np.stack([2.0 * np.cross(G[:, i], G[:, j]) for i, j in LOCAL_EDGES], axis=1)
    return out * mesh.tet_edge_signs[tets][:, :, None]


def edge_values_at(field: EdgeField, bary, tets=None) -> np.ndarray:
    mesh = field.mesh
    tets = np.arange(mesh.n_tets) if tets is None else np.asarray(tets)
    coeffs = field.coeffs[mesh.tet_edges[tets]]            # (T, 6)
    return np.einsum("ts,tsqc->tqc", coeffs, whitney_basis(mesh, bary, tets))


def curl_edge_field_all(field: EdgeField, tets=None) -> np.ndarray:
    mesh = field.mesh
    tets = np.arange(mesh.n_tets) if tets is None else np.asarray(tets)
    return np.einsum("ts,tsc->tc", field.coeffs[mesh.tet_edges[tets]], whitney_curls(mesh, tets))


def curl_edge_field(field: EdgeField, tet: int) -> np.ndarray:
    """Exact curl of an edge field on one tet (constant there)."""
    if not 0 <= tet < field.mesh.n_tets:
        raise IndexError(f"tet index {tet} out of range")
    return curl_edge_field_all(field, [tet])[0]


def quadrature_points(mesh: Mesh, rule: QuadratureRule, tets=None) -> np.ndarray:
    tets = mesh.d_tets if tets is None else np.asarray(tets)
    return np.einsum("qa,tai->tqi", rule.points, mesh.vertices[mesh.tets[tets]])


def integrate_d(mesh: Mesh, rule: QuadratureRule, values: np.ndarray) -> float:
    """Integrate per-point scalars ``(T_D, Q)`` over D."""
    vol = mesh.volumes[mesh.d_tets]
    return float(np.einsum("t,q,tq->", vol, rule.weights, values))


def load_vector(mesh: Mesh, rule: QuadratureRule, values: np.ndarray) -> np.ndarray:
    """``b[n, c] = int_D f_c phi_n`` for ``f`` sampled at the rule points of every D-tet."""
    vol = mesh.volumes[mesh.d_tets]
    local = np.einsum("t,q,qa,tqc->tac", vol, rule.weights, rule.points, values)
    N = mesh.n_d_vertices
    idx = (mesh.d_tet_nodes[:, :, None] * 3 + np.arange(3)).ravel()
    return accumulate_vector(idx, local.ravel(), 3 * N).reshape(N, 3)


# ------------------------------------------------------------- interpolation

def interpolate_nodal(f: VectorFunction, mesh: Mesh) -> NodalField:
    """Nodal interpolant: ``f`` is evaluated at the D-vertices (vectorized, ``(P, 3) -> (P, 3)``)."""
    x = mesh.vertices[mesh.d_vertices]
    vals = np.asarray(f(x), dtype=float).reshape(len(x), 3)
    if not np.all(np.isfinite(vals)):
        raise ValueError("interpolated function returned non-finite values")
    return NodalField(vals, mesh)


def interpolate_edge(f: VectorFunction, mesh: Mesh, npoints: int = 2) -> EdgeField:
    """Edge interpolant, circulations by 2-point Gauss (exact to cubic along an edge)."""
    t, w = line_rule(npoints)
    a = mesh.vertices[mesh.edges[:, 0]]
    b = mesh.vertices[mesh.edges[:, 1]]
    pts = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]       # (E, P, 3)
    vals = np.asarray(f(pts.reshape(-1, 3)), dtype=float).reshape(pts.shape)
    ft = np.einsum("epc,ec->ep", vals, mesh.edge_tangent)
    coeffs = mesh.edge_length * (ft @ w)
    return EdgeField(coeffs, mesh)


# ------------------------------------------------------------------ assembly

@dataclass(frozen=True, eq=False)
class P1Matrices:
    mass: sp.csr_matrix       # scalar N x N
    stiffness: sp.csr_matrix  # scalar N x N


def _pairs(nodes):
    rows = np.repeat(nodes, nodes.shape[1], axis=1)
    cols = np.tile(nodes, (1, nodes.shape[1]))
    return rows, cols


def assemble_p1_matrices(mesh: Mesh) -> P1Matrices:
    """Scalar P1 mass and stiffness on D, closed-form per tet."""
    vol = mesh.volumes[mesh.d_tets]
    G = mesh.grads[mesh.d_tets]
    K = vol[:, None, None] * np.einsum("tai,tbi->tab", G, G)
    Mloc = vol[:, None, None] * (np.ones((4, 4)) + np.eye(4)) / 20.0
    rows, cols = _pairs(mesh.d_tet_nodes)
    N = mesh.n_d_vertices
    return P1Matrices(accumulate(rows, cols, Mloc.reshape(len(vol), -1), (N, N)),
                      accumulate(rows, cols, K.reshape(len(vol), -1), (N, N)))


def sigma_per_tet(mesh: Mesh, sigma: Union[float, Mapping[int, float], np.ndarray]) -> np.ndarray:
    """Resolve a scalar, a ``{INSIDE_D: s_D, OUTSIDE_D: s}`` map, or a per-tet array."""
    if isinstance(sigma, Mapping):
        out = np.empty(mesh.n_tets)
        for tag in (INSIDE_D, OUTSIDE_D):
            mask = mesh.region == tag
            if mask.any():
                if tag not in sigma:
                    raise ConfigError(f"no sigma value for region tag {tag}")
                out[mask] = sigma[tag]
    else:
        out = np.broadcast_to(np.asarray(sigma, dtype=float), (mesh.n_tets,)).copy()
    if np.any(~(out > 0)):
        raise ConfigError("sigma (inverse conductivity) must be positive")
    return out


@dataclass(frozen=True, eq=False)
class NedelecMatrices:
    mass: sp.csr_matrix
    curlcurl: sp.csr_matrix


def assemble_nedelec_matrices(mesh: Mesh, sigma=1.0) -> NedelecMatrices:
    """Edge-element mass (degree-2 exact rule) and sigma-weighted curl-curl on the cavity."""
    s = sigma_per_tet(mesh, sigma)
    rule = tet_rule(2)
    W = whitney_basis(mesh, rule.points)                      # (T, 6, Q, 3)
    Mloc = np.einsum("t,q,taqc,tbqc->tab", mesh.volumes, rule.weights, W, W)
    C = whitney_curls(mesh)
    Kloc = (s * mesh.volumes)[:, None, None] * np.einsum("tac,tbc->tab", C, C)
    rows, cols = _pairs(mesh.tet_edges)
    E = mesh.n_edges
    T = mesh.n_tets
    return NedelecMatrices(accumulate(rows, cols, Mloc.reshape(T, -1), (E, E)),
                           accumulate(rows, cols, Kloc.reshape(T, -1), (E, E)))


def block3(scalar: sp.spmatrix) -> sp.csr_matrix:
    """Apply a scalar nodal matrix componentwise to interleaved 3-vectors."""
    return sp.kron(scalar, sp.identity(3), format="csr")


# --------------------------------------------------------------------- norms

def discrete_lp_norm(u: NodalField, p: float) -> float:
    """``(h^3 sum_n |u(x_n)|^p)^(1/p)`` with ``h^3`` the grid cell volume."""
    if not (p >= 1 and np.isfinite(p)):
        raise ValueError(f"p must be finite and >= 1, got {p}")
    mags = np.linalg.norm(u.values, axis=1)
    return float((u.mesh.cell_volume * np.sum(mags ** p)) ** (1.0 / p))


def l2_norm(u: NodalField, p1: P1Matrices = None) -> float:
    p1 = assemble_p1_matrices(u.mesh) if p1 is None else p1
    return float(np.sqrt(np.einsum("nc,nc->", u.values, p1.mass @ u.values)))
