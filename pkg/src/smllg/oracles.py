"""Dense reference assemblies used to cross-check the sparse code paths.

Everything here loops over tets and uses closed-form integrals of products
of barycentric coordinates; no quadrature rule and none of the vectorized
assembly helpers are involved. Only constant ``g`` is supported, for which
the noise correction vanishes and the rotation is a fixed linear map.
"""
from __future__ import annotations

from math import factorial

import numpy as np

from .mesh import LOCAL_EDGES, Mesh


def bary_integral(volume: float, *indices: int) -> float:
    """``int_K prod lambda_{indices}`` over a tet of the given volume."""
    counts = [indices.count(a) for a in range(4)]
    num = 6.0 * volume
    for c in counts:
        num *= factorial(c)
    return num / factorial(len(indices) + 3)


def local_geometry(mesh: Mesh, t: int):
    x = mesh.vertices[mesh.tets[t]]
    B = np.column_stack([x[1] - x[0], x[2] - x[0], x[3] - x[0]])
    vol = np.linalg.det(B) / 6.0
    inv = np.linalg.inv(B)
    grads = np.vstack([-inv.sum(axis=0), inv])
    return vol, grads


def skew(a):
    return np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])


def rotation_matrix(g, s):
    """Matrix of ``u -> u + sin(s) u x g + (1 - cos s)(u x g) x g``."""
    Gm = -skew(g)  # u x g = -(g x u)
    return np.eye(3) + np.sin(s) * Gm + (1.0 - np.cos(s)) * Gm @ Gm


def dense_p1(mesh: Mesh):
    N = mesh.n_d_vertices
    M = np.zeros((N, N))
    K = np.zeros((N, N))
    for ti, t in enumerate(mesh.d_tets):
        vol, G = local_geometry(mesh, t)
        nodes = mesh.d_tet_nodes[ti]
        for a in range(4):
            for b in range(4):
                M[nodes[a], nodes[b]] += bary_integral(vol, a, b)
                K[nodes[a], nodes[b]] += vol * G[a] @ G[b]
    return M, K


def _whitney_coeffs(mesh, t, G):
    """Per local edge: (sign, i, j) with w = sign (l_i grad l_j - l_j grad l_i)."""
    out = []
    tet = mesh.tets[t]
    for i, j in LOCAL_EDGES:
        sign = 1.0 if tet[i] < tet[j] else -1.0
        out.append((sign, i, j))
    return out


def dense_nedelec(mesh: Mesh, sigma_tet):
    E = mesh.n_edges
    M = np.zeros((E, E))
    K = np.zeros((E, E))
    for t in range(mesh.n_tets):
        vol, G = local_geometry(mesh, t)
        ws = _whitney_coeffs(mesh, t, G)
        curls = [2.0 * s * np.cross(G[i], G[j]) for s, i, j in ws]
        edges = mesh.tet_edges[t]
        for a, (sa, i, j) in enumerate(ws):
            for b, (sb, k, l) in enumerate(ws):
                val = (bary_integral(vol, i, k) * G[j] @ G[l]
                       - bary_integral(vol, i, l) * G[j] @ G[k]
                       - bary_integral(vol, j, k) * G[i] @ G[l]
                       + bary_integral(vol, j, l) * G[i] @ G[k])
                M[edges[a], edges[b]] += sa * sb * val
                K[edges[a], edges[b]] += sigma_tet[t] * vol * curls[a] @ curls[b]
    return M, K


def dense_llg_system(mesh: Mesh, m, t1, t2, P, W, g, lambda1, lambda2, k, theta):
    """Reduced tangent-plane system ``(A, b)`` for constant unit ``g``.

    Unknown ordering is ``(a_0, b_0, a_1, b_1, ...)`` with ``v_n = a_n t1_n + b_n t2_n``.
    """
    N = mesh.n_d_vertices
    mu = lambda1 ** 2 + lambda2 ** 2
    frames = [t1, t2]
    A = np.zeros((2 * N, 2 * N))
    b = np.zeros(2 * N)
    Mfull = np.zeros((3 * N, 3 * N))
    rhs = np.zeros((N, 3))
    rot = rotation_matrix(g, -W)
    for ti, t in enumerate(mesh.d_tets):
        vol, G = local_geometry(mesh, t)
        nodes = mesh.d_tet_nodes[ti]
        ws = _whitney_coeffs(mesh, t, G)
        c_edge = P[mesh.tet_edges[t]]
        for a in range(4):
            na = nodes[a]
            for bb in range(4):
                nb = nodes[bb]
                block = (lambda2 * bary_integral(vol, a, bb) + mu * k * theta * vol * G[a] @ G[bb]) * np.eye(3)
                for p in range(4):
                    block -= lambda1 * bary_integral(vol, a, bb, p) * skew(m[nodes[p]])
                Mfull[3 * na:3 * na + 3, 3 * nb:3 * nb + 3] += block
                rhs[na] -= mu * vol * (G[a] @ G[bb]) * m[nb]
            # rotated edge field tested against lambda_a
            for s, (sg, i, j) in enumerate(ws):
                vec = sg * (G[j] * bary_integral(vol, a, i) - G[i] * bary_integral(vol, a, j))
                rhs[na] += mu * c_edge[s] * (rot @ vec)
    for n1 in range(N):
        for f1 in range(2):
            row = 2 * n1 + f1
            b[row] = frames[f1][n1] @ rhs[n1]
            for n2 in range(N):
                blk = Mfull[3 * n1:3 * n1 + 3, 3 * n2:3 * n2 + 3]
                for f2 in range(2):
                    A[row, 2 * n2 + f2] = frames[f1][n1] @ blk @ frames[f2][n2]
    return A, b


def dense_maxwell_system(mesh: Mesh, m, P, W, g, mu0, k, sigma_tet, sigma_D):
    """``((mu0/k) M + K_sigma, rhs)`` for constant unit ``g``."""
    M, K = dense_nedelec(mesh, sigma_tet)
    A = mu0 / k * M + K
    b = mu0 / k * M @ P
    rot = rotation_matrix(g, W)
    for ti, t in enumerate(mesh.d_tets):
        vol, G = local_geometry(mesh, t)
        nodes = mesh.d_tet_nodes[ti]
        ws = _whitney_coeffs(mesh, t, G)
        # rotated m is P1 with nodal values rot @ m_n; its curl is constant
        curl = np.zeros(3)
        for a in range(4):
            curl += np.cross(G[a], rot @ m[nodes[a]])
        for s, (sg, i, j) in enumerate(ws):
            b[mesh.tet_edges[t][s]] += sigma_D * vol * curl @ (2.0 * sg * np.cross(G[i], G[j]))
    return A, b
