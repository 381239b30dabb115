"""Linear solvers for the two per-step systems."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolveInfo:
    iterations: int
    relative_residual: float


def conjugate_gradient(A, b, x0=None, rtol=1e-10, maxiter=None, precondition=True):
    """Jacobi-preconditioned CG for symmetric positive definite ``A``.

    Stops when ``||b - A x|| <= rtol ||b||``; raises :class:`SolverError`
    otherwise.
    """
    n = len(b)
    maxiter = 10 * n if maxiter is None else maxiter
    bnorm = np.linalg.norm(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0:
        return np.zeros(n), SolveInfo(0, 0.0)
    dinv = 1.0 / A.diagonal() if precondition else np.ones(n)
    r = b - A @ x
    z = dinv * r
    p = z.copy()
    rz = r @ z
    for it in range(maxiter + 1):
        rnorm = np.linalg.norm(r)
        if rnorm <= rtol * bnorm:
            # guard against drift of the recursively updated residual
            true_r = np.linalg.norm(b - A @ x)
            if true_r <= rtol * bnorm:
                return x, SolveInfo(it, true_r / bnorm)
            r = b - A @ x
            z = dinv * r
            p = z.copy()
            rz = r @ z
            continue
        if it == maxiter:
            break
        Ap = A @ p
        pAp = p @ Ap
        if not pAp > 0:
            raise SolverError(f"CG breakdown (p.Ap = {pAp:.3e}); matrix not SPD?", iterations=it)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(f"CG did not reach rtol={rtol:g} in {maxiter} iterations "
                      f"(residual {np.linalg.norm(b - A @ x) / bnorm:.2e})", iterations=maxiter)


def solve_general(A: sp.spmatrix, b, rtol=1e-10):
    """Sparse LU, falling back to GMRES if the factorization misbehaves."""
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(len(b)), SolveInfo(0, 0.0)
    A = sp.csc_matrix(A)
    try:
        x = spla.splu(A).solve(b)
        res = np.linalg.norm(b - A @ x) / bnorm
        if np.all(np.isfinite(x)) and res <= rtol:
            return x, SolveInfo(1, res)
        log.warning("sparse LU residual %.2e above %.0e; trying GMRES", res, rtol)
        x0 = x if np.all(np.isfinite(x)) else None
    except RuntimeError as exc:
        log.warning("sparse LU failed (%s); trying GMRES", exc)
        x0 = None
    iters = 0

    def count(_):
        nonlocal iters
        iters += 1

    maxiter = 20 * A.shape[0]
    x, status = spla.gmres(A, b, x0=x0, rtol=rtol * 0.1, atol=0.0, restart=200,
                           maxiter=maxiter, callback=count, callback_type="pr_norm")
    res = np.linalg.norm(b - A @ x) / bnorm
    if status != 0 or res > rtol:
        raise SolverError(f"GMRES did not converge (status {status}, residual {res:.2e})",
                          iterations=iters)
    return x, SolveInfo(iters, res)
