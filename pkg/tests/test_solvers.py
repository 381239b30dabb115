import numpy as np
import pytest
import scipy.sparse as sp

from smllg.errors import SolverError
from smllg.output import fmt
from smllg.solvers import conjugate_gradient, solve_general


def spd(n, seed):
    rng = np.random.default_rng(seed)
    B = sp.random(n, n, density=0.2, random_state=rng)
    return (B @ B.T + sp.identity(n) * 0.5).tocsr(), rng.normal(size=n)


@pytest.mark.parametrize("precondition", [True, False])
def test_cg_solves_spd(precondition):
    A, b = spd(60, 0)
    x, info = conjugate_gradient(A, b, rtol=1e-12, precondition=precondition)
    assert np.linalg.norm(b - A @ x) <= 1e-12 * np.linalg.norm(b)
    assert info.relative_residual <= 1e-12


def test_cg_zero_rhs():
    A, _ = spd(5, 1)
    x, info = conjugate_gradient(A, np.zeros(5))
    assert not x.any() and info.iterations == 0


def test_cg_indefinite_breakdown():
    A = sp.diags([1.0, -1.0, 2.0]).tocsr()
    with pytest.raises(SolverError):
        conjugate_gradient(A, np.array([1.0, 1.0, 1.0]), precondition=False)


def test_cg_iteration_limit():
    A, b = spd(60, 2)
    with pytest.raises(SolverError) as info:
        conjugate_gradient(A, b, maxiter=2)
    assert info.value.iterations == 2


def test_solve_general_nonsymmetric():
    rng = np.random.default_rng(3)
    A = sp.csr_matrix(rng.normal(size=(30, 30)) + 10 * np.eye(30))
    b = rng.normal(size=30)
    x, info = solve_general(A, b)
    assert np.linalg.norm(b - A @ x) <= 1e-10 * np.linalg.norm(b)


def test_solve_general_singular_raises():
    A = sp.csr_matrix(np.zeros((3, 3)))
    with pytest.raises(SolverError):
        solve_general(A, np.ones(3))


def test_number_format():
    assert fmt(3) == "3"
    assert fmt(0.1) == "0.10000000000000001"
    assert float(fmt(np.pi)) == np.pi
