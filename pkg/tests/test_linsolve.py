import numpy as np
import pytest
import scipy.sparse as sp

from baropc.linsolve import (LinearSolverError, SolverConfig, bicgstab_solve,
                             cg_solve, neumann_solve)
from baropc.mesh import build_rect_mesh
from baropc import operators as ops


def _poisson_1d(n):
    main = 2.0 * np.ones(n)
    off = -np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1]).tocsr()


def test_cg_identity_single_iteration():
    A = sp.identity(12, format="csr")
    b = np.arange(12, dtype=float) - 3.0
    x, report = cg_solve(A, b)
    np.testing.assert_allclose(x, b, rtol=1e-14)
    assert report.iterations <= 1
    assert report.converged


def test_cg_poisson_against_dense_solve():
    A = _poisson_1d(10)
    b = np.sin(np.arange(10, dtype=float))
    x, report = cg_solve(A, b, SolverConfig(rel_tol=1e-12))
    expect = np.linalg.solve(A.toarray(), b)
    np.testing.assert_allclose(x, expect, atol=1e-10)
    assert np.linalg.norm(b - A @ x) <= report.target


def test_cg_random_spd(rng):
    n = 50
    M = rng.normal(size=(n, n))
    A = sp.csr_matrix(M @ M.T + n * np.eye(n))
    b = rng.normal(size=n)
    x, report = cg_solve(A, b)
    # re-verify the reported residual with an independent mat-vec
    assert np.linalg.norm(b - A @ x) <= report.target
    assert report.residual == pytest.approx(np.linalg.norm(b - A @ x), rel=1e-8)


def test_cg_nonconvergence_carries_history():
    A = _poisson_1d(40)
    b = np.ones(40)
    with pytest.raises(LinearSolverError) as err:
        cg_solve(A, b, SolverConfig(rel_tol=1e-14, max_iter=3, preconditioner="none"))
    assert len(err.value.history) == 4                 # initial + 3 iterations


def test_cg_rejects_non_spd():
    A = sp.csr_matrix(-np.eye(5))
    with pytest.raises(LinearSolverError):
        cg_solve(A, np.ones(5))


def test_neumann_zero_rhs():
    m = build_rect_mesh(2, 1)
    A = ops.pressure_laplacian(m, np.ones(m.nedges))
    x, report = neumann_solve(A, np.zeros(2), m.cell_volumes)
    np.testing.assert_allclose(x, 0.0)
    assert report.converged


def test_neumann_against_pseudo_inverse():
    m = build_rect_mesh(2, 1)
    A = ops.pressure_laplacian(m, np.ones(m.nedges))
    c = 0.8
    b = np.array([c, -c])
    x, _ = neumann_solve(A, b, m.cell_volumes)
    expect = np.linalg.pinv(A.toarray()) @ b
    expect -= (m.cell_volumes @ expect) / m.cell_volumes.sum()
    np.testing.assert_allclose(x, expect, atol=1e-11)
    assert abs(m.cell_volumes @ x) <= 1e-12 * max(np.abs(x).max(), 1.0)


def test_neumann_mean_zero_on_larger_problem(rng):
    m = build_rect_mesh(6, 5)
    w = rng.uniform(0.5, 2.0, m.nedges)
    A = ops.pressure_laplacian(m, w)
    b = rng.normal(size=m.ncells)
    b -= b.mean()                                      # compatible
    x, report = neumann_solve(A, b, m.cell_volumes, SolverConfig(rel_tol=1e-12))
    assert np.linalg.norm(b - A @ x) <= report.target
    assert abs(m.cell_volumes @ x) <= 1e-12 * np.abs(x).max() * m.cell_volumes.sum()


def test_neumann_rejects_incompatible_rhs():
    m = build_rect_mesh(3, 3)
    A = ops.pressure_laplacian(m, np.ones(m.nedges))
    with pytest.raises(LinearSolverError):
        neumann_solve(A, np.ones(m.ncells), m.cell_volumes)


def test_bicgstab_identity():
    A = sp.identity(9, format="csr")
    b = np.linspace(-1, 1, 9)
    x, report = bicgstab_solve(A, b)
    np.testing.assert_allclose(x, b, rtol=1e-12)
    assert report.converged


def test_bicgstab_advection_diffusion_against_dense(rng):
    n = 30
    A = _poisson_1d(n).toarray()
    A += 0.8 * (np.diag(np.ones(n - 1), 1) - np.diag(np.ones(n - 1), -1))
    A = sp.csr_matrix(A)
    b = rng.normal(size=n)
    x, report = bicgstab_solve(A, b, SolverConfig(rel_tol=1e-12))
    np.testing.assert_allclose(x, np.linalg.solve(A.toarray(), b), atol=1e-10)
    assert np.linalg.norm(b - A @ x) <= report.target


def test_bicgstab_singular_system_fails():
    A = sp.csr_matrix(np.diag([1.0, 1.0, 0.0]))
    with pytest.raises(LinearSolverError):
        bicgstab_solve(A, np.array([1.0, 1.0, 1.0]),
                       SolverConfig(max_iter=50))


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(rel_tol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(abs_tol=-1.0)
    with pytest.raises(ValueError):
        SolverConfig(preconditioner="ilu")
    cfg = SolverConfig()
    assert cfg.iterations(100) == 1000
    assert SolverConfig(max_iter=7).iterations(100) == 7


def test_nonfinite_rhs_rejected():
    A = sp.identity(3, format="csr")
    with pytest.raises(LinearSolverError):
        cg_solve(A, np.array([1.0, np.nan, 0.0]))
    with pytest.raises(LinearSolverError):
        bicgstab_solve(A, np.array([np.inf, 0.0, 0.0]))
