import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from bulksurf.assembly import SparseSystem, assemble_sif, interface_discretization
from bulksurf.errors import SolverError
from bulksurf.levelset import make_problem
from bulksurf.mesh import build_background_mesh, interpolate_levelset
from bulksurf.solver import solve_pcg


def _system(a, b):
    return SparseSystem(sp.csr_matrix(np.asarray(a, dtype=float)), np.asarray(b, dtype=float))


def test_identity_one_iteration():
    b = np.array([1.0, -2.0, 3.5])
    rep = solve_pcg(_system(np.eye(3), b))
    assert rep.converged and rep.iterations == 1
    assert np.allclose(rep.coefficients, b)


def test_two_by_two():
    rep = solve_pcg(_system([[4, 1], [1, 3]], [1, 2]))
    assert rep.converged and rep.iterations <= 2
    assert np.allclose(rep.coefficients, [1 / 11, 7 / 11], atol=1e-14)


def test_zero_rhs():
    rep = solve_pcg(_system(np.eye(2), [0, 0]))
    assert rep.converged and rep.iterations == 0 and np.all(rep.coefficients == 0)


def test_errors_and_cap():
    with pytest.raises(SolverError, match="diagonal"):
        solve_pcg(_system([[1, 0], [0, 0]], [1, 1]))
    with pytest.raises(SolverError, match="breakdown"):
        solve_pcg(_system([[1, 2], [2, 1]], [1, -1]))
    a = np.diag(np.arange(1.0, 51.0)) + 0.1 * np.ones((50, 50))
    rep = solve_pcg(_system(a, np.ones(50)), rtol=1e-14, max_iters=2)
    assert not rep.converged and rep.iterations == 2


@pytest.fixture(scope="module")
def torus_system():
    prob = make_problem("torus")
    mesh = build_background_mesh(prob.bounding_box, 3)
    active, cuts = interface_discretization(mesh, interpolate_levelset(prob.levelset, mesh))
    return assemble_sif(active, cuts, prob)


def test_true_residual_contract(torus_system):
    rep = solve_pcg(torus_system)
    assert rep.converged and rep.final_residual <= 1e-8 * rep.initial_residual
    true = np.linalg.norm(torus_system.rhs - torus_system.matrix @ rep.coefficients)
    assert true <= 1.01 * 1e-8 * np.linalg.norm(torus_system.rhs)


def test_iteration_counts_comparable(torus_system):
    rep = solve_pcg(torus_system)
    assert 128 / 3 <= rep.iterations <= 3 * 128


def test_rhs_scaling(torus_system):
    a = solve_pcg(torus_system).coefficients
    b = solve_pcg(SparseSystem(torus_system.matrix, 3.0 * torus_system.rhs)).coefficients
    assert np.allclose(b, 3 * a, rtol=1e-12, atol=1e-14 * np.abs(a).max())


@given(st.integers(2, 30), st.integers(0, 1000))
def test_random_spd(n, seed):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(n, n))
    a = q @ q.T + n * np.eye(n)
    b = rng.normal(size=n)
    rep = solve_pcg(_system(a, b), rtol=1e-10)
    assert rep.converged
    assert np.linalg.norm(a @ rep.coefficients - b) <= 1.01e-10 * np.linalg.norm(b)
