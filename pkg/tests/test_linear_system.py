import numpy as np
import pytest
import scipy.io
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from sbhdg.assembly import assemble_system
from sbhdg.data import ProblemData
from sbhdg.linear_system import (InaccurateSolveError, SingularSystemError, equilibrate,
                                 export_matrix_market, factorize)
from sbhdg.manufactured import ExactSolution, derive_data, steady_parameters


def test_identity_returns_rhs(rng):
    b = rng.standard_normal(30)
    assert np.array_equal(factorize(sp.identity(30)).solve(b), b)


def test_zero_rhs_gives_zero():
    A = sp.diags([1.0, 2.0, 3.0])
    assert not factorize(A).solve(np.zeros(3)).any()


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_random_spd_matches_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    G = sp.random(100, 100, density=0.05, random_state=rng)
    A = (G @ G.T + sp.identity(100)).tocsr()
    b = rng.standard_normal(100)
    x = factorize(A).solve(b)
    ref = np.linalg.solve(A.toarray(), b)
    assert np.linalg.norm(x - ref) <= 1e-10 * np.linalg.norm(ref)


def test_badly_scaled_system_is_equilibrated(rng):
    d = 10.0 ** rng.uniform(-4, 4, 50)
    A = sp.diags(d) @ (sp.random(50, 50, density=0.1, random_state=1) + 5 * sp.identity(50))
    r, c = equilibrate(A.tocsr())
    S = abs(sp.diags(r) @ A @ sp.diags(c))
    # Ruiz converges linearly; eight sweeps bring 8 decades within 10%
    assert np.all(np.abs(S.max(axis=1).toarray() - 1.0) < 0.1)
    assert np.all(np.abs(S.max(axis=0).toarray() - 1.0) < 0.1)
    b = rng.standard_normal(50)
    x = factorize(A).solve(b)
    assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_singular_matrix_is_reported():
    A = sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(SingularSystemError):
        factorize(A)


def test_non_square_rejected():
    with pytest.raises(ValueError):
        factorize(sp.csr_matrix(np.ones((2, 3))))


def test_inaccurate_solve_is_reported(rng):
    A = sp.diags([1.0, 1e-9, 1.0]) + sp.csr_matrix(np.triu(np.ones((3, 3)), 1))
    f = factorize(A)
    with pytest.raises(InaccurateSolveError):
        f.solve(rng.standard_normal(3), refine=0, tol=0.0)


@pytest.mark.parametrize("k", [1, 2])
def test_condensed_and_direct_agree(small_mesh, k):
    params = steady_parameters(k)
    data = derive_data(ExactSolution(params), params)
    system = assemble_system(small_mesh, params, data, 0.0, "steady")
    dm = system.dofmap
    cond = factorize(system.matrix, dm.cell_groups, dm.n_cell_dofs)
    direct = factorize(system.matrix, strategy="direct")
    assert cond.strategy == "condensed" and cond.stats["schur_size"] == dm.n_free - dm.n_cell_dofs
    x1 = cond.solve(system.rhs)
    x2 = direct.solve(system.rhs)
    assert np.linalg.norm(x1 - x2) <= 1e-9 * np.linalg.norm(x2)


def test_singular_cell_block_is_reported():
    A = sp.block_diag([np.zeros((2, 2)), np.eye(2), np.eye(3)]).tolil()
    A[0, 4] = A[4, 0] = 1.0
    groups = [(np.arange(2), np.array([[0, 1], [2, 3]]))]
    with pytest.raises(SingularSystemError):
        factorize(A.tocsr(), groups, 4)


def test_empty_pressure_boundary_is_rejected():
    from sbhdg.mesh import FacetTag as T, GeometrySpec, MeshError, generate
    part = {("s", "left"): T.DIRICHLET_S, ("s", "top"): T.DIRICHLET_S,
            ("s", "right"): T.DIRICHLET_S, ("b", "left"): T.DIRICHLET_B | T.FLUX_B,
            ("b", "bottom"): T.DIRICHLET_B | T.FLUX_B, ("b", "right"): T.NEUMANN_B | T.FLUX_B}
    with pytest.raises(MeshError, match="PRESSURE_B"):
        generate(GeometrySpec("unit-square-split", 1, part))


def test_matrix_market_export(tmp_path, rng):
    A = sp.random(6, 6, density=0.5, random_state=3) + sp.identity(6)
    b = rng.standard_normal(6)
    export_matrix_market(tmp_path / "A.mtx", A, b)
    back = scipy.io.mmread(str(tmp_path / "A.mtx"))
    assert np.array_equal(back.toarray(), A.toarray())
    assert np.array_equal(scipy.io.mmread(str(tmp_path / "A_rhs.mtx")).ravel(), b)
