import numpy as np
import pytest
import scipy.sparse as sp

from epihom.errors import SolverError
from epihom.fem import (DofMap, SparseSystem, assemble_interface_mass, assemble_stiffness,
                        assemble_tensor_stiffness, dump_triplets, jump_matrix, pcg, solve,
                        solve_dense)
from epihom.geometry import CellGeometry, build_square_mesh, build_unit_cell_mesh

# total current through the left side for u = x/L on the boundary and a
# membrane-continuous potential, computed on a mesh with h = 1.25e-6
FINE_FLUX_REFERENCE = 3.8430432600880327


def continuous_space(mesh):
    """Prolongation identifying the two copies of every membrane node."""
    rep = np.arange(mesh.n_vertices)
    rep[mesh.iface_out] = mesh.iface_in
    keep, idx = np.unique(rep, return_inverse=True)
    n = mesh.n_vertices
    return sp.csr_matrix((np.ones(n), (np.arange(n), idx)), shape=(n, len(keep))), keep


def affine_dirichlet_solution(mesh, si, se, method="direct"):
    P, keep = continuous_space(mesh)
    K = (P.T @ assemble_stiffness(mesh, si, se).matrix @ P).tocsr()
    X = mesh.vertices[keep]
    is_bnd = np.isin(keep, mesh.boundary_vertices)
    bnd = np.flatnonzero(is_bnd)
    system = SparseSystem(K, np.zeros(len(keep))).with_dirichlet(bnd, X[bnd, 0] / mesh.extent)
    return solve(system, method=method, tol=1e-12), K, X, bnd


def test_stiffness_symmetric_with_constant_kernel(coarse_mesh):
    K = assemble_stiffness(coarse_mesh, 0.455, 5.0).matrix
    assert abs(K - K.T).max() == 0.0
    assert np.abs(K @ np.ones(coarse_mesh.n_vertices)).max() < 1e-12 * abs(K).max()


def test_stiffness_positive_semidefinite(coarse_mesh, rng):
    K = assemble_stiffness(coarse_mesh, 0.455, 5.0).matrix
    x = rng.standard_normal((coarse_mesh.n_vertices, 20))
    assert np.all(np.einsum("ij,ij->j", x, K @ x) >= 0)


def test_tensor_stiffness_sums_to_scalar(coarse_mesh):
    K = assemble_stiffness(coarse_mesh, 1.0, 1.0).matrix
    D = assemble_tensor_stiffness(coarse_mesh, 0, 0) + assemble_tensor_stiffness(coarse_mesh, 1, 1)
    assert abs(K - D).max() < 1e-12 * abs(K).max()
    D01 = assemble_tensor_stiffness(coarse_mesh, 0, 1)
    assert abs(D01 - assemble_tensor_stiffness(coarse_mesh, 1, 0).T).max() == 0.0


def test_patch_test_equal_conductivities(coarse_mesh):
    u, *_ , X, _ = affine_dirichlet_solution(coarse_mesh, 2.0, 2.0)
    assert np.abs(u - X[:, 0] / coarse_mesh.extent).max() < 1e-10


def test_affine_energy_matches_exact():
    mesh = build_square_mesh(1.0, 6)
    K = assemble_stiffness(mesh, 3.0, 3.0).matrix
    x = mesh.vertices[:, 0]
    assert x @ K @ x == pytest.approx(3.0, rel=1e-12)


def test_flux_against_fine_mesh_reference(circle):
    mesh = build_unit_cell_mesh(circle, 5e-6)
    u, K, X, bnd = affine_dirichlet_solution(mesh, 0.455, 5.0)
    left = bnd[X[bnd, 0] < 1e-12]
    flux = -(K @ u)[left].sum()
    assert flux == pytest.approx(FINE_FLUX_REFERENCE, rel=2e-3)
    # a poorly conducting inclusion lowers the current below the homogeneous value
    assert flux < 5.0


def test_interface_mass_constant_jump_gives_length(coarse_mesh):
    M = assemble_interface_mass(coarse_mesh).matrix
    u = np.zeros(coarse_mesh.n_vertices)
    u[coarse_mesh.iface_out] = 1.0
    assert u @ M @ u == pytest.approx(coarse_mesh.interface_length, rel=1e-14)
    assert abs(M - M.T).max() == 0.0


def test_interface_mass_requires_membrane():
    with pytest.raises(ValueError):
        assemble_interface_mass(build_square_mesh(1.0, 2))


def test_jump_matrix(coarse_mesh):
    J = jump_matrix(coarse_mesh)
    u = np.arange(coarse_mesh.n_vertices, dtype=float)
    assert np.array_equal(J @ u, u[coarse_mesh.iface_out] - u[coarse_mesh.iface_in])


def test_strong_membrane_coupling_recovers_continuous_solution(coarse_mesh):
    mesh = coarse_mesh
    u_c, *_ = affine_dirichlet_solution(mesh, 0.455, 5.0)
    P, _ = continuous_space(mesh)
    bnd = np.asarray(mesh.boundary_vertices)
    errs = []
    for c in (1e8, 1e10):
        K = assemble_stiffness(mesh, 0.455, 5.0).matrix + assemble_interface_mass(mesh, c).matrix
        sysm = SparseSystem(K, np.zeros(mesh.n_vertices)).with_dirichlet(
            bnd, mesh.vertices[bnd, 0] / mesh.extent)
        errs.append(np.abs(solve(sysm, method="direct") - P @ u_c).max())
    # the coupled solution approaches the continuous one like 1/c
    assert errs[1] < 1e-5
    assert 50 < errs[0] / errs[1] < 200


def test_pcg_matches_dense_lu(circle):
    mesh = build_unit_cell_mesh(circle, 1.5e-5)
    # membrane coupling makes the split problem definite (the inner region floats otherwise)
    K = (assemble_stiffness(mesh, 0.455, 5.0).matrix
         + assemble_interface_mass(mesh, 1e5).matrix)
    bnd = np.asarray(mesh.boundary_vertices)
    rhs = np.sin(mesh.vertices[:, 0] * 3e4)
    sysm = SparseSystem(K, rhs).with_dirichlet(bnd, 0.0)
    assert len(sysm.free_dofs()) < 500
    x_cg = solve(sysm, tol=1e-12)
    x_lu = solve(sysm, method="dense")
    err = x_cg - x_lu
    assert np.sqrt(err @ K @ err) <= 1e-8 * np.sqrt(x_lu @ K @ x_lu)


def test_identity_and_laplacian_1d():
    n = 50
    b = np.linspace(1.0, 2.0, n)
    assert np.allclose(pcg(sp.identity(n, format="csr"), b), b, rtol=0, atol=1e-14)
    A = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")
    x = pcg(A, b, tol=1e-13)
    assert np.allclose(x, solve_dense(A, b), rtol=1e-10)


def test_pcg_not_spd():
    A = sp.diags([1.0, -1.0], format="csr")
    with pytest.raises(SolverError) as exc:
        pcg(A, np.ones(2))
    assert exc.value.code == "not-spd"


def test_pcg_stagnation():
    n = 200
    A = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")
    with pytest.raises(SolverError) as exc:
        pcg(A, np.ones(n), maxiter=3)
    assert exc.value.code == "solver-stagnation"


def test_dense_limit():
    with pytest.raises(ValueError):
        solve_dense(sp.identity(600), np.ones(600))


def test_dofmap(coarse_mesh):
    d = DofMap.from_mesh(coarse_mesh)
    assert d.n_dofs == coarse_mesh.n_vertices
    assert len(np.intersect1d(d.inner, d.outer)) == 0


def test_dump_triplets(tmp_path):
    A = sp.csr_matrix(np.array([[2.0, 0.0], [1.0, 3.0]]))
    dump_triplets(A, tmp_path / "a.txt")
    assert (tmp_path / "a.txt").read_text() == "2 2 3\n0 0 2\n1 0 1\n1 1 3\n"


def test_degenerate_element_rejected():
    mesh = build_square_mesh(1.0, 1)
    mesh.vertices = mesh.vertices.copy()
    mesh.vertices[2] = mesh.vertices[0]
    with pytest.raises(SolverError) as exc:
        assemble_stiffness(mesh, 1.0, 1.0)
    assert exc.value.code == "singular-element"


def test_nonpositive_conductivity(coarse_mesh):
    with pytest.raises(ValueError):
        assemble_stiffness(coarse_mesh, 0.0, 1.0)
