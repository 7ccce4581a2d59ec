"""P1 finite elements on :class:`~epihom.geometry.InterfaceMesh`.

Every mesh vertex is one degree of freedom; membrane vertices are already
doubled by the mesher, so the stiffness matrix has no coupling across the
membrane.  The coupling enters through the jump operator ``J`` (``(J u)_k =
u_out_k - u_in_k``) and the lumped interface mass.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverError
from .geometry import INNER, OUTER, InterfaceMesh

DENSE_LIMIT = 500


@dataclass(frozen=True)
class DofMap:
    n_dofs: int
    inner: np.ndarray
    outer: np.ndarray
    boundary: np.ndarray
    couples: np.ndarray

    @classmethod
    def from_mesh(cls, mesh: InterfaceMesh):
        inner = np.unique(mesh.triangles[mesh.tags == INNER])
        outer = np.unique(mesh.triangles[mesh.tags == OUTER])
        return cls(mesh.n_vertices, inner, outer, np.asarray(mesh.boundary_vertices),
                   mesh.interface_pairs)


@dataclass
class SparseSystem:
    """Square CSR matrix, right-hand side and optional Dirichlet constraints."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    constrained: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n(self):
        return self.matrix.shape[0]

    def with_dirichlet(self, dofs, values):
        dofs = np.asarray(dofs, dtype=int)
        values = np.broadcast_to(np.asarray(values, dtype=float), dofs.shape).copy()
        return SparseSystem(self.matrix, self.rhs, dofs, values)

    def free_dofs(self):
        mask = np.ones(self.n, dtype=bool)
        mask[self.constrained] = False
        return np.flatnonzero(mask)

    def reduced(self):
        """Symmetric elimination of the constraints: ``(A_ff, b_f - A_fc g, free)``."""
        free = self.free_dofs()
        A = self.matrix.tocsr()
        b = self.rhs[free].astype(float)
        if len(self.constrained):
            b = b - A[free][:, self.constrained] @ self.values
        return A[free][:, free].tocsr(), b, free

    def expand(self, x_free):
        x = np.zeros(self.n)
        x[self.free_dofs()] = x_free
        x[self.constrained] = self.values
        return x


def p1_gradients(mesh: InterfaceMesh):
    """Barycentric gradients ``(m, 3, 2)`` and signed areas of all triangles."""
    p = mesh.vertices[mesh.triangles]
    area = mesh.triangle_areas
    if np.any(area <= 0):
        raise SolverError("singular-element", f"{int(np.sum(area <= 0))} triangles with area <= 0")
    grads = np.empty((len(p), 3, 2))
    for i in range(3):
        e = p[:, (i + 2) % 3] - p[:, (i + 1) % 3]
        grads[:, i, 0] = -e[:, 1]
        grads[:, i, 1] = e[:, 0]
    grads /= (2.0 * area)[:, None, None]
    return grads, area


def _assemble(mesh, local):
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_vertices
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def triangle_sigma(mesh, sigma_inner, sigma_outer):
    return np.where(mesh.tags == INNER, sigma_inner, sigma_outer)


def assemble_stiffness(mesh: InterfaceMesh, sigma_inner, sigma_outer) -> SparseSystem:
    if sigma_inner <= 0 or sigma_outer <= 0:
        raise ValueError("conductivities must be positive")
    grads, area = p1_gradients(mesh)
    sig = triangle_sigma(mesh, sigma_inner, sigma_outer)
    local = np.einsum("tid,tjd->tij", grads, grads) * (sig * area)[:, None, None]
    return SparseSystem(_assemble(mesh, local), np.zeros(mesh.n_vertices))


def assemble_tensor_stiffness(mesh: InterfaceMesh, j, h):
    """``int d_j phi_a d_h phi_b``, the building block for anisotropic coefficients."""
    grads, area = p1_gradients(mesh)
    local = np.einsum("ti,tj->tij", grads[:, :, j], grads[:, :, h]) * area[:, None, None]
    return _assemble(mesh, local)


def jump_matrix(mesh: InterfaceMesh):
    """``(n_interface, n_vertices)`` map from nodal values to membrane jumps."""
    k = mesh.n_interface
    rows = np.concatenate([np.arange(k), np.arange(k)])
    cols = np.concatenate([mesh.iface_out, mesh.iface_in])
    vals = np.concatenate([np.ones(k), -np.ones(k)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(k, mesh.n_vertices))


def assemble_interface_mass(mesh: InterfaceMesh, coefficient=1.0) -> SparseSystem:
    """Lumped membrane mass acting on the jump: ``J^T diag(c * w) J``.

    ``coefficient`` may be a scalar or one value per membrane node.
    """
    if mesh.n_interface == 0:
        raise ValueError("mesh has no membrane")
    J = jump_matrix(mesh)
    w = mesh.interface_weights * coefficient
    return SparseSystem((J.T @ sp.diags(w) @ J).tocsr(), np.zeros(mesh.n_vertices))


def solve(system: SparseSystem, tol=1e-10, maxiter=None, x0=None, method="cg"):
    """Solve a symmetric positive definite system after eliminating constraints.

    ``method="cg"`` runs Jacobi-preconditioned conjugate gradients,
    ``"direct"`` a sparse LU and ``"dense"`` a dense LU (small systems only).
    """
    A, b, free = system.reduced()
    if method == "dense":
        x = solve_dense(A, b)
    elif method == "direct":
        x = spla.splu(A.tocsc()).solve(b)
    elif method == "cg":
        x = pcg(A, b, tol=tol, maxiter=maxiter,
                x0=None if x0 is None else np.asarray(x0)[free])
    else:
        raise ValueError(f"unknown method {method!r}")
    return system.expand(x)


def solve_dense(A, b):
    A = A.toarray() if sp.issparse(A) else np.asarray(A)
    if A.shape[0] > DENSE_LIMIT:
        raise ValueError(f"dense solve limited to {DENSE_LIMIT} unknowns")
    return sla.lu_solve(sla.lu_factor(A), b)


def pcg(A, b, tol=1e-10, maxiter=None, x0=None):
    n = len(b)
    maxiter = 10 * n if maxiter is None else maxiter
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n)
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise SolverError("not-spd", "non-positive diagonal entry")
    inv_d = 1.0 / diag
    x = np.zeros(n) if x0 is None else x0.astype(float).copy()
    r = b - A @ x
    z = inv_d * r
    p = z.copy()
    rz = r @ z
    for _ in range(maxiter):
        if np.linalg.norm(r) <= tol * bnorm:
            return x
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            raise SolverError("not-spd", f"p^T A p = {pAp:.3e}")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        z = inv_d * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    if np.linalg.norm(r) <= tol * bnorm:
        return x
    raise SolverError("solver-stagnation",
                      f"relative residual {np.linalg.norm(r) / bnorm:.3e} after {maxiter} iterations")


def dump_triplets(matrix, path):
    """Debug dump: one ``row col value`` line per stored entry."""
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        fh.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for i in order:
            fh.write(f"{coo.row[i]} {coo.col[i]} {coo.data[i]:.17g}\n")
