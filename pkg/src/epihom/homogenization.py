"""Cell problems, effective tensors, the memory-kernel macro equation and the micro model.

Conventions used throughout:

* lengths are physical (metres); the reference cell is ``Y = [0, L]^2`` and all
  cell averages are divided by ``|Y|``;
* ``n`` is the membrane normal pointing from the inner to the outer region and
  ``[f] = f_out - f_in``; in particular ``[sigma] = sigma_e - sigma_i``;
* membrane integrals use the lumped (trapezoid) weights of the mesh.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import membrane
from .cell import AffineField, CellSolver, TransmissionProblem, bulk_extension
from .errors import ModelError, SolverError
from .fem import assemble_stiffness, assemble_tensor_stiffness, p1_gradients
from .geometry import (CellGeometry, InterfaceMesh, build_square_mesh, build_tiled_mesh,
                       build_unit_cell_mesh)
from .membrane import MembraneState, ModelParams

N_KERNEL_SAMPLES = 64
KERNEL_SPAN = 5.0


# --------------------------------------------------------------------------------------
# periodic cell problem


def _identification(mesh: InterfaceMesh, merge_membrane: bool):
    """Vertex -> dof map for periodic fields, optionally continuous across the membrane."""
    base = np.arange(mesh.n_vertices)
    if merge_membrane:
        base[mesh.iface_out] = mesh.iface_in
    rep = mesh.periodic_map()[base]
    keep, idx = np.unique(rep, return_inverse=True)
    P = sp.csr_matrix((np.ones(mesh.n_vertices), (np.arange(mesh.n_vertices), idx)),
                      shape=(mesh.n_vertices, len(keep)))
    return P, idx


def _mean_zero(mesh, u):
    w = mesh.vertex_integration_weights()
    return u - (w @ u) / w.sum()


@dataclass
class Chi0:
    """Static correctors ``chi0[h]`` (nodal, metres) and membrane flux traces ``flux[h]`` (S/m)."""

    chi0: np.ndarray
    flux: np.ndarray
    sigma_i: float
    sigma_e: float


def solve_chi0(mesh: InterfaceMesh, sigma_i, sigma_e) -> Chi0:
    """Periodic, mean-zero, membrane-continuous solutions of ``div(sigma(grad chi - e_h)) = 0``.

    The flux trace ``s_h = sigma (grad chi_h - e_h) . n`` is the variationally
    consistent nodal flux: the outer-side residual of the weak form divided by
    the lumped membrane weight.
    """
    K = assemble_stiffness(mesh, sigma_i, sigma_e).matrix
    P, _ = _identification(mesh, merge_membrane=True)
    Kp = (P.T @ K @ P).tocsc()[1:, 1:]
    try:
        lu = spla.splu(Kp)
    except RuntimeError as exc:
        raise SolverError("cell-problem-singular", str(exc)) from exc
    chi = np.empty((2, mesh.n_vertices))
    flux = np.empty((2, mesh.n_interface))
    for h in range(2):
        X = mesh.vertices[:, h]
        rhs = P.T @ (K @ X)
        x = np.concatenate([[0.0], lu.solve(rhs[1:])])
        if not np.all(np.isfinite(x)):
            raise SolverError("cell-problem-singular", f"direction {h}")
        chi[h] = _mean_zero(mesh, P @ x)
        flux[h] = -(K @ (chi[h] - X))[mesh.iface_out] / mesh.interface_weights
    return Chi0(chi, flux, sigma_i, sigma_e)


@dataclass
class PeriodicSteklov:
    """Schur complement of the periodic cell on membrane jumps.

    ``inner_map`` gives the inner-side trace of the (pinned) harmonic extension of
    a jump, so that ``[sigma v] = [sigma] (inner_map @ w) + sigma_e w``.
    """

    S: np.ndarray
    weights: np.ndarray
    inner_map: np.ndarray
    mesh: InterfaceMesh
    sigma_i: float
    sigma_e: float
    _P: sp.csr_matrix
    _Q: sp.csr_matrix
    _lu: object
    _C: sp.csr_matrix

    def extend(self, jumps):
        """Mean-zero periodic nodal fields with the given membrane jumps (columns)."""
        jumps = np.atleast_2d(np.asarray(jumps, dtype=float).T).T
        ut = np.zeros((self._P.shape[1], jumps.shape[1]))
        ut[1:] = -self._lu.solve(np.asarray(self._C @ jumps))
        u = self._P @ ut + self._Q @ jumps
        w = self.mesh.vertex_integration_weights()
        return u - (w @ u) / w.sum()


def periodic_steklov(mesh: InterfaceMesh, sigma_i, sigma_e) -> PeriodicSteklov:
    K = assemble_stiffness(mesh, sigma_i, sigma_e).matrix
    n = mesh.n_vertices
    base = np.arange(n)
    rep = mesh.periodic_map()[base]
    rep[mesh.iface_out] = -1
    keep = np.unique(rep[rep >= 0])
    col = -np.ones(n, dtype=int)
    col[keep] = np.arange(len(keep))
    cols = col[np.where(rep >= 0, rep, 0)]
    cols[mesh.iface_out] = col[mesh.iface_in]
    P = sp.csr_matrix((np.ones(n), (np.arange(n), cols)), shape=(n, len(keep)))
    k = mesh.n_interface
    Q = sp.csr_matrix((np.ones(k), (mesh.iface_out, np.arange(k))), shape=(n, k))
    # the constant mode of u~ is removed by pinning its first dof
    Kt = (P.T @ K @ P).tocsc()[1:, 1:]
    C = (P.T @ K @ Q).tocsr()[1:]
    try:
        lu = spla.splu(Kt)
        X = lu.solve(C.toarray())
    except RuntimeError as exc:
        raise SolverError("schur-failure", str(exc)) from exc
    if not np.all(np.isfinite(X)):
        raise SolverError("schur-failure", "non-finite elimination")
    S = (Q.T @ K @ Q).toarray() - C.T @ X
    S = 0.5 * (S + S.T)
    ut = np.vstack([np.zeros((1, k)), -X])
    inner_map = np.asarray((P @ ut)[mesh.iface_in])
    return PeriodicSteklov(S, mesh.interface_weights, inner_map, mesh, sigma_i, sigma_e,
                           P, Q, lu, C)


# --------------------------------------------------------------------------------------
# linearized relaxation transform


def linearized_conductance(params: ModelParams, t_grid, model="neu_krassowska"):
    """``sigma_m(0, t)`` on ``t_grid``; raises unless it is constant.

    The pore density for a zero voltage history comes from the closed form.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if model == "neu_krassowska":
        N = membrane.pore_closed_form(t_grid, np.zeros(len(t_grid)), params)
    else:
        N = np.full(len(t_grid), membrane.initial_pores(model, 1, params)[0])
    sig = np.asarray(membrane.sigma_m(model, 0.0, N, params), dtype=float) * np.ones(len(t_grid))
    if np.ptp(sig) != 0.0:
        raise ModelError("nonconstant-linearized-membrane", f"spread {np.ptp(sig):.3e}")
    return float(sig[0])


def _uniform_step(t_grid):
    t = np.asarray(t_grid, dtype=float)
    if t[0] != 0.0:
        raise ValueError("time grid must start at 0")
    if len(t) == 1:
        return 0.0
    dt = np.diff(t)
    if np.ptp(dt) > 1e-9 * dt.mean():
        raise ValueError("time grid must be uniform")
    return float(dt.mean())


@dataclass
class TransformResult:
    """``T(s)`` sampled on ``times``: membrane jumps and inner-side traces per sample."""

    times: np.ndarray
    jumps: np.ndarray
    inner: np.ndarray
    steklov: PeriodicSteklov

    def fields(self):
        """Mean-zero nodal fields, shape ``(n_times, n_vertices)``."""
        return self.steklov.extend(self.jumps.T).T

    def sigma_jump(self):
        """``[sigma v] = sigma_e v_out - sigma_i v_in`` at the membrane nodes."""
        st = self.steklov
        return (st.sigma_e - st.sigma_i) * self.inner + st.sigma_e * self.jumps


def transform_T(s, params: ModelParams, t_grid, steklov: PeriodicSteklov,
                delta0=None, method="euler", model="neu_krassowska") -> TransformResult:
    """Periodic relaxation of an initial membrane jump ``s`` under the linearized law.

    ``(c_m/delta0) [v]' + (sigma_m(0)/delta0) [v] = sigma dv/dn`` with a
    harmonic periodic bulk.  ``method="euler"`` uses implicit Euler with the
    grid spacing as step (the same scheme as the cell solver); ``"exact"``
    evaluates the semi-discrete solution through a generalized eigendecomposition.
    """
    delta0 = params.delta if delta0 is None else delta0
    t_grid = np.asarray(t_grid, dtype=float)
    dt = _uniform_step(t_grid)
    sig = linearized_conductance(params, t_grid, model)
    W = steklov.weights
    s = np.asarray(s, dtype=float)
    cap = W * params.c_m / delta0
    stiff = steklov.S + np.diag(W * sig / delta0)
    jumps = np.empty((len(t_grid), len(W)))
    jumps[0] = s
    if method == "euler":
        if len(t_grid) > 1:
            factor = sla.cho_factor(stiff + np.diag(cap / dt))
            for n in range(1, len(t_grid)):
                jumps[n] = sla.cho_solve(factor, cap / dt * jumps[n - 1])
    elif method == "exact":
        lam, phi = sla.eigh(stiff, np.diag(cap))
        coef = phi.T @ (cap * s)
        jumps[:] = (np.exp(-np.outer(t_grid, lam)) * coef) @ phi.T
    else:
        raise ValueError(f"unknown method {method!r}")
    inner = jumps @ steklov.inner_map.T
    return TransformResult(t_grid, jumps, inner, steklov)


def compute_chi1(chi0: Chi0, params: ModelParams, t_grid, steklov: PeriodicSteklov,
                 delta0=None, method="euler"):
    """Memory correctors: ``T`` applied to ``(delta0/c_m) s_h`` for both directions.

    The factor ``delta0/c_m`` converts the flux trace into the jump produced by a
    unit impulse of that flux through the membrane capacitance.
    """
    delta0 = params.delta if delta0 is None else delta0
    return [transform_T(delta0 / params.c_m * chi0.flux[h], params, t_grid, steklov, delta0,
                        method) for h in range(2)]


def kernel_time_scale(steklov: PeriodicSteklov, params: ModelParams, delta0=None):
    """Slowest relaxation time among non-constant membrane modes.

    The constant jump (eigenvalue ``sigma_m(0)/c_m``) is excluded because the
    flux traces have zero membrane mean and never excite it.
    """
    delta0 = params.delta if delta0 is None else delta0
    W = steklov.weights
    sig = params.sigma_m_rest
    lam = sla.eigh(steklov.S + np.diag(W * sig / delta0), np.diag(W * params.c_m / delta0),
                   eigvals_only=True)
    const = sig / params.c_m
    lam = np.delete(lam, np.argmin(np.abs(lam - const)))
    return float(1.0 / lam.min())


def kernel_grid(tau, n=N_KERNEL_SAMPLES, span=KERNEL_SPAN):
    return np.linspace(0.0, span * tau, n)


# --------------------------------------------------------------------------------------
# effective tensors


@dataclass
class EffectiveTensors:
    sigma0: float
    A0: np.ndarray
    t_grid: np.ndarray
    A1: np.ndarray
    F: np.ndarray | None
    volume_fraction: float

    @property
    def effective(self):
        """Instantaneous effective conductivity ``sigma0 I + A0``."""
        return self.sigma0 * np.eye(2) + self.A0

    def write_csv(self, tensor_path, kernel_path):
        from .experiments import eig2x2_symmetric

        l1, l2, _ = eig2x2_symmetric(self.A0)
        with open(tensor_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sigma0", "A0_11", "A0_12", "A0_21", "A0_22", "lam1_A0", "lam2_A0"])
            w.writerow([_fmt(x) for x in (self.sigma0, *self.A0.ravel(), l1, l2)])
        with open(kernel_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t_k", "A1_11", "A1_12", "A1_21", "A1_22"])
            for t, a in zip(self.t_grid, self.A1):
                w.writerow([_fmt(x) for x in (t, *a.ravel())])


def _fmt(x):
    return f"{float(x):.10g}"


def _membrane_moment(mesh: InterfaceMesh, values):
    """``(1/|Y|) int_Gamma values n dS`` for nodal ``values`` of shape ``(..., n_interface)``."""
    return (np.asarray(values) @ mesh.normal_weights) / mesh.area


def effective_tensors(mesh: InterfaceMesh, chi0: Chi0, chi1, params: ModelParams,
                      S1=None, steklov: PeriodicSteklov | None = None) -> EffectiveTensors:
    """``sigma0``, ``A0``, ``A1(t_k)`` and, for a nonzero initial jump ``S1``, ``F(t_k)``.

    ``A0[j, h] = (1/|Y|) int [sigma] chi0_h n_j`` and
    ``A1[j, h](t) = (1/|Y|) int [sigma chi1_h](t) n_j``.
    """
    f = mesh.volume_fraction
    sigma0 = chi0.sigma_i * f + chi0.sigma_e * (1.0 - f)
    jump_sigma = chi0.sigma_e - chi0.sigma_i
    trace = chi0.chi0[:, mesh.iface_in]
    A0 = _membrane_moment(mesh, jump_sigma * trace).T
    t_grid = chi1[0].times
    A1 = np.stack([_membrane_moment(mesh, c.sigma_jump()) for c in chi1], axis=-1)
    F = None
    if S1 is not None and np.any(np.asarray(S1) != 0):
        st = steklov if steklov is not None else chi1[0].steklov
        tS = transform_T(S1, params, t_grid, st)
        F = _membrane_moment(mesh, tS.sigma_jump())
    return EffectiveTensors(float(sigma0), A0, t_grid, A1, F, f)


@dataclass
class CellAnalysis:
    """Everything computed on one reference cell."""

    mesh: InterfaceMesh
    chi0: Chi0
    steklov: PeriodicSteklov
    chi1: list
    tensors: EffectiveTensors
    tau: float


def analyse_cell(geometry: CellGeometry, params: ModelParams, h_target=None, t_grid=None,
                 S1=None, method="euler") -> CellAnalysis:
    """Mesh the reference cell and compute correctors and effective tensors.

    Without ``t_grid`` the kernel is sampled at 64 points over five of the
    slowest membrane relaxation times.
    """
    h_target = geometry.cell_size / 40 if h_target is None else h_target
    mesh = build_unit_cell_mesh(geometry, h_target)
    chi0 = solve_chi0(mesh, params.sigma_i, params.sigma_e)
    st = periodic_steklov(mesh, params.sigma_i, params.sigma_e)
    tau = kernel_time_scale(st, params)
    t_grid = kernel_grid(tau) if t_grid is None else np.asarray(t_grid, dtype=float)
    chi1 = compute_chi1(chi0, params, t_grid, st, method=method)
    s1 = None if S1 is None else S1(mesh)
    tensors = effective_tensors(mesh, chi0, chi1, params, s1, st)
    return CellAnalysis(mesh, chi0, st, chi1, tensors, tau)


# --------------------------------------------------------------------------------------
# macroscopic memory-kernel equation


@dataclass
class MacroSolution:
    mesh: InterfaceMesh
    times: np.ndarray
    u: np.ndarray

    def evaluate(self, points, n=None):
        """Values at ``points`` for every stored time (or time index ``n``)."""
        tri, bary = locate_structured(self.mesh, points)
        nodes = self.mesh.triangles[tri]
        u = self.u if n is None else self.u[n:n + 1]
        vals = np.einsum("tpk,pk->tp", u[:, nodes], bary)
        return vals if n is None else vals[0]


def locate_structured(mesh: InterfaceMesh, points):
    """Triangle index and barycentric coordinates on a :func:`build_square_mesh` grid."""
    pts = np.asarray(points, dtype=float)
    hs = mesh.grid_step
    n = int(round(mesh.extent / hs))
    i = np.clip(np.floor(pts[:, 0] / hs).astype(int), 0, n - 1)
    j = np.clip(np.floor(pts[:, 1] / hs).astype(int), 0, n - 1)
    sq = j * n + i
    fx = pts[:, 0] / hs - i
    fy = pts[:, 1] / hs - j
    upper = fy > fx
    tri = np.where(upper, sq + n * n, sq)
    # lower triangle (a, b, c) = (0,0), (1,0), (1,1); upper (a, c, d) = (0,0), (1,1), (0,1)
    bary = np.where(upper[:, None],
                    np.column_stack([1 - fy, fx, fy - fx]),
                    np.column_stack([1 - fx, fx - fy, fy]))
    return tri, bary


def _check_coercive(B, what):
    lam = np.linalg.eigvalsh(0.5 * (B + B.T))
    if lam.min() <= 0:
        raise SolverError("noncoercive-effective-tensor",
                          f"{what} has eigenvalue {lam.min():.3e}")


def solve_macro(mesh: InterfaceMesh, tensors: EffectiveTensors, boundary_data=None,
                t_grid=None, F_profile=None, scheme="euler") -> MacroSolution:
    """Time-march ``-div(sigma0 grad u + A0 grad u + int_0^t A1(t - s) grad u(s) ds - F) = 0``.

    ``scheme="euler"`` is the convolution quadrature generated by implicit
    Euler, ``sum_{k=1..n} dt A1(t_{n-k+1}) grad u^k``, which matches the time
    discretization of the micro model; ``"trapezoid"`` uses trapezoid weights over
    ``A1(t_n - t_k)``, ``k = 0..n``.  ``F(x, t) = F_profile(x) F(t)`` where
    ``F_profile`` is a callable on points (default: no source).
    """
    t_grid = tensors.t_grid if t_grid is None else np.asarray(t_grid, dtype=float)
    nt = len(t_grid)
    if len(tensors.t_grid) < nt or not np.allclose(tensors.t_grid[:nt], t_grid,
                                                   rtol=1e-9, atol=0):
        raise ValueError("kernel must be sampled on the macro time grid")
    dt = _uniform_step(t_grid)
    boundary_data = AffineField(0.0, 0.0, 0.0) if boundary_data is None else boundary_data
    B0 = tensors.effective
    _check_coercive(B0, "sigma0 I + A0")
    D = [[assemble_tensor_stiffness(mesh, j, h) for h in range(2)] for j in range(2)]

    def stiffness(B):
        return sum(B[j, h] * D[j][h] for j in range(2) for h in range(2))

    bnd = np.asarray(mesh.boundary_vertices)
    free = np.setdiff1d(np.arange(mesh.n_vertices), bnd)
    g = boundary_data(mesh.vertices[bnd])

    load_dirs = None
    if tensors.F is not None and F_profile is not None:
        # int F . grad w = F(t) . int profile grad w, with profile interpolated in P1
        prof = F_profile(mesh.vertices)
        load_dirs = [_grad_load(mesh, prof, j) for j in range(2)]

    def factor(B):
        A = stiffness(B).tocsr()
        return spla.splu(A[free][:, free].tocsc()), A[free][:, bnd] @ g

    lu0, lift0 = factor(B0)
    if scheme == "euler":
        B1 = B0 + dt * tensors.A1[1] if nt > 1 else B0
        weights = None
    elif scheme == "trapezoid":
        B1 = B0 + 0.5 * dt * tensors.A1[0] if nt > 1 else B0
        weights = True
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    _check_coercive(B1, "instantaneous macro tensor")
    lu1, lift1 = factor(B1)

    U = np.zeros((nt, mesh.n_vertices))
    Y = np.zeros((nt, 2, 2, mesh.n_vertices))   # D_jh u^k
    for n in range(nt):
        rhs = np.zeros(mesh.n_vertices)
        if load_dirs is not None:
            rhs += tensors.F[n, 0] * load_dirs[0] + tensors.F[n, 1] * load_dirs[1]
        if n == 0:
            lu, lift = lu0, lift0
        else:
            lu, lift = lu1, lift1
            if weights is None:
                ks = np.arange(1, n)
                kern = tensors.A1[n - ks + 1]
                rhs -= dt * np.einsum("kjh,kjhv->v", kern, Y[ks])
            else:
                ks = np.arange(0, n)
                kern = tensors.A1[n - ks]
                w = np.full(len(ks), dt)
                w[0] = 0.5 * dt
                rhs -= np.einsum("k,kjh,kjhv->v", w, kern, Y[ks])
        x = lu.solve(rhs[free] - lift)
        U[n, free] = x
        U[n, bnd] = g
        for j in range(2):
            for h in range(2):
                Y[n, j, h] = D[j][h] @ U[n]
    return MacroSolution(mesh, t_grid, U)


def _grad_load(mesh: InterfaceMesh, profile, j):
    """``int profile d_j w`` for every P1 basis function ``w`` (profile in P1)."""
    grads, area = p1_gradients(mesh)
    mean = profile[mesh.triangles].mean(axis=1)
    local = grads[:, :, j] * (mean * area)[:, None]
    out = np.zeros(mesh.n_vertices)
    np.add.at(out, mesh.triangles, local)
    return out


# --------------------------------------------------------------------------------------
# micro model and convergence study


@dataclass
class MicroSolution:
    eps: float
    mesh: InterfaceMesh
    times: np.ndarray
    u: np.ndarray
    jump_sq: np.ndarray
    dissipation: np.ndarray
    params: ModelParams

    def energy_lhs(self, c_weight=True):
        """``int_0^t int sigma |grad u|^2 + (1/eps) w int_Gamma [u]^2(t)`` at every sample.

        With ``c_weight`` the membrane term carries ``w = c_m / (2 delta0)``,
        the weight with which it appears in the energy identity
        (``self.params`` holds the scaled thickness ``delta = eps delta0``).
        """
        delta0 = self.params.delta / self.eps
        w = self.params.c_m / (2.0 * delta0) if c_weight else 1.0
        return self.dissipation + w * self.jump_sq / self.eps


def micro_problem(eps, geometry: CellGeometry, params: ModelParams, dt, domain_size=None,
                  h_target=None, boundary_data=None, model="neu_krassowska"):
    domain_size = geometry.cell_size if domain_size is None else domain_size
    mesh = build_tiled_mesh(geometry, eps, domain_size, h_target)
    scaled = params.replace(delta=eps * params.delta)
    bd = AffineField(0.0, 0.0, 0.0) if boundary_data is None else boundary_data
    return TransmissionProblem(mesh, scaled, bd, model, dt, dt)


def solve_micro(eps, geometry: CellGeometry, params: ModelParams, t_grid, S1=None,
                boundary_data=None, domain_size=None, h_target=None,
                model="neu_krassowska") -> MicroSolution:
    """Periodic micro model on ``Omega = [0, domain_size]^2`` with membranes of thickness ``eps delta0``.

    ``S1(mesh)`` returns the order-one initial jump per membrane node; the
    actual initial jump is ``eps * S1``.  Dirichlet data default to zero.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    dt = _uniform_step(t_grid)
    pr = micro_problem(eps, geometry, params, dt if dt > 0 else 1.0, domain_size, h_target,
                       boundary_data, model)
    mesh = pr.mesh
    solver = CellSolver(pr)
    v0 = np.zeros(mesh.n_interface) if S1 is None else eps * np.asarray(S1(mesh), dtype=float)
    state = MembraneState(v0, membrane.initial_pores(model, mesh.n_interface, pr.params), 0.0)
    U = np.empty((len(t_grid), mesh.n_vertices))
    p = pr.params
    if pr.boundary_data.is_zero:
        U[0] = bulk_extension(mesh, p.sigma_i, p.sigma_e, v0[:, None])[:, 0]
    else:
        U[0] = np.nan
    events = []
    for n in range(1, len(t_grid)):
        U[n], state = solver.advance(state, events)
    W = mesh.interface_weights
    jumps = U[:, mesh.iface_out] - U[:, mesh.iface_in]
    jumps[0] = v0
    jump_sq = jumps**2 @ W
    K = solver.K
    grad = np.einsum("tv,tv->t", U, (K @ U.T).T)
    diss = np.concatenate([[0.0], np.cumsum(dt * grad[1:])])
    return MicroSolution(eps, mesh, t_grid, U, jump_sq, diss, p)


def cos_angle_jump(mesh: InterfaceMesh, envelope=None, amplitude=1.0):
    """``S1(x, y) = amplitude * envelope(x) * cos(theta(y))`` at every membrane node."""
    theta = mesh.interface_angles()
    vals = amplitude * np.cos(theta)
    if envelope is not None:
        vals = vals * envelope(mesh.cell_centers[mesh.iface_cell])
    return vals


def sine_envelope(domain_size):
    def g(points):
        pts = np.asarray(points)
        return np.sin(np.pi * pts[:, 0] / domain_size) * np.sin(np.pi * pts[:, 1] / domain_size)
    return g


@dataclass
class ConvergenceResult:
    eps: np.ndarray
    errors: np.ndarray
    macro: MacroSolution
    reference_norm: float


def l1_window_error(micro: MicroSolution, macro: MacroSolution, window):
    """``int_window int_t |u_eps - u_0|`` with centroid quadrature on the micro mesh.

    Time integration uses the rectangle rule over samples ``1..n`` (the
    samples produced by the time stepper).
    """
    (x0, x1), (y0, y1) = window
    mesh = micro.mesh
    cent = mesh.vertices[mesh.triangles].mean(axis=1)
    inside = (cent[:, 0] > x0) & (cent[:, 0] < x1) & (cent[:, 1] > y0) & (cent[:, 1] < y1)
    tri = mesh.triangles[inside]
    area = mesh.triangle_areas[inside]
    dt = micro.times[1] - micro.times[0]
    ue = micro.u[1:, tri].mean(axis=2)
    u0 = macro.evaluate(cent[inside])[1:]
    diff = np.abs(ue - u0) @ area
    norm = np.abs(u0) @ area
    return float(dt * diff.sum()), float(dt * norm.sum())


def convergence_study(geometry: CellGeometry, params: ModelParams, eps_list, t_grid,
                      amplitude=0.02, h_target=None, macro_n=64, window=None,
                      cell: CellAnalysis | None = None) -> ConvergenceResult:
    """L1 distance between micro solutions and the homogenized solution.

    The micro problems use ``S1 = amplitude * g(x) cos(theta(y))`` with
    ``g(x) = sin(pi x1 / L) sin(pi x2 / L)`` on ``Omega = [0, L]^2`` and zero
    Dirichlet data; the window defaults to ``[L/4, 3L/4]^2``.
    """
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    L = geometry.cell_size
    window = ((L / 4, 3 * L / 4), (L / 4, 3 * L / 4)) if window is None else window
    env = sine_envelope(L)
    if cell is None:
        cell = analyse_cell(geometry, params, h_target, t_grid,
                            S1=lambda m: cos_angle_jump(m, amplitude=amplitude))
    macro_mesh = build_square_mesh(L, macro_n)
    macro = solve_macro(macro_mesh, cell.tensors, None, t_grid, F_profile=env)
    errs = []
    ref = 0.0
    for eps in eps_list:
        micro = solve_micro(eps, geometry, params, t_grid,
                            S1=lambda m: cos_angle_jump(m, env, amplitude), h_target=h_target)
        err, ref = l1_window_error(micro, macro, window)
        errs.append(err)
    return ConvergenceResult(np.array(eps_list), np.array(errs), macro, ref)
