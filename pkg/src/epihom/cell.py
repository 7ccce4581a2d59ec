"""Single-cell transmission problem: time stepping, interface reduction and monitors.

Unknowns are the nodal potentials on the doubled-vertex mesh.  The membrane
law ``(c_m/delta) dv/dt + (sigma_m/delta) v = sigma du/dn`` couples the two
copies of each membrane node through the lumped interface mass, so one step
is the sparse SPD solve

    (K + J^T W (c_m/(delta dt) + sigma^n/delta) J) u = J^T W c_m/(delta dt) v^n

with ``sigma^n`` frozen at the previous state and Dirichlet data on the outer
boundary.  The pore density is then advanced with one RK4 step.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import membrane
from .errors import BlowUpDetected, CutoffActiveWarning, SolverError
from .fem import SparseSystem, assemble_stiffness, jump_matrix
from .geometry import InterfaceMesh
from .membrane import MembraneState, ModelParams


@dataclass(frozen=True)
class AffineField:
    """Boundary data ``u0(x, y) = Ex x + Ey y + offset``; affine, hence harmonic."""

    Ex: float = 4e4
    Ey: float = 0.0
    offset: float = 0.0

    def __call__(self, points):
        points = np.asarray(points)
        return self.Ex * points[:, 0] + self.Ey * points[:, 1] + self.offset

    @property
    def is_zero(self):
        return self.Ex == 0 and self.Ey == 0 and self.offset == 0


@dataclass
class TransmissionProblem:
    mesh: InterfaceMesh
    params: ModelParams = field(default_factory=ModelParams)
    boundary_data: AffineField = field(default_factory=AffineField)
    model: str = "neu_krassowska"
    dt: float = 2e-9
    T: float = 2e-6
    use_cutoff: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.model not in membrane.MODELS:
            raise ValueError(f"unknown membrane model {self.model!r}")

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))


@dataclass
class TmpTrace:
    """Time series at the pole plus membrane profiles at the final time."""

    times: np.ndarray
    v_at_pole: np.ndarray
    v_at_equator: np.ndarray
    theta: np.ndarray
    v_profile_final: np.ndarray
    N_profile_final: np.ndarray
    energy_history: np.ndarray
    v_norm_history: np.ndarray
    weights: np.ndarray
    g_norm: float
    events: list = field(default_factory=list)
    v_history: np.ndarray | None = None

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t_s", "v_pole_V", "energy"])
            for row in zip(self.times, self.v_at_pole, self.energy_history):
                w.writerow([_fmt(x) for x in row])

    def write_profile_csv(self, path):
        order = np.argsort(self.theta, kind="stable")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["theta_rad", "v_V", "N_per_m2"])
            for i in order:
                w.writerow([_fmt(self.theta[i]), _fmt(self.v_profile_final[i]),
                            _fmt(self.N_profile_final[i])])


def _fmt(x):
    return f"{float(x):.10g}"


def pole_and_equator(mesh: InterfaceMesh):
    """Membrane nodes with the largest x (field direction) and the largest y."""
    pts = mesh.interface_points
    return int(np.argmax(pts[:, 0])), int(np.argmax(pts[:, 1]))


def effective_conductance(model, v, N, p: ModelParams, use_cutoff=True):
    """Per-node coefficient ``s`` such that the membrane current is ``s * v``.

    With the cutoff, ``sigma_m(v_M) v_M = s v`` with ``s = sigma_m(v_M) v_M / v``;
    the ratio is exactly 1 wherever ``|v| <= M``.
    """
    if not use_cutoff:
        return membrane.sigma_m(model, v, N, p)
    vm = membrane.cutoff(v, p.M)
    ratio = np.ones_like(v)
    big = np.abs(v) > p.M
    ratio[big] = vm[big] / v[big]
    return membrane.sigma_m(model, vm, N, p) * ratio


def _advance_pores(model, v, N, dt, p, use_cutoff):
    drive = membrane.cutoff(v, p.M) if use_cutoff else v
    return membrane.pore_step(model, drive, N, dt, p)


def _note_cutoff(v, M, t, events):
    vmax = float(np.max(np.abs(v))) if len(v) else 0.0
    if vmax > M:
        events.append(("cutoff-active", t, vmax))
        warnings.warn(f"cutoff-active at t={t:.3e}: |v|max={vmax:.3f} V > M={M}",
                      CutoffActiveWarning, stacklevel=3)


class CellSolver:
    """Owns the assembled operators of one :class:`TransmissionProblem`."""

    def __init__(self, problem: TransmissionProblem):
        self.problem = problem
        mesh = problem.mesh
        p = problem.params
        self.K = assemble_stiffness(mesh, p.sigma_i, p.sigma_e).matrix
        self.J = jump_matrix(mesh)
        self.W = mesh.interface_weights
        self.boundary = np.asarray(mesh.boundary_vertices)
        self.g = problem.boundary_data(mesh.vertices[self.boundary])
        free = np.ones(mesh.n_vertices, dtype=bool)
        free[self.boundary] = False
        self.free = np.flatnonzero(free)
        self.K_ff = self.K[self.free][:, self.free].tocsc()
        self.load = -(self.K[self.free][:, self.boundary] @ self.g)
        self.J_f = self.J[:, self.free].tocsc()
        self.pole, self.equator = pole_and_equator(mesh)
        self.capacity = p.c_m / (p.delta * problem.dt)

    def initial_state(self) -> MembraneState:
        p, n = self.problem.params, self.problem.mesh.n_interface
        return MembraneState(np.zeros(n), membrane.initial_pores(self.problem.model, n, p), 0.0)

    def solve_potential(self, state: MembraneState):
        """Nodal potential at the next time level given the current state."""
        pr = self.problem
        p = pr.params
        s = effective_conductance(pr.model, state.v, state.N, p, pr.use_cutoff)
        d = self.W * (self.capacity + s / p.delta)
        A = (self.K_ff + self.J_f.T @ sp.diags(d) @ self.J_f).tocsc()
        rhs = self.load + self.J_f.T @ (self.W * self.capacity * state.v)
        try:
            x = spla.splu(A).solve(rhs)
        except RuntimeError as exc:
            raise SolverError("singular-system", str(exc)) from exc
        u = np.empty(pr.mesh.n_vertices)
        u[self.free] = x
        u[self.boundary] = self.g
        return u

    def advance(self, state: MembraneState, events=None):
        """Potential at the new time level and the updated membrane state."""
        pr = self.problem
        u = self.solve_potential(state)
        v = self.J @ u
        t = state.t + pr.dt
        if pr.use_cutoff:
            _note_cutoff(v, pr.params.M, t, events if events is not None else [])
        N = _advance_pores(pr.model, v, state.N, pr.dt, pr.params, pr.use_cutoff)
        return u, MembraneState(v, N, t)

    def step(self, state: MembraneState, events=None) -> MembraneState:
        return self.advance(state, events)[1]

    def source_norm(self):
        """W-weighted L2 norm of the membrane source ``G`` of the reduced equation."""
        return float(np.sqrt(np.sum(self.W * continuous_source(self) ** 2)))


def continuous_source(solver: CellSolver):
    """Nodal source ``G``: normal current into the membrane for a zero jump."""
    mesh = solver.problem.mesh
    # continuous problem: identify the two copies of every membrane node
    rep = np.arange(mesh.n_vertices)
    rep[mesh.iface_out] = mesh.iface_in
    keep, idx = np.unique(rep, return_inverse=True)
    P = sp.csr_matrix((np.ones(mesh.n_vertices), (np.arange(mesh.n_vertices), idx)),
                      shape=(mesh.n_vertices, len(keep)))
    Kc = (P.T @ solver.K @ P).tocsr()
    bnd = np.unique(idx[solver.boundary])
    gb = np.zeros(len(keep))
    gb[idx[solver.boundary]] = solver.g
    sysm = SparseSystem(Kc, np.zeros(len(keep))).with_dirichlet(bnd, gb[bnd])
    A, b, free = sysm.reduced()
    uc = sysm.expand(spla.splu(A.tocsc()).solve(b))
    u = P @ uc
    return -(solver.K @ u)[mesh.iface_out] / solver.W


def step(problem: TransmissionProblem, state: MembraneState) -> MembraneState:
    return CellSolver(problem).step(state)


def run(problem: TransmissionProblem, keep_history=False) -> TmpTrace:
    solver = CellSolver(problem)
    state = solver.initial_state()
    g_norm = 0.0 if problem.boundary_data.is_zero else solver.source_norm()
    return _integrate(solver.step, state, problem.n_steps, problem.params, solver.W,
                      solver.pole, solver.equator, problem.mesh.interface_angles(),
                      g_norm, keep_history)


def _integrate(advance, state, n_steps, p, W, pole, equator, theta, g_norm, keep_history):
    times = np.empty(n_steps + 1)
    v_pole = np.empty(n_steps + 1)
    v_eq = np.empty(n_steps + 1)
    norms = np.empty(n_steps + 1)
    history = np.empty((n_steps + 1, len(W))) if keep_history else None
    events = []

    def record(i, s):
        times[i] = s.t
        v_pole[i] = s.v[pole]
        v_eq[i] = s.v[equator]
        norms[i] = np.sqrt(np.sum(W * s.v**2))
        if history is not None:
            history[i] = s.v

    record(0, state)
    for i in range(1, n_steps + 1):
        state = advance(state, events)
        if not np.all(np.isfinite(state.v)):
            raise SolverError("non-finite-state", f"at step {i}")
        record(i, state)
    energy = 0.5 * (p.c_m / p.delta) * norms**2
    return TmpTrace(times, v_pole, v_eq, np.asarray(theta), state.v.copy(), state.N.copy(),
                    energy, norms, np.asarray(W), g_norm, events, history)


# --------------------------------------------------------------------------------------
# interface reduction


@dataclass
class SteklovOperator:
    """Dense Schur complement on membrane jumps.

    ``S`` is the stiffness-scaled operator, so ``w @ S @ w`` is the bulk energy
    of the harmonic extension of the jump ``w``; the operator on nodal values
    is ``S / W`` row-wise.
    """

    S: np.ndarray
    weights: np.ndarray
    pole: int = 0
    equator: int = 0
    theta: np.ndarray | None = None

    @property
    def matrix(self):
        return self.S / self.weights[:, None]

    def apply(self, w):
        return (self.S @ w) / self.weights

    def pairing(self, w):
        """``<(S/W) w, w>`` in the W-weighted inner product, i.e. ``w^T S w``."""
        return float(w @ self.S @ w)


def _reduction_maps(mesh: InterfaceMesh):
    n = mesh.n_vertices
    bnd = np.asarray(mesh.boundary_vertices)
    interior = np.ones(n, dtype=bool)
    interior[bnd] = False
    interior[mesh.iface_out] = False
    tilde = np.flatnonzero(interior)
    col = -np.ones(n, dtype=int)
    col[tilde] = np.arange(len(tilde))
    k = mesh.n_interface
    rows = np.concatenate([tilde, mesh.iface_out])
    cols = np.concatenate([np.arange(len(tilde)), col[mesh.iface_in]])
    P = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, len(tilde)))
    Q = sp.csr_matrix((np.ones(k), (mesh.iface_out, np.arange(k))), shape=(n, k))
    R = sp.csr_matrix((np.ones(len(bnd)), (bnd, np.arange(len(bnd)))), shape=(n, len(bnd)))
    return P, Q, R


def discrete_steklov(mesh: InterfaceMesh, sigma_i, sigma_e, boundary_data=None):
    """Eliminate all bulk unknowns, leaving an operator on membrane jumps.

    Writing ``u = P u~ + Q v + R g`` (outer copy = inner copy + jump) and
    minimizing the bulk energy over ``u~`` gives
    ``S = Q^T K Q - C^T K~^-1 C`` and the load ``b``; ``G = b / W``.
    """
    K = assemble_stiffness(mesh, sigma_i, sigma_e).matrix
    P, Q, R = _reduction_maps(mesh)
    boundary_data = AffineField(0.0, 0.0, 0.0) if boundary_data is None else boundary_data
    g = boundary_data(mesh.vertices[mesh.boundary_vertices])
    Kt = (P.T @ K @ P).tocsc()
    C = (P.T @ K @ Q).toarray()
    try:
        lu = spla.splu(Kt)
        X = lu.solve(C)
        Kg = K @ (R @ g)
        y = lu.solve(P.T @ Kg)
    except RuntimeError as exc:
        raise SolverError("schur-failure", str(exc)) from exc
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise SolverError("schur-failure", "non-finite elimination")
    S = (Q.T @ K @ Q).toarray() - C.T @ X
    S = 0.5 * (S + S.T)
    b = -(Q.T @ Kg - C.T @ y)
    W = mesh.interface_weights
    pole, equator = pole_and_equator(mesh)
    op = SteklovOperator(S, W, pole, equator, mesh.interface_angles())
    return op, b / W


def bulk_extension(mesh: InterfaceMesh, sigma_i, sigma_e, jumps):
    """Nodal fields whose membrane jumps are the columns of ``jumps`` (zero boundary data)."""
    K = assemble_stiffness(mesh, sigma_i, sigma_e).matrix
    P, Q, _ = _reduction_maps(mesh)
    lu = spla.splu((P.T @ K @ P).tocsc())
    C = (P.T @ K @ Q)
    return P @ (-lu.solve(np.asarray(C @ jumps))) + Q @ jumps


def run_reduced(op: SteklovOperator, G, params: ModelParams, dt, T, model="neu_krassowska",
                use_cutoff=True, keep_history=False) -> TmpTrace:
    """Integrate ``W (c/delta) v' + W (sigma/delta) v + S v = W G`` with the cell scheme."""
    W = op.weights
    cap = params.c_m / (params.delta * dt)
    n = len(W)
    n_steps = int(round(T / dt))
    state = MembraneState(np.zeros(n), membrane.initial_pores(model, n, params), 0.0)
    b = W * np.asarray(G, dtype=float)

    def advance(s, events):
        sig = effective_conductance(model, s.v, s.N, params, use_cutoff)
        A = op.S + np.diag(W * (cap + sig / params.delta))
        v = np.linalg.solve(A, W * cap * s.v + b)
        t = s.t + dt
        if use_cutoff:
            _note_cutoff(v, params.M, t, events)
        N = _advance_pores(model, v, s.N, dt, params, use_cutoff)
        return MembraneState(v, N, t)

    g_norm = float(np.sqrt(np.sum(W * np.asarray(G) ** 2)))
    theta = op.theta if op.theta is not None else np.zeros(n)
    return _integrate(advance, state, n_steps, params, W, op.pole, op.equator, theta,
                      g_norm, keep_history)


# --------------------------------------------------------------------------------------
# boundedness monitor


@dataclass
class EnergyReport:
    ok: bool
    bound: float
    max_norm: float
    first_violation: int | None
    first_violation_time: float | None
    steady_bound: float


def energy_monitor(trace: TmpTrace, params: ModelParams, margin=0.10, raise_on_violation=False):
    """Check ``||v(t)||_{L2(Gamma)} <= (1 + margin) ||G|| delta / sigma_m0 + ||v(0)||``.

    For the semi-implicit scheme ``||v^{n+1}|| <= max(||v^n||, ||G|| delta / s_min)``
    whenever the membrane conductance stays above ``s_min``; the neu_krassowska
    floor ``s_min = sigma_m0`` gives the bound checked here.
    """
    norms = np.asarray(trace.v_norm_history)
    if norms.size == 0:
        raise ValueError("empty trace")
    steady = trace.g_norm * params.delta / params.sigma_m0
    bound = (1.0 + margin) * steady + norms[0]
    bad = np.flatnonzero(norms > bound)
    first = int(bad[0]) if bad.size else None
    report = EnergyReport(first is None, float(bound), float(norms.max()), first,
                          None if first is None else float(trace.times[first]), float(steady))
    if first is not None and raise_on_violation:
        raise BlowUpDetected(f"||v||={norms[first]:.3e} exceeds bound {bound:.3e} "
                             f"at t={trace.times[first]:.3e}")
    return report
