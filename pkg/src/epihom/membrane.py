"""Membrane conductivity laws and pore-density dynamics."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import ModelError

MODELS = ("static", "neu_krassowska", "relaxation")


def beta_formula(r_p, sigma_p=None, delta=None):
    """Conductance contributed per unit pore density: ``2 pi r_p^2 sigma_p delta / (pi r_p + 2 delta)``.

    Accepts either the three raw inputs or a :class:`ModelParams`.
    """
    if isinstance(r_p, ModelParams):
        r_p, sigma_p, delta = r_p.r_p, r_p.sigma_p, r_p.delta
    return 2.0 * np.pi * r_p**2 * sigma_p * delta / (np.pi * r_p + 2.0 * delta)


@dataclass(frozen=True)
class ModelParams:
    """Physical constants in SI units.

    The pore radius is stored in metres (0.76 nm).  ``q``, ``sigma_m0``, the
    static-model constants and the relaxation-model constants are not part of
    the published parameter table; the defaults are literature-typical values.
    """

    sigma_i: float = 0.455          # S/m
    sigma_e: float = 5.0            # S/m
    L: float = 2e-4                 # m, unit-cell size
    r: float = 0.5e-4               # m, cell radius
    delta: float = 5e-9             # m, membrane thickness
    r_p: float = 0.76e-9            # m, pore radius
    sigma_p: float = 0.0746         # S/m, pore conductivity
    v_ep: float = 0.258             # V
    alpha: float = 1e9              # 1/(m^2 s)
    n0: float = 1.5e9               # 1/m^2
    c_m: float = 9.5e-12            # F/m (c_m/delta is the areal capacitance)
    q: float = 2.46
    sigma_m0: float = 9.5e-9        # S/m (1.9 S/m^2 surface conductance times delta)
    M: float = 1.5                  # V, cutoff level
    u_ref: float = 0.0              # V
    K: float = 1e-12                # S/m, static model
    beta_exp: float = 15.0          # 1/V, static model
    tau_ep: float = 1e-6            # s
    tau_res: float = 60.0           # s
    k_ep: float = 40.0              # 1/V
    beta_relax: float = 1.25        # S/m, relaxation-model conductance at full permeabilization

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name in ("u_ref", "K", "sigma_m0"):
                continue
            if not value > 0:
                raise ModelError("invalid-params", f"{f.name} must be positive, got {value}")
        if self.K < 0 or self.sigma_m0 < 0:
            raise ModelError("invalid-params", "K and sigma_m0 must be >= 0")
        if self.q <= 1:
            raise ModelError("invalid-params", "q must exceed 1")
        if self.M <= self.v_ep:
            raise ModelError("invalid-params", "cutoff M must exceed v_ep")

    @property
    def beta(self):
        return beta_formula(self.r_p, self.sigma_p, self.delta)

    @property
    def sigma_m_rest(self):
        """Neu-Krassowska conductivity at zero voltage, ``sigma_m0 + beta N0``."""
        return self.sigma_m0 + self.beta * self.n0

    def replace(self, **changes):
        return replace(self, **changes)

    def as_dict(self):
        return asdict(self)

    @classmethod
    def unchecked(cls, **values):
        """Instance that skips validation; used to build deliberately broken cases."""
        obj = object.__new__(cls)
        for f in fields(cls):
            object.__setattr__(obj, f.name, values.get(f.name, f.default))
        return obj


@dataclass
class MembraneState:
    v: np.ndarray
    N: np.ndarray
    t: float = 0.0


def pore_rhs(v, N, p: ModelParams):
    x = (np.asarray(v) / p.v_ep) ** 2
    return p.alpha * np.exp(x) * (1.0 - (N / p.n0) * np.exp(-p.q * x))


def relaxation_target(v, p: ModelParams):
    return 0.5 * (1.0 + np.tanh(p.k_ep * (np.abs(v) - p.v_ep)))


def relaxation_rhs(v, N, p: ModelParams):
    gap = relaxation_target(v, p) - N
    return np.maximum(gap / p.tau_ep, gap / p.tau_res)


def cutoff(v, M):
    return np.clip(v, -M, M)


def sigma_m(model, v, N, p: ModelParams):
    if model == "static":
        return p.sigma_m0 + p.K * (np.exp(p.beta_exp * np.asarray(v)) - 1.0)
    if model == "neu_krassowska":
        if np.any(np.asarray(N) < 0):
            raise ModelError("invalid-pore-density", "negative pore density")
        return p.sigma_m0 + p.beta * N
    if model == "relaxation":
        return p.sigma_m0 + p.beta_relax * N
    raise ValueError(f"unknown membrane model {model!r}")


def initial_pores(model, n, p: ModelParams):
    if model == "neu_krassowska":
        return np.full(n, p.n0)
    if model == "relaxation":
        return np.full(n, float(relaxation_target(0.0, p)))
    return np.zeros(n)


def pore_step(model, v, N, dt, p: ModelParams):
    """One classical RK4 step of the pore dynamics with ``v`` frozen over the step."""
    if model == "static":
        return N
    rhs = pore_rhs if model == "neu_krassowska" else relaxation_rhs
    k1 = rhs(v, N, p)
    k2 = rhs(v, N + 0.5 * dt * k1, p)
    k3 = rhs(v, N + 0.5 * dt * k2, p)
    k4 = rhs(v, N + dt * k3, p)
    return N + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def pore_closed_form(times, v_history, p: ModelParams, t=None):
    """Pore density from the variation-of-constants representation.

    ``v_history`` has shape ``(n_times,)`` or ``(n_times, n_nodes)``.  With
    ``a = (alpha/N0) exp((1-q) x)``, ``b = alpha exp(x)``, ``x = (v/V_ep)^2`` and
    ``A = int a``, the representation ``exp(-A) (N0 + int b exp(A))`` is evaluated
    as ``N0 + exp(-A) int (b - N0 a) exp(A)`` (using ``int a exp(A) = exp(A) - 1``),
    so a zero history returns ``N0`` exactly.  Both remaining integrals use the
    composite trapezoid rule on ``times``.  Returns ``N`` on every sample, or at
    time ``t`` when given.
    """
    times = np.asarray(times, dtype=float)
    v = np.asarray(v_history, dtype=float)
    if times.size == 0 or v.shape[0] == 0:
        raise ModelError("no-history", "empty voltage history")
    if t is not None:
        if t < times[0] or t > times[-1]:
            raise ValueError("t outside the sampled history")
        keep = times < t
        tail = np.array([_interp_rows(times, v, t)])
        times = np.concatenate([times[keep], [t]])
        v = np.concatenate([v[keep], tail])
    if times.size == 1:
        N = np.full(v.shape, p.n0)
        return N[-1] if t is not None else N
    x = (v / p.v_ep) ** 2
    decay = (p.alpha / p.n0) * np.exp((1.0 - p.q) * x)
    excess = p.alpha * np.exp(x) * (1.0 - np.exp(-p.q * x))
    A = cumulative_trapezoid(decay, times, axis=0, initial=0.0)
    if A.max() < 600.0:
        inner = cumulative_trapezoid(excess * np.exp(A), times, axis=0, initial=0.0)
        N = p.n0 + np.exp(-A) * inner
    else:
        N = p.n0 + _recursive(times, A, excess)
    return N[-1] if t is not None else N


def _interp_rows(times, v, t):
    if v.ndim == 1:
        return np.interp(t, times, v)
    return np.array([np.interp(t, times, v[:, j]) for j in range(v.shape[1])])


def _recursive(times, A, source):
    # same trapezoid sums as the closed form, evaluated without overflow
    N = np.empty_like(source)
    N[0] = 0.0
    for i in range(1, len(times)):
        damp = np.exp(-(A[i] - A[i - 1]))
        dt = times[i] - times[i - 1]
        N[i] = damp * N[i - 1] + 0.5 * dt * (damp * source[i - 1] + source[i])
    return N
