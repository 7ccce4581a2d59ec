"""Independent reference implementations used only by the tests."""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla


def pore_rhs(v, N, p):
    x = (v / p.v_ep) ** 2
    return p.alpha * np.exp(x) * (1.0 - N / p.n0 * np.exp(-p.q * x))


def _rk4(f, t, y, h):
    k1 = f(t, y)
    k2 = f(t + h / 2, y + h / 2 * k1)
    k3 = f(t + h / 2, y + h / 2 * k2)
    k4 = f(t + h, y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def rk4_adaptive(f, t0, t1, y0, rtol=1e-12, h0=None):
    """Classical RK4 with step-doubling error control, ending exactly at ``t1``."""
    t, y = t0, float(y0)
    h = (t1 - t0) / 8 if h0 is None else h0
    while t < t1:
        h = min(h, t1 - t)
        full = _rk4(f, t, y, h)
        half = _rk4(f, t + h / 2, _rk4(f, t, y, h / 2), h / 2)
        err = abs(half - full) / 15
        if err <= rtol * max(abs(half), 1.0) or h < 1e-14 * (t1 - t0):
            t, y = t + h, half + (half - full) / 15
            h *= 1.5
        else:
            h *= 0.5
    return y


def pore_density_rk4(knots, values, p, rtol=1e-12):
    """Pore density at every knot of a piecewise-linear voltage history."""
    out = [p.n0]
    for (ta, tb), (va, vb) in zip(zip(knots[:-1], knots[1:]), zip(values[:-1], values[1:])):
        slope = (vb - va) / (tb - ta)

        def f(t, N, ta=ta, va=va, slope=slope):
            return pore_rhs(va + slope * (t - ta), N, p)

        out.append(rk4_adaptive(f, ta, tb, out[-1], rtol))
    return np.array(out)


def linear_membrane_trajectory(S, W, c, s, G, dt, n_steps):
    """Implicit-Euler solution of ``W c v' + W s v + S v = W G`` by modal decomposition.

    ``c`` and ``s`` are areal capacitance and conductance (already divided by
    the membrane thickness).  Exact up to round-off for the discrete scheme.
    """
    A = S + np.diag(W * s)
    Mc = np.diag(W * c)
    lam, phi = sla.eigh(A, Mc)
    v_inf = np.linalg.solve(A, W * G)
    coef = phi.T @ Mc @ (0.0 - v_inf)
    amp = (1.0 / (1.0 + lam * dt))[None, :] ** np.arange(n_steps + 1)[:, None]
    return v_inf + (amp * coef) @ phi.T
