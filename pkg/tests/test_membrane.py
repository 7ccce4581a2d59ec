import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from epihom.errors import ModelError
from epihom.membrane import (ModelParams, beta_formula, cutoff, initial_pores, pore_closed_form,
                             pore_rhs, pore_step, relaxation_rhs, relaxation_target, sigma_m)

from .oracles import pore_density_rk4

P = ModelParams()
voltages = st.floats(-1.5, 1.5, allow_nan=False)


def test_pore_rhs_examples():
    assert pore_rhs(0.0, P.n0, P) == 0.0
    assert pore_rhs(0.0, 0.0, P) == P.alpha
    expected = P.alpha * np.e * (1.0 - np.exp(-2.46))
    assert pore_rhs(P.v_ep, P.n0, P) == pytest.approx(expected, rel=1e-14)
    assert expected / P.alpha == pytest.approx(2.486, abs=5e-4)


def test_beta_formula_examples():
    assert beta_formula(0.76, 0.0746, 5e-9) == pytest.approx(5.67e-10, rel=2e-3)
    assert beta_formula(0.76, 0.0746, 1e-30) < 1e-30
    assert beta_formula(0.76, 2 * 0.0746, 5e-9) == pytest.approx(2 * beta_formula(0.76, 0.0746, 5e-9),
                                                                 rel=1e-15)
    assert beta_formula(P) == P.beta


def test_default_parameters_give_resting_conductance():
    # beta N0 / delta is the resting electropermeabilization conductance per area
    assert P.beta * P.n0 / P.delta == pytest.approx(0.0328, rel=1e-2)
    assert P.sigma_m0 / P.delta == pytest.approx(1.9)


def test_sigma_m_examples():
    assert sigma_m("neu_krassowska", 0.3, 0.0, P) == P.sigma_m0
    assert sigma_m("static", 0.0, 0.0, P) == P.sigma_m0
    assert sigma_m("neu_krassowska", 0.0, P.n0, P) == P.sigma_m0 + beta_formula(P) * P.n0
    with pytest.raises(ModelError) as exc:
        sigma_m("neu_krassowska", 0.0, np.array([1.0, -1.0]), P)
    assert exc.value.code == "invalid-pore-density"
    with pytest.raises(ValueError):
        sigma_m("bogus", 0.0, 0.0, P)


def test_relaxation_examples():
    assert relaxation_target(P.v_ep, P) == 0.5
    assert relaxation_rhs(0.1, relaxation_target(0.1, P), P) == 0.0
    assert relaxation_rhs(1.0, 0.0, P) == pytest.approx(1.0 / P.tau_ep, rel=1e-12)
    # resealing is slow: the smaller of the two rates applies when the target drops
    assert relaxation_rhs(0.0, 1.0, P) == pytest.approx(-(1.0 - relaxation_target(0.0, P)) / P.tau_res)


def test_cutoff_examples():
    assert cutoff(0.3, 1.0) == 0.3
    assert cutoff(5.0, 1.0) == 1.0
    assert cutoff(-5.0, 1.0) == -1.0


@given(arrays(float, 8, elements=st.floats(-10, 10)), st.floats(0.1, 5.0))
def test_cutoff_idempotent_and_bounded(v, M):
    c = cutoff(v, M)
    assert np.array_equal(cutoff(c, M), c)
    assert np.all(np.abs(c) <= M)
    inside = np.abs(v) <= M
    assert np.array_equal(c[inside], v[inside])


@given(voltages, st.floats(0.0, 1e12))
def test_conductivity_floor(v, N):
    assert sigma_m("neu_krassowska", v, N, P) >= P.sigma_m0


def test_params_validation():
    with pytest.raises(ModelError):
        ModelParams(q=1.0)
    with pytest.raises(ModelError):
        ModelParams(M=0.2)
    with pytest.raises(ModelError):
        ModelParams(delta=-1.0)
    with pytest.raises(ModelError):
        ModelParams(sigma_m0=-1.0)
    assert ModelParams(u_ref=-0.1).u_ref == -0.1
    broken = ModelParams.unchecked(sigma_m0=-1.0)
    assert broken.sigma_m0 == -1.0 and broken.q == P.q


def test_equilibrium_preserved_by_rk4_steps():
    N = initial_pores("neu_krassowska", 5, P)
    for _ in range(1000):
        N = pore_step("neu_krassowska", np.zeros(5), N, 2e-9, P)
    assert np.abs(N - P.n0).max() <= 1e-12 * P.n0


def test_closed_form_zero_history():
    t = np.linspace(0.0, 10.0, 101)
    N = pore_closed_form(t, np.zeros((101, 3)), P)
    assert np.abs(N - P.n0).max() <= 1e-12 * P.n0
    assert pore_closed_form(t, np.zeros(101), P, t=3.3) == pytest.approx(P.n0, rel=1e-12)


def test_closed_form_constant_voltage_converges():
    c = 0.1
    t = np.linspace(0.0, 60.0, 60001)
    N = pore_closed_form(t, np.full(len(t), c), P)
    N_inf = P.n0 * np.exp(P.q * (c / P.v_ep) ** 2)
    assert N[-1] == pytest.approx(N_inf, rel=1e-6)
    assert np.all(np.diff(N) >= -1e-12 * N_inf)


def test_closed_form_overflow_branch_matches():
    # a long history at high voltage drives the decay exponent past the direct-evaluation limit
    t = np.linspace(0.0, 1000.0, 200001)
    v = np.full(len(t), 0.05)
    N = pore_closed_form(t, v, P)
    N_inf = P.n0 * np.exp(P.q * (0.05 / P.v_ep) ** 2)
    assert np.isfinite(N).all()
    assert N[-1] == pytest.approx(N_inf, rel=1e-6)
    # the step-by-step evaluation reproduces the direct trapezoid sums
    short = pore_closed_form(t[:20001], v[:20001], P)
    assert np.abs(short - N[:20001]).max() <= 1e-12 * N_inf


def test_closed_form_matches_rk4_oracle(rng):
    knots = np.linspace(0.0, 1.0, 9)
    values = rng.uniform(-0.5, 0.5, len(knots))
    t = np.linspace(0.0, 1.0, 200001)
    N = pore_closed_form(t, np.interp(t, knots, values), P)
    ref = pore_density_rk4(knots, values, P)
    at_knots = N[np.searchsorted(t, knots)]
    assert np.abs(at_knots - ref).max() / ref.max() <= 1e-6


def test_closed_form_no_history():
    with pytest.raises(ModelError) as exc:
        pore_closed_form(np.zeros(0), np.zeros(0), P)
    assert exc.value.code == "no-history"


def test_closed_form_single_sample():
    assert np.array_equal(pore_closed_form([0.0], [0.4], P), [P.n0])


@settings(max_examples=25, deadline=None)
@given(arrays(float, 6, elements=st.floats(-1.0, 1.0)))
def test_closed_form_positive(values):
    t = np.linspace(0.0, 1.0, 2001)
    N = pore_closed_form(t, np.interp(t, np.linspace(0.0, 1.0, 6), values), P)
    assert np.all(N > 0)


@given(arrays(float, 4, elements=st.floats(-1.2, 1.2)))
def test_cutoff_branch_bit_identical_below_M(v):
    N = np.full(4, P.n0)
    assert np.array_equal(pore_step("neu_krassowska", cutoff(v, P.M), N, 2e-9, P),
                          pore_step("neu_krassowska", v, N, 2e-9, P))


def test_static_model_has_no_pore_dynamics():
    N = initial_pores("static", 3, P)
    assert np.array_equal(pore_step("static", np.ones(3), N, 1e-3, P), N)
    assert sigma_m("static", 0.1, N, P) == pytest.approx(P.sigma_m0 + P.K * (np.exp(1.5) - 1))
