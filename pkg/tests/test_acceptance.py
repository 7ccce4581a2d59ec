"""End-to-end acceptance checks, one test per criterion.

Each test reports a PASS/FAIL line (collected in the terminal summary) and
then asserts at the stated tolerance.
"""
import time

import numpy as np
import pytest
import yaml

from epihom.cell import (AffineField, CellSolver, TransmissionProblem, discrete_steklov,
                         energy_monitor, run, run_reduced)
from epihom.cli import main
from epihom.experiments import anisotropy_ratio, eig2x2_symmetric
from epihom.geometry import CellGeometry, build_tiled_mesh, build_unit_cell_mesh
from epihom.homogenization import (analyse_cell, convergence_study, cos_angle_jump,
                                   solve_micro)
from epihom.membrane import ModelParams, initial_pores, pore_closed_form, pore_step

from .oracles import pore_density_rk4

P = ModelParams()
TABLE1_CIRCLE = CellGeometry.circle(5e-5)


def test_01_pore_density_equilibrium(criterion):
    t0 = time.perf_counter()
    N = initial_pores("neu_krassowska", 64, P)
    drift = 0.0
    for _ in range(1000):
        N = pore_step("neu_krassowska", np.zeros(64), N, 2e-9, P)
        drift = max(drift, np.abs(N - P.n0).max())
    t = np.linspace(0.0, 2e-6, 1001)
    drift = max(drift, np.abs(pore_closed_form(t, np.zeros((1001, 64)), P) - P.n0).max())
    mesh = build_unit_cell_mesh(TABLE1_CIRCLE, 1e-5)
    solver = CellSolver(TransmissionProblem(mesh, P, AffineField(0.0), dt=2e-9, T=2e-7))
    state = solver.initial_state()
    for _ in range(100):
        state = solver.step(state)
        drift = max(drift, np.abs(state.N - P.n0).max())
    elapsed = time.perf_counter() - t0
    criterion(1, "pore-density equilibrium", drift <= 1e-12 * P.n0 and elapsed < 1.0,
              f"drift {drift / P.n0:.1e} N0, {elapsed:.2f} s")


def test_02_closed_form_vs_rk4(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    knots = np.linspace(0.0, 1.0, 9)
    histories = rng.uniform(-0.5, 0.5, (50, len(knots)))
    t = np.linspace(0.0, 1.0, 200001)
    samples = np.column_stack([np.interp(t, knots, h) for h in histories])
    N = pore_closed_form(t, samples, P)[np.searchsorted(t, knots)]
    worst = 0.0
    for j, h in enumerate(histories):
        ref = pore_density_rk4(knots, h, P)
        worst = max(worst, np.max(np.abs(N[:, j] - ref) / ref))
    elapsed = time.perf_counter() - t0
    criterion(2, "closed form vs RK4", worst <= 1e-6 and elapsed < 10.0,
              f"max relative error {worst:.2e} over 50 histories, {elapsed:.1f} s")


@pytest.fixture(scope="module")
def mesh_3k():
    return build_unit_cell_mesh(TABLE1_CIRCLE, 3.5e-6)


def test_03_reduction_equivalence(criterion, mesh_3k):
    t0 = time.perf_counter()
    pr = TransmissionProblem(mesh_3k, P, AffineField(), dt=2e-9, T=2e-6)
    full = run(pr, keep_history=True)
    op, G = discrete_steklov(mesh_3k, P.sigma_i, P.sigma_e, AffineField())
    red = run_reduced(op, G, P, 2e-9, 2e-6, keep_history=True)
    W = op.weights
    diff = np.sqrt(((full.v_history - red.v_history) ** 2) @ W)
    ref = np.sqrt((full.v_history ** 2) @ W)
    worst = float(np.max(diff[1:] / ref[1:]))
    elapsed = time.perf_counter() - t0
    criterion(3, "reduction equivalence",
              worst <= 1e-8 and pr.n_steps == 1000 and elapsed < 120.0,
              f"{mesh_3k.n_vertices} dofs, {pr.n_steps} steps, max rel diff {worst:.1e}, "
              f"{elapsed:.1f} s")


def test_04_discrete_accretivity(criterion, mesh_3k):
    op, _ = discrete_steklov(mesh_3k, P.sigma_i, P.sigma_e)
    rng = np.random.default_rng(7)
    W = op.weights
    worst = min(op.pairing(w) / (w @ (W * w)) for w in rng.standard_normal((100, len(W))))
    # <(S/W) w, w>_W / ||w||^2 with ||.|| the L2(Gamma) norm
    criterion(4, "discrete accretivity", worst >= -1e-10,
              f"min <Lambda w, w>/||w||^2 = {worst:.3e} over 100 vectors")


def test_05_no_blow_up_and_trace_shape(criterion):
    mesh = build_unit_cell_mesh(TABLE1_CIRCLE, TABLE1_CIRCLE.cell_size / 40)
    trace = run(TransmissionProblem(mesh, P, AffineField(4e4), dt=2e-9, T=2e-6))
    report = energy_monitor(trace, P)
    v = trace.v_at_pole
    monotone = bool(np.all(np.diff(v) >= 0))
    tail = v[int(0.75 * (len(v) - 1)):]
    saturated = np.ptp(tail) <= 0.02 * abs(v[-1])
    ordered = v[-1] > trace.v_at_equator[-1]
    peak = int(np.argmax(v))
    detail = (f"energy bound {'ok' if report.ok else 'violated'} "
              f"(max {report.max_norm:.3g} <= {report.bound:.3g}); "
              f"monotone rise {'yes' if monotone else 'no'} (peak {v[peak]:.3f} V at "
              f"{trace.times[peak] * 1e6:.3f} us, final {v[-1]:.3f} V); "
              f"saturated {'yes' if saturated else 'no'}; pole {v[-1]:.3f} V > equator "
              f"{trace.v_at_equator[-1]:.2e} V {'yes' if ordered else 'no'}")
    criterion(5, "no blow-up / trace shape",
              report.ok and monotone and saturated and ordered, detail)


def test_06_sigma0_formula(criterion):
    cell = analyse_cell(TABLE1_CIRCLE, P, t_grid=[0.0])
    f = cell.mesh.volume_fraction
    formula = P.sigma_i * f + P.sigma_e * (1 - f)
    exact_f = P.sigma_i * np.pi / 16 + P.sigma_e * (1 - np.pi / 16)
    ok = (abs(cell.tensors.sigma0 - formula) <= 1e-12 * formula
          and abs(exact_f - 4.108) < 5e-4
          and abs(cell.tensors.sigma0 - exact_f) <= 1e-3 * exact_f)
    criterion(6, "sigma0 formula", ok,
              f"sigma0 {cell.tensors.sigma0:.6f} (mesh f {f:.5f}), f = pi/16 gives {exact_f:.6f}")


def test_07_isotropy(criterion):
    cell = analyse_cell(TABLE1_CIRCLE, P, t_grid=[0.0])
    r0, _ = anisotropy_ratio(cell.tensors.A0, cell.tensors.sigma0)
    r1, _ = anisotropy_ratio(cell.tensors.A1[0], cell.tensors.sigma0 / cell.tau)
    criterion(7, "isotropy of a circular cell", 0.99 <= r0 <= 1.01 and 0.99 <= r1 <= 1.01,
              f"A0 ratio {r0:.6f}, A1(0) ratio {r1:.6f}")


def test_08_rotation_equivariance(criterion):
    A = {}
    for phi in (0.0, np.pi / 6, np.pi / 3):
        geom = CellGeometry.from_fraction(0.1, 2.0, phi=phi)
        A[phi] = analyse_cell(geom, P, t_grid=[0.0]).tensors.A0
    A0 = A[0.0]
    lam0 = np.array(eig2x2_symmetric(A0)[:2])
    devs, eig_devs = [], []
    for phi in (np.pi / 6, np.pi / 3):
        R = np.array([[np.cos(phi), -np.sin(phi)], [np.sin(phi), np.cos(phi)]])
        devs.append(np.linalg.norm(A[phi] - R @ A0 @ R.T) / np.linalg.norm(A0))
        lam = np.array(eig2x2_symmetric(A[phi])[:2])
        eig_devs.append(np.max(np.abs(lam - lam0) / np.abs(lam0)))
    criterion(8, "rotation equivariance (a/b = 2, f = 0.1)",
              max(devs) <= 0.02 and max(eig_devs) <= 0.02,
              f"tensor deviation {max(devs):.2%}, eigenvalue deviation {max(eig_devs):.2%}")


def test_09_shape_sensitivity(criterion):
    ratios = []
    for ab in (1.0, 2.0, 4.0):
        T = analyse_cell(CellGeometry.from_fraction(0.1, ab), P, t_grid=[0.0]).tensors
        ratios.append(anisotropy_ratio(T.A0, T.sigma0)[0])
    criterion(9, "shape sensitivity", bool(np.all(np.diff(ratios) > 0)),
              "A0 ratios " + ", ".join(f"{r:.3f}" for r in ratios) + " for a/b = 1, 2, 4")


def test_10_volume_fraction_flatness(criterion):
    ratios = []
    for f in (0.1, 0.2, 0.3):
        T = analyse_cell(CellGeometry.from_fraction(f), P, t_grid=[0.0]).tensors
        ratios.append(anisotropy_ratio(T.A0, T.sigma0)[0])
    worst = max(abs(r - 1) for r in ratios)
    criterion(10, "volume-fraction flatness", worst <= 0.02,
              "A0 ratios " + ", ".join(f"{r:.6f}" for r in ratios) + " for f = 0.1, 0.2, 0.3")


def test_11_micro_energy_estimates(criterion):
    t0 = time.perf_counter()
    t_grid = np.arange(41) * 2e-8
    sup, jumps = {}, {}
    for eps in (1.0, 0.5, 0.25):
        sol = solve_micro(eps, TABLE1_CIRCLE, P, t_grid,
                          S1=lambda m: cos_angle_jump(m, amplitude=0.02), h_target=1e-5)
        sup[eps] = sol.energy_lhs().max()
        jumps[eps] = sol.jump_sq / eps
    bounded = all(sup[e] <= 1.05 * sup[1.0] for e in sup)
    J = np.vstack(list(jumps.values()))
    spread = float(np.max(J.max(axis=0) / J.min(axis=0)))
    elapsed = time.perf_counter() - t0
    criterion(11, "micro energy estimates", bounded and spread <= 2.0 and elapsed < 600,
              "sup LHS " + ", ".join(f"{sup[e]:.4e}" for e in sup)
              + f"; jump/eps spread {spread:.3f}; {elapsed:.1f} s")


def test_12_homogenization_convergence(criterion):
    t0 = time.perf_counter()
    res = convergence_study(TABLE1_CIRCLE, P, [0.5, 0.25, 0.125], np.arange(41) * 2e-8,
                            amplitude=0.02, h_target=1e-5)
    elapsed = time.perf_counter() - t0
    decreasing = bool(np.all(np.diff(res.errors) < 0))
    criterion(12, "homogenization convergence", decreasing and elapsed < 1800,
              "L1 errors " + ", ".join(f"{e:.3e}" for e in res.errors)
              + f" for eps = 1/2, 1/4, 1/8; {elapsed:.1f} s")


def test_13_determinism(criterion, tmp_path):
    configs = {
        "sweep": {"experiment": "excentricity", "output_dir": "out", "values": [1.0, 2.0],
                  "h_target_m": 1e-5},
        "demo": {"experiment": "single_cell", "output_dir": "out", "h_target_m": 1e-5,
                 "single_cell": {"T_s": 1e-7}},
        "conv": {"experiment": "convergence", "output_dir": "out", "values": [0.5],
                 "h_target_m": 1e-5, "convergence": {"n_steps": 4, "macro_cells": 16}},
    }
    identical, compared = True, 0
    for name, data in configs.items():
        outputs = []
        for k in range(2):
            d = tmp_path / f"{name}{k}"
            d.mkdir()
            cfg = d / "config.yaml"
            cfg.write_text(yaml.safe_dump(data))
            assert main(["run", str(cfg)]) == 0
            outputs.append({p.name: p.read_bytes() for p in sorted((d / "out").glob("*.csv"))})
        compared += len(outputs[0])
        identical &= outputs[0] == outputs[1] and len(outputs[0]) > 0
    criterion(13, "determinism", identical, f"{compared} CSV files byte-identical across runs")
