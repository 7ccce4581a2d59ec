"""Sensitivity sweeps, the single-cell demonstration and the convergence experiment."""
from __future__ import annotations

import csv
import json
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .cell import AffineField, TransmissionProblem, energy_monitor, run
from .config import SweepSpec
from .errors import ConfigError, EpihomError
from .geometry import build_unit_cell_mesh
from .homogenization import analyse_cell, convergence_study
from .plotting import line_plot

WORKERS_ENV = "EPIHOM_WORKERS"
DEGENERATE_TOL = 1e-10

SWEEP_COLUMNS = ["value", "status", "sigma0", "lam1_A0", "lam2_A0", "ratio_A0",
                 "degenerate_A0", "lam1_A1_0", "lam2_A1_0", "ratio_A1_0", "degenerate_A1_0"]

AXIS_LABELS = {
    "conductivity_ratio": "sigma_i / sigma_e",
    "excentricity": "a / b",
    "volume_fraction": "volume fraction f",
    "lattice_angle": "lattice angle phi [rad]",
}


def eig2x2_symmetric(m):
    """Closed-form eigenpairs of a symmetric 2x2 matrix, ``l1 >= l2``.

    The matrix is symmetrized first.  Eigenvectors are the columns of the
    returned array, normalized, with their first nonzero component positive.
    """
    m = np.asarray(m, dtype=float)
    a, d = m[0, 0], m[1, 1]
    b = 0.5 * (m[0, 1] + m[1, 0])
    mean = 0.5 * (a + d)
    rad = np.hypot(0.5 * (a - d), b)
    l1, l2 = mean + rad, mean - rad
    if b != 0.0:
        v1 = np.array([l1 - d, b]) if a >= d else np.array([b, l1 - a])
        v1 /= np.hypot(v1[0], v1[1])
    else:
        v1 = np.array([1.0, 0.0]) if a >= d else np.array([0.0, 1.0])
    v2 = np.array([-v1[1], v1[0]])
    vecs = np.column_stack([_sign_fix(v1), _sign_fix(v2)])
    return float(l1), float(l2), vecs


def _sign_fix(v):
    nz = np.flatnonzero(v != 0.0)
    return -v if nz.size and v[nz[0]] < 0 else v


def anisotropy_ratio(m, scale):
    """``|lambda|_max / |lambda|_min`` of a symmetric 2x2 tensor and a degeneracy flag.

    A tensor with norm below ``1e-10 * scale`` has no meaningful anisotropy; it
    is reported as ratio 1 with the flag set.
    """
    l1, l2, _ = eig2x2_symmetric(m)
    if np.linalg.norm(m) < DEGENERATE_TOL * abs(scale):
        return 1.0, True
    lo, hi = sorted((abs(l1), abs(l2)))
    return (float(hi / lo) if lo > 0 else float("inf")), False


@dataclass
class PointRecord:
    value: float
    status: str = "ok"
    sigma0: float | None = None
    lam_A0: tuple = (None, None)
    ratio_A0: float | None = None
    degenerate_A0: bool = False
    lam_A1: tuple = (None, None)
    ratio_A1: float | None = None
    degenerate_A1: bool = False
    wall_time: float = 0.0

    def row(self):
        def f(x):
            return "" if x is None else f"{x:.10g}"
        return [f(self.value), self.status, f(self.sigma0), f(self.lam_A0[0]), f(self.lam_A0[1]),
                f(self.ratio_A0), str(int(self.degenerate_A0)), f(self.lam_A1[0]),
                f(self.lam_A1[1]), f(self.ratio_A1), str(int(self.degenerate_A1))]


@dataclass
class SweepResult:
    spec: SweepSpec | None
    records: list = field(default_factory=list)
    wall_time: float = 0.0


def sweep_point(spec: SweepSpec, value) -> PointRecord:
    t0 = time.perf_counter()
    rec = PointRecord(float(value))
    try:
        geom = spec.geometry_for(value)
        params = spec.params_for(value)
        cell = analyse_cell(geom, params, spec.h_target, t_grid=np.zeros(1))
        T = cell.tensors
        rec.sigma0 = T.sigma0
        rec.lam_A0 = eig2x2_symmetric(T.A0)[:2]
        rec.ratio_A0, rec.degenerate_A0 = anisotropy_ratio(T.A0, T.sigma0)
        rec.lam_A1 = eig2x2_symmetric(T.A1[0])[:2]
        rec.ratio_A1, rec.degenerate_A1 = anisotropy_ratio(T.A1[0], T.sigma0 / cell.tau)
    except EpihomError as exc:
        rec.status = f"failed:{exc.code}"
    rec.wall_time = time.perf_counter() - t0
    return rec


def _sweep_job(args):
    spec, value = args
    return sweep_point(spec, value)


def worker_count():
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError("config-invalid", f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("config-invalid", f"{WORKERS_ENV} must be >= 1")
    return n


def run_sweep(spec: SweepSpec, workers=None) -> SweepResult:
    """Effective tensors for every swept value, in input order."""
    workers = worker_count() if workers is None else workers
    t0 = time.perf_counter()
    jobs = [(spec, v) for v in spec.values]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_sweep_job, jobs))
    else:
        records = [_sweep_job(j) for j in jobs]
    return SweepResult(spec, records, time.perf_counter() - t0)


def write_sweep_csv(result: SweepResult, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for rec in result.records:
            w.writerow(rec.row())


def _versions():
    import matplotlib
    import scipy
    import yaml

    return {"epihom": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__,
            "matplotlib": matplotlib.__version__, "pyyaml": yaml.__version__}


def write_manifest(path, spec: SweepSpec | None, wall_times, extra=None):
    data = {
        "config_hash": None if spec is None else spec.config_hash(),
        "experiment": None if spec is None else spec.experiment,
        "versions": _versions(),
        "wall_times_s": wall_times,
    }
    if extra:
        data.update(extra)
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _prepare(out_dir):
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from exc
    return out


def emit_outputs(result: SweepResult, out_dir):
    """``sweep.csv``, one SVG per result column and ``manifest.json``."""
    out = _prepare(out_dir)
    write_sweep_csv(result, out / "sweep.csv")
    ok = [r for r in result.records if r.status == "ok"]
    exp = result.spec.experiment if result.spec is not None else "sweep"
    xlabel = AXIS_LABELS.get(exp, "value")
    logx = exp == "conductivity_ratio"
    x = [r.value for r in ok]
    line_plot(out / "sigma0.svg", x, {"sigma0": [r.sigma0 for r in ok]}, xlabel,
              "sigma0 [S/m]", logx=logx)
    line_plot(out / "ratio_A0.svg", x, {"A0": [r.ratio_A0 for r in ok]}, xlabel,
              "|lambda1| / |lambda2| of A0", logx=logx)
    line_plot(out / "ratio_A1.svg", x, {"A1(0)": [r.ratio_A1 for r in ok]}, xlabel,
              "|lambda1| / |lambda2| of A1(0)", logx=logx)
    if result.spec is not None:
        (out / "config.normalized.yaml").write_text(result.spec.dump())
    write_manifest(out / "manifest.json", result.spec,
                   {"total": result.wall_time, "points": [r.wall_time for r in result.records]},
                   {"n_points": len(result.records),
                    "failed": [r.value for r in result.records if r.status != "ok"]})
    return out


def run_single_cell_demo(spec: SweepSpec, out_dir=None):
    """Pole TMP time series and final membrane profiles, as CSV and SVG."""
    sc = spec.single_cell
    t0 = time.perf_counter()
    mesh = build_unit_cell_mesh(spec.geometry_for(None), spec.h_target)
    problem = TransmissionProblem(mesh, spec.params, AffineField(sc["field_V_per_m"], 0.0),
                                  sc["model"], sc["dt_s"], sc["T_s"], sc["use_cutoff"])
    trace = run(problem)
    report = energy_monitor(trace, spec.params)
    wall = time.perf_counter() - t0
    out = _prepare(spec.output_dir if out_dir is None else out_dir)
    trace.write_csv(out / "trace.csv")
    trace.write_profile_csv(out / "profile.csv")
    line_plot(out / "tmp_pole.svg", trace.times * 1e6, {"pole": trace.v_at_pole},
              "t [us]", "TMP at pole [V]", markers=False)
    order = np.argsort(trace.theta, kind="stable")
    line_plot(out / "tmp_profile.svg", trace.theta[order], {"v": trace.v_profile_final[order]},
              "theta [rad]", "TMP at final time [V]", markers=False)
    (out / "config.normalized.yaml").write_text(spec.dump())
    write_manifest(out / "manifest.json", spec, {"total": wall},
                   {"energy_ok": report.ok, "cutoff_events": len(trace.events),
                    "n_vertices": mesh.n_vertices, "n_interface": mesh.n_interface})
    return trace, report


def run_convergence(spec: SweepSpec, out_dir=None):
    cv = spec.convergence
    t0 = time.perf_counter()
    t_grid = np.arange(cv["n_steps"] + 1) * cv["dt_s"]
    res = convergence_study(spec.geometry_for(None), spec.params, spec.values, t_grid,
                            amplitude=cv["amplitude_V"], h_target=spec.h_target,
                            macro_n=cv["macro_cells"])
    wall = time.perf_counter() - t0
    out = _prepare(spec.output_dir if out_dir is None else out_dir)
    with open(out / "convergence.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eps", "l1_error", "l1_norm_u0"])
        for e, err in zip(res.eps, res.errors):
            w.writerow([f"{e:.10g}", f"{err:.10g}", f"{res.reference_norm:.10g}"])
    line_plot(out / "convergence.svg", res.eps, {"L1 error": res.errors}, "eps",
              "||u_eps - u_0||_L1", logx=True)
    (out / "config.normalized.yaml").write_text(spec.dump())
    write_manifest(out / "manifest.json", spec, {"total": wall})
    return res
