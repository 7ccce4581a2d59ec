"""YAML experiment configs.

Every physical quantity carries its unit in the key name (``delta_m``,
``cm_F_per_m``); unknown keys are rejected so typos cannot silently fall back
to defaults.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError, EpihomError
from .geometry import CellGeometry
from .membrane import MODELS, ModelParams

EXPERIMENTS = ("conductivity_ratio", "excentricity", "volume_fraction", "lattice_angle",
               "single_cell", "convergence")

# config key -> ModelParams field
PARAM_KEYS = {
    "sigma_i_S_per_m": "sigma_i",
    "sigma_e_S_per_m": "sigma_e",
    "delta_m": "delta",
    "r_p_m": "r_p",
    "sigma_p_S_per_m": "sigma_p",
    "v_ep_V": "v_ep",
    "alpha_per_m2_s": "alpha",
    "n0_per_m2": "n0",
    "cm_F_per_m": "c_m",
    "q": "q",
    "sigma_m0_S_per_m": "sigma_m0",
    "M_V": "M",
    "u_ref_V": "u_ref",
    "K_S_per_m": "K",
    "beta_exp_per_V": "beta_exp",
    "tau_ep_s": "tau_ep",
    "tau_res_s": "tau_res",
    "k_ep_per_V": "k_ep",
    "beta_relax_S_per_m": "beta_relax",
}

GEOMETRY_KEYS = ("shape", "cell_size_m", "radius_m", "a_m", "b_m", "volume_fraction",
                 "aspect_ratio", "lattice_angle_rad", "offset_m")

SINGLE_CELL_KEYS = ("field_V_per_m", "dt_s", "T_s", "model", "use_cutoff")
CONVERGENCE_KEYS = ("amplitude_V", "dt_s", "n_steps", "macro_cells")
TOP_KEYS = ("experiment", "output_dir", "values", "h_target_m", "params", "geometry",
            "single_cell", "convergence")

DEFAULT_VALUES = {
    "conductivity_ratio": list(np.geomspace(0.05, 20.0, 8)),
    "excentricity": list(np.linspace(1.0, 4.0, 6)),
    "volume_fraction": list(np.linspace(0.05, 0.45, 5)),
    "lattice_angle": list(np.linspace(0.0, np.pi / 2, 7)),
    "convergence": [0.5, 0.25, 0.125],
    "single_cell": [0.0],
}

# geometry used when the config gives none: the swept quantity varies, the rest is fixed
DEFAULT_GEOMETRY = {
    "conductivity_ratio": {"shape": "circle"},
    "excentricity": {"volume_fraction": 0.1},
    "volume_fraction": {"aspect_ratio": 1.0},
    "lattice_angle": {"volume_fraction": 0.1, "aspect_ratio": 2.0},
    "single_cell": {"shape": "circle"},
    "convergence": {"shape": "circle"},
}


@dataclass
class SweepSpec:
    experiment: str
    values: list
    params: ModelParams
    geometry: dict
    output_dir: Path
    h_target: float
    single_cell: dict = field(default_factory=dict)
    convergence: dict = field(default_factory=dict)

    def normalized(self):
        """Plain-data dump with every default filled in."""
        p = self.params
        return {
            "experiment": self.experiment,
            "output_dir": str(self.output_dir),
            "values": [float(v) for v in self.values],
            "h_target_m": float(self.h_target),
            "params": {k: float(getattr(p, f)) for k, f in PARAM_KEYS.items()},
            "geometry": dict(self.geometry),
            "single_cell": dict(self.single_cell),
            "convergence": dict(self.convergence),
        }

    def dump(self):
        return yaml.safe_dump(self.normalized(), sort_keys=True)

    def config_hash(self):
        return hashlib.sha256(self.dump().encode()).hexdigest()

    def geometry_for(self, value=None) -> CellGeometry:
        return build_geometry(self.geometry, self.experiment, value)

    def params_for(self, value=None) -> ModelParams:
        if self.experiment == "conductivity_ratio" and value is not None:
            return self.params.replace(sigma_i=float(value) * self.params.sigma_e)
        return self.params


def _number(value, key, positive=False, allow_zero=False):
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise ConfigError("config-invalid", f"{key} must be a number, got {value!r}") from None
    if not math.isfinite(x):
        raise ConfigError("config-invalid", f"{key} must be finite")
    if positive and not (x > 0 or (allow_zero and x == 0)):
        raise ConfigError("config-invalid", f"{key} must be positive, got {x}")
    return x


def _check_keys(block, allowed, where):
    if block is None:
        return {}
    if not isinstance(block, dict):
        raise ConfigError("config-invalid", f"{where} must be a mapping")
    for key in block:
        if key not in allowed:
            raise ConfigError("config-invalid", f"unknown key {where + '.' if where else ''}{key}")
    return block


def build_geometry(g: dict, experiment: str, value=None) -> CellGeometry:
    L = g["cell_size_m"]
    phi = g.get("lattice_angle_rad", 0.0)
    offset = tuple(g.get("offset_m", (0.0, 0.0)))
    f = g.get("volume_fraction")
    ratio = g.get("aspect_ratio", 1.0)
    if experiment == "excentricity" and value is not None:
        ratio = float(value)
    elif experiment == "volume_fraction" and value is not None:
        f = float(value)
    elif experiment == "lattice_angle" and value is not None:
        phi = float(value)
    if f is not None:
        return CellGeometry.from_fraction(f, ratio, L, phi, offset)
    if g.get("shape", "circle") == "circle":
        return CellGeometry(L, g["radius_m"], g["radius_m"], phi, offset)
    return CellGeometry(L, g["a_m"], g["b_m"], phi, offset)


def _geometry_block(raw, experiment, L_default):
    g = dict(_check_keys(raw, GEOMETRY_KEYS, "geometry"))
    if not g:
        g = dict(DEFAULT_GEOMETRY[experiment])
    out = {"cell_size_m": _number(g.get("cell_size_m", L_default), "cell_size_m", True)}
    if "shape" in g and g["shape"] not in ("circle", "ellipse"):
        raise ConfigError("config-invalid", f"shape must be circle or ellipse, got {g['shape']!r}")
    for key in ("radius_m", "a_m", "b_m", "aspect_ratio"):
        if key in g:
            out[key] = _number(g[key], key, positive=True)
    if "volume_fraction" in g:
        f = _number(g["volume_fraction"], "volume_fraction")
        if not 0 < f < 1:
            raise ConfigError("config-invalid", f"volume_fraction must lie in (0, 1), got {f}")
        out["volume_fraction"] = f
    if "lattice_angle_rad" in g:
        out["lattice_angle_rad"] = _number(g["lattice_angle_rad"], "lattice_angle_rad")
    if "offset_m" in g:
        off = g["offset_m"]
        if not isinstance(off, (list, tuple)) or len(off) != 2:
            raise ConfigError("config-invalid", "offset_m must be a pair")
        out["offset_m"] = [_number(v, "offset_m") for v in off]
    shape = g.get("shape", "ellipse" if ("a_m" in g or "b_m" in g) else "circle")
    if "volume_fraction" not in out:
        out["shape"] = shape
        if shape == "circle":
            out.setdefault("radius_m", 0.5e-4)
        else:
            for key in ("a_m", "b_m"):
                if key not in out:
                    raise ConfigError("config-missing-key", f"geometry.{key}")
    elif "aspect_ratio" not in out:
        out["aspect_ratio"] = 1.0
    return out


def parse_config(path) -> SweepSpec:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError("config-invalid", f"cannot read {path}: {exc.strerror}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError("config-invalid", f"{path}: not valid YAML") from exc
    return spec_from_dict(raw, base_dir=path.parent)


def spec_from_dict(raw, base_dir=None) -> SweepSpec:
    raw = _check_keys(raw, TOP_KEYS, "")
    for key in ("experiment", "output_dir"):
        if key not in raw:
            raise ConfigError("config-missing-key", key)
    exp = raw["experiment"]
    if exp not in EXPERIMENTS:
        raise ConfigError("config-invalid", f"experiment must be one of {', '.join(EXPERIMENTS)}")

    pblock = _check_keys(raw.get("params"), PARAM_KEYS, "params")
    values = {PARAM_KEYS[k]: _number(v, k) for k, v in pblock.items()}
    try:
        params = ModelParams(**values)
    except EpihomError as exc:
        raise ConfigError("config-invalid", exc.detail) from exc

    geometry = _geometry_block(raw.get("geometry"), exp, 2e-4)

    swept = raw.get("values", DEFAULT_VALUES[exp])
    if not isinstance(swept, list) or not swept:
        raise ConfigError("config-invalid", "values must be a non-empty list")
    swept = [_number(v, "values") for v in swept]
    _check_values(exp, swept)

    h = _number(raw.get("h_target_m", geometry["cell_size_m"] / 40), "h_target_m", True)

    sc = _check_keys(raw.get("single_cell"), SINGLE_CELL_KEYS, "single_cell")
    single = {
        "field_V_per_m": _number(sc.get("field_V_per_m", 4e4), "field_V_per_m"),
        "dt_s": _number(sc.get("dt_s", 2e-9), "dt_s", True),
        "T_s": _number(sc.get("T_s", 2e-6), "T_s", True),
        "model": sc.get("model", "neu_krassowska"),
        "use_cutoff": bool(sc.get("use_cutoff", True)),
    }
    if single["model"] not in MODELS:
        raise ConfigError("config-invalid", f"model must be one of {', '.join(MODELS)}")

    cv = _check_keys(raw.get("convergence"), CONVERGENCE_KEYS, "convergence")
    conv = {
        "amplitude_V": _number(cv.get("amplitude_V", 0.02), "amplitude_V"),
        "dt_s": _number(cv.get("dt_s", 2e-8), "dt_s", True),
        "n_steps": int(_number(cv.get("n_steps", 40), "n_steps", True)),
        "macro_cells": int(_number(cv.get("macro_cells", 64), "macro_cells", True)),
    }

    out = Path(raw["output_dir"])
    if base_dir is not None and not out.is_absolute():
        out = Path(base_dir) / out
    spec = SweepSpec(exp, swept, params, geometry, out, h, single, conv)
    try:
        for v in swept if exp not in ("single_cell", "convergence") else [None]:
            spec.geometry_for(v).check_inside()
    except EpihomError as exc:
        raise ConfigError("config-invalid", f"{exc.code}: {exc.detail}") from exc
    return spec


def _check_values(exp, values):
    if values != sorted(values) and exp != "convergence":
        raise ConfigError("config-invalid", "values must be sorted ascending")
    if exp == "convergence":
        if any(b >= a for a, b in zip(values, values[1:])):
            raise ConfigError("config-invalid", "eps values must be strictly decreasing")
        if any(not 0 < v <= 1 for v in values):
            raise ConfigError("config-invalid", "eps values must lie in (0, 1]")
    elif exp in ("conductivity_ratio", "excentricity") and min(values) <= 0:
        raise ConfigError("config-invalid", f"{exp} values must be positive")
    elif exp == "volume_fraction" and not all(0 < v < 1 for v in values):
        raise ConfigError("config-invalid", "volume fractions must lie in (0, 1)")
    elif exp == "lattice_angle" and not all(0 <= v < np.pi for v in values):
        raise ConfigError("config-invalid", "lattice angles must lie in [0, pi)")
