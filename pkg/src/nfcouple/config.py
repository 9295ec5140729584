"""Run configuration: JSON with a versioned schema key, documented defaults, dotted overrides.

Every leaf of :data:`DEFAULTS` is a setting; a config file may give any subset
of them and unknown keys are rejected. Leaf names carry their units.
"""

import copy
import json
from pathlib import Path

from .errors import ConfigError, FormatError

SCHEMA = "nfcouple.run/1"

DEFAULTS = {
    "schema": SCHEMA,
    "seed": 12345,
    "output_dir": "out",
    "fiber": {
        "radius_nm": 130.0,
        "wavelength_nm": 666.0,
        "n_core": None,  # None: fused-silica Sellmeier index at the wavelength
        "n_clad": 1.0,
        "profile_points": 201,
        "profile_extent": 3.0,  # radial profile out to this many fiber radii
    },
    "dipole": {
        "distance_nm": 10.0,
        "phi_rad": 0.0,
        "orientations": ["radial", "tangential", "parallel"],
        "polarization": "both",
        "free_space_factor": 1.0,
        "nv_axis": None,  # lab-frame unit vector (z along the fiber), or None
        "sweep_points": 37,  # polar-angle samples of the orientation sweep
        "distance_sweep_nm": [0.0, 10.0, 25.0, 50.0, 100.0, 200.0],
        "spectrum": None,  # path to a lambda_nm,intensity CSV, or None
        "spectrum_grid_nm": [600.0, 800.0, 21],
    },
    "emitter": {
        "tau_tot_ns": 63.0,
        "p_sat_mw": 1.17,
        "k23_per_s": 5.0e5,
        "k31_per_s": 3.0e6,
        "gamma_rad_per_s": 1.944e6,
        "resolution_ps": 77,
        "duration_s": 100.0,
        "warmup_s": 20e-6,
        "channels": [
            {"names": ["conf_a", "conf_b"], "saturated_rate_per_s": 7.70e3,
             "dark_rate_per_s": 100.0, "bg_per_s_per_mw": 0.0},
            {"names": ["fib_a", "fib_b"], "saturated_rate_per_s": 19.6e3,
             "dark_rate_per_s": 160.0, "bg_per_s_per_mw": 635.0},
        ],
    },
    "powers_mw": [0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0],
    "correlation": {
        "bin_ns": 0.924,
        "tau_max_ns": 1200.0,
        "norm_window_ns": [700.0, 1100.0],
        "norm_sides": "both",
        "confocal_pair": [0, 1],
        "fiber_pair": [2, 3],
    },
    "fit": {
        "weights": "poisson",
        "scale": "free",
        "bin_average": True,
        "subtract_dark": True,
    },
    "efficiency": {
        "c_free_per_s": 7.70e3,
        "c_nf_per_s": 19.6e3,
        "na_eff": 0.32,
        "na_eff_sigma": 0.01,
        "t_path": 0.257,
        "t_path_sigma": 0.0,
        "t_ges": 0.0241,
        "t_ges_sigma": 0.0003,
        "eta": 0.65,
        "eta_sigma": 0.0,
        "tau_tot_ns": 63.0,
        "tau_tot_sigma_ns": 9.0,
        "c_free_sigma_per_s": 0.0,
        "c_nf_sigma_per_s": 0.0,
        "free_space_bounds_per_s": [[1.7e6, 0.1e6], [1.8e6, 0.1e6]],
        "monte_carlo": True,
        "mc_draws": 100000,
    },
}

# Leaves whose default is None but which accept these types.
_NULLABLE = {
    ("fiber", "n_core"): (int, float),
    ("dipole", "nv_axis"): (list,),
    ("dipole", "spectrum"): (str,),
    ("efficiency", "free_space_bounds_per_s"): (list,),
}
# Enumerated string settings.
_CHOICES = {
    ("dipole", "polarization"): ("both", "max"),
    ("correlation", "norm_sides"): ("both", "positive"),
    ("fit", "weights"): ("poisson", "counts"),
    ("fit", "scale"): ("free", "window", "fixed"),
}


def _type_ok(value, default, path):
    if default is None:
        allowed = _NULLABLE.get(path, ())
        return value is None or isinstance(value, allowed)
    if path in _NULLABLE and value is None:
        return True
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(value, bool):
        return False
    if isinstance(default, int):
        return isinstance(value, int)
    if isinstance(default, float):
        return isinstance(value, (int, float))
    return isinstance(value, type(default))


def _merge(base, update, path=()):
    if not isinstance(update, dict):
        raise ConfigError(f"{'.'.join(path) or 'config'} must be an object")
    out = copy.deepcopy(base)
    for key, value in update.items():
        here = path + (key,)
        if key not in base:
            raise ConfigError(f"unknown config key {'.'.join(here)!r}")
        default = base[key]
        if isinstance(default, dict):
            out[key] = _merge(default, value, here)
            continue
        if not _type_ok(value, default, here):
            raise ConfigError(f"{'.'.join(here)}: expected {type(default).__name__}, "
                              f"got {type(value).__name__}")
        out[key] = copy.deepcopy(value)
    return out


def _check(cfg):
    if cfg["schema"] != SCHEMA:
        raise ConfigError(f"unsupported schema {cfg['schema']!r}, expected {SCHEMA!r}")
    for path, choices in _CHOICES.items():
        v = cfg[path[0]][path[1]]
        if v not in choices:
            raise ConfigError(f"{'.'.join(path)} must be one of {choices}, got {v!r}")
    if not 0 <= cfg["seed"] < 1 << 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    p = cfg["powers_mw"]
    if not p or any(not isinstance(x, (int, float)) or isinstance(x, bool) or x < 0
                    for x in p):
        raise ConfigError("powers_mw must be a nonempty list of nonnegative numbers")
    corr = cfg["correlation"]
    if len(corr["norm_window_ns"]) != 2:
        raise ConfigError("correlation.norm_window_ns must have two entries")
    n_ch = sum(len(g["names"]) for g in cfg["emitter"]["channels"])
    for key in ("confocal_pair", "fiber_pair"):
        pair = corr[key]
        if len(pair) != 2 or any(not isinstance(i, int) or not 0 <= i < n_ch for i in pair):
            raise ConfigError(f"correlation.{key} must name two of the {n_ch} channels")
    for g in cfg["emitter"]["channels"]:
        if set(g) != {"names", "saturated_rate_per_s", "dark_rate_per_s", "bg_per_s_per_mw"}:
            raise ConfigError("each emitter.channels entry needs names, saturated_rate_per_s, "
                              "dark_rate_per_s and bg_per_s_per_mw")
        if not g["names"]:
            raise ConfigError("channel group with no detectors")
    b = cfg["efficiency"]["free_space_bounds_per_s"]
    if b is not None and (len(b) != 2 or any(len(x) != 2 for x in b)):
        raise ConfigError("free_space_bounds_per_s must be [[low, sigma], [high, sigma]]")
    nv = cfg["dipole"]["nv_axis"]
    if nv is not None and len(nv) != 3:
        raise ConfigError("dipole.nv_axis must have three components")
    grid = cfg["dipole"]["spectrum_grid_nm"]
    if len(grid) != 3 or grid[2] < 2 or grid[0] >= grid[1]:
        raise ConfigError("dipole.spectrum_grid_nm must be [start, stop, points>=2]")
    return cfg


def parse_value(text):
    """Value of a ``--set`` override: JSON when it parses, else the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def overrides_to_tree(pairs):
    """``["a.b=1", "c=x"]`` -> nested dict."""
    tree = {}
    for item in pairs or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form KEY=VALUE")
        parts = key.split(".")
        node = tree
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} conflicts with an earlier one")
        node[parts[-1]] = parse_value(value)
    return tree


def resolve(user=None, overrides=(), seed=None, output_dir=None):
    """Fully expanded, validated config from a user dict plus CLI overrides."""
    cfg = _merge(DEFAULTS, user or {})
    cfg = _merge(cfg, overrides_to_tree(overrides))
    if seed is not None:
        cfg["seed"] = int(seed)
    if output_dir is not None:
        cfg["output_dir"] = str(output_dir)
    return _check(cfg)


def load(path=None, overrides=(), seed=None, output_dir=None):
    user = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise FormatError(f"cannot read config {path}: {exc.strerror or exc}") from exc
        try:
            user = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return resolve(user, overrides, seed, output_dir)
