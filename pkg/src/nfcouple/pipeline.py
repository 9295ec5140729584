"""End-to-end analysis on synthetic data: simulate, correlate, fit, extrapolate, efficiency.

Each stage is a pure function of the resolved config and its inputs. All
randomness derives from the root seed, with power point ``i`` using the
independent substream ``i``, so results do not depend on scheduling.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .correlation import g2_from_streams
from .dipole_coupling import (DipoleEmitter, beta_factor, beta_spectrum, canonical_orientation,
                              nv_average_beta, spectral_average)
from .efficiency import EfficiencyInputs, propagate_errors
from .emitter_dynamics import calibrate_emission_model, expected_g2, simulate_time_tags
from .errors import NfcoupleError, NumericalError
from .fiber_modes import FiberSpec, radial_profiles, silica_index, solve_he11
from .inference import (extrapolate_lifetime, fit_g2, fit_saturation_confocal,
                        fit_saturation_fiber)

NM = 1e-9
PAIRS = ("confocal", "fiber")


class PipelineIncomplete(NumericalError):
    """Some power points failed; the others were still analysed and written."""


# --- builders -----------------------------------------------------------------


def build_fiber(cfg, wavelength_nm=None):
    f = cfg["fiber"]
    lam = (wavelength_nm or f["wavelength_nm"]) * NM
    n_core = f["n_core"] if f["n_core"] is not None else float(silica_index(lam))
    return FiberSpec(f["radius_nm"] * NM, lam, n_core, f["n_clad"])


def build_model(cfg):
    e = cfg["emitter"]
    groups = [(tuple(g["names"]), g["saturated_rate_per_s"], g["dark_rate_per_s"],
               g["bg_per_s_per_mw"]) for g in e["channels"]]
    return calibrate_emission_model(
        tau_tot=e["tau_tot_ns"] * NM, p_sat=e["p_sat_mw"], k23=e["k23_per_s"],
        k31=e["k31_per_s"], gamma_rad=e["gamma_rad_per_s"], channel_groups=groups,
        resolution=e["resolution_ps"] * 1e-12)


def correlation_kwargs(cfg):
    c = cfg["correlation"]
    return dict(bin_width=c["bin_ns"] * NM, tau_max=c["tau_max_ns"] * NM,
                norm_window=tuple(x * NM for x in c["norm_window_ns"]), sides=c["norm_sides"])


def fit_kwargs(cfg):
    f = cfg["fit"]
    return dict(weights=f["weights"], scale=f["scale"], bin_average=f["bin_average"])


def pair_channels(cfg, name):
    return tuple(cfg["correlation"][f"{name}_pair"])


def simulate_power(cfg, model, index):
    """Time-tag streams for power point ``index`` (its own seed substream)."""
    e = cfg["emitter"]
    return simulate_time_tags(model, cfg["powers_mw"][index], e["duration_s"], cfg["seed"],
                              warmup=e["warmup_s"], stream_index=index)


# --- mode and coupling summaries -----------------------------------------------


def mode_summary(cfg):
    """Solved HE11 summary and a radial field-profile table."""
    spec = build_fiber(cfg)
    mode = solve_he11(spec)
    f = cfg["fiber"]
    r = np.linspace(0.0, f["profile_extent"] * spec.radius, f["profile_points"])
    R, P, Z, _, _, _, n2 = radial_profiles(mode, r)
    summary = {
        "radius_m": spec.radius,
        "wavelength_m": spec.wavelength,
        "n_core": spec.n_core,
        "n_clad": spec.n_clad,
        "v_number": float(spec.v_number),
        "single_mode": bool(spec.v_number < 2.405),
        "n_eff": float(mode.n_eff),
        "n_group": float(mode.n_group),
        "decay_length_m": float(mode.decay_length),
        "dispersion_residual": float(mode.residual),
    }
    # |E|^2 components of the quasi-linear mode along (psi=0) and across (psi=pi/2)
    profile = np.column_stack([r / NM, R, P, Z, R**2 + Z**2, P**2, n2])
    return mode, summary, profile


PROFILE_HEADER = ("r_nm", "e_r", "e_phi", "e_z", "intensity_along_pol", "intensity_across_pol",
                  "index_squared")


def coupling_summary(cfg, mode=None):
    """beta for the configured orientations, sweeps over orientation and distance."""
    d = cfg["dipole"]
    mode = mode or solve_he11(build_fiber(cfg))
    spec = mode.spec
    dist = d["distance_nm"] * NM
    phi = d["phi_rad"]
    kw = dict(free_space_factor=d["free_space_factor"], polarization=d["polarization"])

    def beta_at(vec, distance=dist):
        em = DipoleEmitter((spec.radius + distance, phi, 0.0), spec.wavelength,
                           orientation=tuple(float(x) for x in vec))
        return beta_factor(mode, em, **kw)

    betas = {}
    for name in d["orientations"]:
        res = beta_at(canonical_orientation(name, phi))
        betas[name] = {"beta": res.beta, "gamma_nf_rel": res.gamma_nf_rel,
                       "forward": res.forward, "backward": res.backward}

    # orientation sweep: polar angle from the radial direction, in the r-z and r-phi planes
    theta = np.linspace(0.0, np.pi, d["sweep_points"])
    er, ep, ez = (canonical_orientation(n, phi) for n in ("radial", "tangential", "parallel"))
    sweep = []
    for t in theta:
        c, s = np.cos(t), np.sin(t)
        sweep.append((float(np.degrees(t)), beta_at(c * er + s * ez).beta,
                      beta_at(c * er + s * ep).beta))

    dsweep = []
    for dn in d["distance_sweep_nm"]:
        dsweep.append((float(dn),) + tuple(beta_at(canonical_orientation(n, phi), dn * NM).beta
                                          for n in ("radial", "tangential", "parallel")))

    out = {"distance_m": dist, "phi_rad": phi, "polarization": d["polarization"],
           "free_space_factor": d["free_space_factor"], "n_eff": float(mode.n_eff),
           "n_group": float(mode.n_group), "orientations": betas}
    if d["nv_axis"] is not None:
        nv = nv_average_beta(mode, d["nv_axis"], (spec.radius + dist, phi, 0.0), **kw)
        out["nv"] = {"axis": list(d["nv_axis"]), "beta_low": nv.beta_low,
                     "beta_high": nv.beta_high, "beta_mean": float(np.mean(nv.betas))}
    return out, sweep, dsweep


SWEEP_HEADER = ("theta_deg", "beta_radial_to_axial", "beta_radial_to_tangential")
DISTANCE_HEADER = ("distance_nm", "beta_radial", "beta_tangential", "beta_parallel")


def spectral_summary(cfg, spectrum):
    """Spectrum-averaged beta for each configured orientation (and the NV pair)."""
    d = cfg["dipole"]
    lo, hi, n = d["spectrum_grid_nm"]
    lam = np.linspace(lo, hi, int(n)) * NM
    fiber = build_fiber(cfg)
    kw = dict(free_space_factor=d["free_space_factor"], polarization=d["polarization"],
              phi=d["phi_rad"], dispersive=cfg["fiber"]["n_core"] is None)
    targets = {name: name for name in d["orientations"]}
    if d["nv_axis"] is not None:
        targets["nv"] = ("nv", tuple(d["nv_axis"]))
    out = {}
    for label, orient in targets.items():
        b = beta_spectrum(fiber, d["distance_nm"] * NM, orient, lam, **kw)
        out[label] = spectral_average((lam, b), spectrum)
    return out


# --- closed-loop analysis ------------------------------------------------------------


@dataclass
class PowerResult:
    index: int
    power: float
    counts: dict = field(default_factory=dict)  # pair -> total counts over both detectors
    histograms: dict = field(default_factory=dict)
    fits: dict = field(default_factory=dict)
    truth: dict = field(default_factory=dict)
    error: str = None


def analyse_power(cfg, model, index, threads=1):
    """Simulate, correlate and fit both detector pairs at one power."""
    p = cfg["powers_mw"][index]
    res = PowerResult(index, p)
    try:
        streams = simulate_power(cfg, model, index)
        for name in PAIRS:
            a, b = pair_channels(cfg, name)
            res.counts[name] = len(streams[a]) + len(streams[b])
            res.truth[name] = expected_g2(model, p, a, b)
            hist = g2_from_streams(streams[a], streams[b], threads=threads,
                                   **correlation_kwargs(cfg))
            res.histograms[name] = hist
            res.fits[name] = fit_g2(hist, **fit_kwargs(cfg))
    except NfcoupleError as exc:
        res.error = f"{type(exc).__name__}: {exc}"
    return res


def pair_rates(cfg, model, results, name):
    """(powers, rates, sigmas) summed over a detector pair, dark counts removed if configured."""
    a, b = pair_channels(cfg, name)
    T = cfg["emitter"]["duration_s"]
    dark = model.channels[a].dark_rate + model.channels[b].dark_rate
    if not cfg["fit"]["subtract_dark"]:
        dark = 0.0
    ok = [r for r in results if r.error is None]
    p = np.array([r.power for r in ok])
    n = np.array([r.counts[name] for r in ok], dtype=float)
    return p, n / T - dark, np.sqrt(np.maximum(n, 1.0)) / T


def efficiency_inputs(cfg, c_free=None, c_nf=None, tau_tot=None):
    """EfficiencyInputs from the config; fitted values (value, sigma) override it."""
    e = cfg["efficiency"]
    kw = dict(c_free=e["c_free_per_s"], c_free_sigma=e["c_free_sigma_per_s"],
              c_nf=e["c_nf_per_s"], c_nf_sigma=e["c_nf_sigma_per_s"],
              na_eff=e["na_eff"], na_eff_sigma=e["na_eff_sigma"],
              t_path=e["t_path"], t_path_sigma=e["t_path_sigma"],
              t_ges=e["t_ges"], t_ges_sigma=e["t_ges_sigma"],
              eta=e["eta"], eta_sigma=e["eta_sigma"],
              tau_tot=e["tau_tot_ns"] * NM, tau_tot_sigma=e["tau_tot_sigma_ns"] * NM)
    for key, val in (("c_free", c_free), ("c_nf", c_nf), ("tau_tot", tau_tot)):
        if val is not None:
            kw[key], kw[f"{key}_sigma"] = float(val[0]), float(val[1])
    b = e["free_space_bounds_per_s"]
    if b is not None:
        kw["free_space_bounds"] = tuple(tuple(float(x) for x in pair) for pair in b)
    return EfficiencyInputs(**kw)


def efficiency_report(cfg, inputs):
    e = cfg["efficiency"]
    return propagate_errors(inputs, monte_carlo=e["monte_carlo"], n_draws=e["mc_draws"],
                            seed=cfg["seed"])


@dataclass
class PipelineResult:
    powers: list
    model: object
    results: list
    confocal: object = None
    fiber: object = None
    lifetime: object = None
    efficiency: object = None
    inputs: object = None
    errors: list = field(default_factory=list)


def run_pipeline(cfg, threads=1):
    """Analyse every power point (in worker processes) and then the saturation and efficiency chain.

    Stage failures after the per-power loop are recorded in ``errors``;
    callers decide whether partial output is acceptable.
    """
    model = build_model(cfg)
    n = len(cfg["powers_mw"])
    threads = max(1, int(threads))
    if threads == 1:
        results = [analyse_power(cfg, model, i) for i in range(n)]
    else:
        with ProcessPoolExecutor(min(threads, n)) as pool:
            results = list(pool.map(analyse_power, [cfg] * n, [model] * n, range(n)))
    out = PipelineResult(list(cfg["powers_mw"]), model, results)
    out.errors = [f"P={r.power} mW: {r.error}" for r in results if r.error]
    try:
        p, rate, sig = pair_rates(cfg, model, results, "confocal")
        out.confocal = fit_saturation_confocal(p, rate, sig)
        p, rate, sig = pair_rates(cfg, model, results, "fiber")
        out.fiber = fit_saturation_fiber(p, rate, out.confocal.p_sat, sig)
        pp, tt, ss = [], [], []
        for r in results:
            for name in PAIRS:
                if r.error is None:
                    pp.append(r.power)
                    tt.append(r.fits[name].tau1)
                    ss.append(r.fits[name].sigmas["tau1"])
        out.lifetime = extrapolate_lifetime(pp, tt, ss)
        out.inputs = efficiency_inputs(
            cfg, c_free=(out.confocal.k, out.confocal.sigmas["k"]),
            c_nf=(out.fiber.k, out.fiber.sigmas["k"]),
            tau_tot=(out.lifetime.tau_tot, out.lifetime.sigma))
        out.efficiency = efficiency_report(cfg, out.inputs)
    except NfcoupleError as exc:
        out.errors.append(f"{type(exc).__name__}: {exc}")
    return out


TABLE_HEADER = (
    "power_mw", "pair", "rate_per_s", "p_f", "p_f_sigma", "tau1_ns", "tau1_sigma_ns",
    "tau2_ns", "tau2_sigma_ns", "c", "c_sigma", "g2_zero", "g2_zero_sigma",
    "true_p_f", "true_tau1_ns", "true_tau2_ns", "true_c", "bounds_active", "error")


def replication_table(cfg, result):
    """Per-power, per-pair fit table (saturation rates, g2 parameters, ground truth)."""
    T = cfg["emitter"]["duration_s"]
    rows = []
    for r in result.results:
        for name in PAIRS:
            if r.error is not None:
                rows.append((r.power, name) + ("",) * (len(TABLE_HEADER) - 3) + (r.error,))
                continue
            f, t = r.fits[name], r.truth[name]
            s = f.sigmas
            rows.append((
                float(r.power), name, r.counts[name] / T, f.p_f, s["p_f"],
                f.tau1 / NM, s["tau1"] / NM, f.tau2 / NM, s["tau2"] / NM, f.c, s["c"],
                f.g2_zero, f.g2_zero_sigma, t["p_f"], t["tau1"] / NM, t["tau2"] / NM, t["c"],
                "|".join(f.bounds_active), ""))
    return rows


def pipeline_report(cfg, result):
    """JSON-ready report: resolved config, per-power fits, saturation, lifetime, efficiency."""
    per_power = []
    for r in result.results:
        entry = {"power_mw": r.power, "error": r.error}
        if r.error is None:
            for name in PAIRS:
                h = r.histograms[name]
                entry[name] = {"counts": r.counts[name], "pairs_in_histogram": h.n_pairs,
                               "norm_value": h.norm_value, "fit": r.fits[name].to_report(),
                               "truth": {k: float(v) for k, v in r.truth[name].items()}}
        per_power.append(entry)
    rep = {
        "config": cfg,
        "truth": {"tau_tot_s": 1.0 / (result.model.k21 + result.model.k23),
                  "k21_per_s": result.model.k21, "k23_per_s": result.model.k23,
                  "k31_per_s": result.model.k31, "sigma_p_per_s_per_mw": result.model.sigma_p},
        "per_power": per_power,
        "saturation": {
            "confocal": result.confocal.to_report() if result.confocal else None,
            "fiber": result.fiber.to_report() if result.fiber else None,
        },
        "lifetime": result.lifetime.to_report() if result.lifetime else None,
        "efficiency": result.efficiency.to_dict() if result.efficiency else None,
        "errors": list(result.errors),
        "complete": not result.errors,
    }
    return rep
