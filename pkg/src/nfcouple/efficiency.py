"""Count rates to decay rates: free-space and fiber rates, beta and QE bounds with errors."""

import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ValidationError


class QEAboveUnity(UserWarning):
    """Quantum efficiency estimate exceeds one."""


class NegativeNonradiative(UserWarning):
    """Radiative rate exceeds the total decay rate."""


def _unit_interval(name, value, allow_zero=False):
    v = float(value)
    ok = (0.0 <= v <= 1.0) if allow_zero else (0.0 < v <= 1.0)
    if not ok:
        rng = "[0, 1]" if allow_zero else "(0, 1]"
        raise ValidationError(f"{name} must lie in {rng}, got {value!r}")
    return v


def _positive(name, value):
    v = float(value)
    if not v > 0:
        raise ValidationError(f"{name} must be positive, got {value!r}")
    return v


def collection_fraction(na):
    """Fraction of an isotropic emitter's light inside a cone of numerical aperture ``na``.

    Solid-angle fraction (1 - sqrt(1 - NA^2)) / 2 in a medium of index 1.
    """
    na = _unit_interval("NA", na, allow_zero=True)
    return 0.5 * (1.0 - np.sqrt(1.0 - na * na))


def free_space_rate(c_free, fraction, t_path, eta):
    """Gamma_free = C_free / (fraction * T_path * eta)."""
    c_free = _positive("C_free", c_free)
    fraction = _unit_interval("collection fraction", fraction)
    t_path = _unit_interval("T_path", t_path)
    eta = _unit_interval("eta", eta)
    return c_free / (fraction * t_path * eta)


def fiber_rate(c_nf, t_ges, eta):
    """Gamma_nf = C_nf / (eta * sqrt(T_ges)); C_nf summed over both fiber ends."""
    c_nf = _positive("C_nf", c_nf)
    t_ges = _unit_interval("T_ges", t_ges)
    eta = _unit_interval("eta", eta)
    return c_nf / (eta * np.sqrt(t_ges))


def beta(gamma_nf, gamma_free):
    """Coupling efficiency Gamma_nf / (Gamma_nf + Gamma_free)."""
    if gamma_nf < 0 or gamma_free < 0:
        raise ValidationError("decay rates must be non-negative")
    total = gamma_nf + gamma_free
    if total == 0:
        raise ValidationError("beta undefined when both rates vanish")
    return gamma_nf / total


def coupling_efficiency(gamma_nf, gamma_free_low, gamma_free_high):
    """(beta_low, beta_high); the low bound pairs with the high free-space rate."""
    if gamma_free_low > gamma_free_high:
        raise ValidationError("free-space bounds out of order")
    return beta(gamma_nf, gamma_free_high), beta(gamma_nf, gamma_free_low)


def quantum_efficiency(gamma_rad, tau_tot):
    """QE = Gamma_rad * tau_tot. Values above one are returned as is with a warning."""
    gamma_rad = _positive("Gamma_rad", gamma_rad)
    tau_tot = _positive("tau_tot", tau_tot)
    qe = gamma_rad * tau_tot
    if qe > 1:
        warnings.warn(f"quantum efficiency {qe:.3f} exceeds unity", QEAboveUnity, stacklevel=2)
    return qe


@dataclass(frozen=True)
class EfficiencyInputs:
    """Measured quantities feeding the rate chain; ``*_sigma`` are 1-sigma errors.

    ``free_space_bounds`` ((low, low_sigma), (high, high_sigma)) in 1/s,
    when given, replaces the geometric free-space estimate.
    """

    c_free: float
    c_nf: float
    na_eff: float
    t_path: float
    t_ges: float
    eta: float
    tau_tot: float
    c_free_sigma: float = 0.0
    c_nf_sigma: float = 0.0
    na_eff_sigma: float = 0.0
    t_path_sigma: float = 0.0
    t_ges_sigma: float = 0.0
    eta_sigma: float = 0.0
    tau_tot_sigma: float = 0.0
    free_space_bounds: tuple = None

    def __post_init__(self):
        _positive("C_free", self.c_free)
        _positive("C_nf", self.c_nf)
        for name in ("na_eff", "t_path", "t_ges", "eta"):
            _unit_interval(name, getattr(self, name))
        _positive("tau_tot", self.tau_tot)
        for name in _SIGMA_OF.values():
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")
        if self.free_space_bounds is not None:
            (lo, slo), (hi, shi) = self.free_space_bounds
            if not 0 < lo <= hi or slo < 0 or shi < 0:
                raise ValidationError("free-space bounds must satisfy 0 < low <= high, sigmas >= 0")

    @classmethod
    def reference(cls, **overrides):
        """Constants of the reference measurement with the injected free-space bounds."""
        base = dict(c_free=7.70e3, c_nf=19.6e3, na_eff=0.32, na_eff_sigma=0.01, t_path=0.257,
                    t_ges=0.0241, t_ges_sigma=0.0003, eta=0.65, tau_tot=63e-9,
                    tau_tot_sigma=9e-9, free_space_bounds=((1.7e6, 0.1e6), (1.8e6, 0.1e6)))
        base.update(overrides)
        return cls(**base)

    def _vector(self):
        names = list(_SIGMA_OF)
        mean = np.array([getattr(self, n) for n in names], dtype=float)
        sig = np.array([getattr(self, _SIGMA_OF[n]) for n in names], dtype=float)
        if self.free_space_bounds is not None:
            (lo, slo), (hi, shi) = self.free_space_bounds
            mean = np.r_[mean, lo, hi]
            sig = np.r_[sig, slo, shi]
        return mean, sig


_SIGMA_OF = {
    "c_free": "c_free_sigma", "c_nf": "c_nf_sigma", "na_eff": "na_eff_sigma",
    "t_path": "t_path_sigma", "t_ges": "t_ges_sigma", "eta": "eta_sigma",
    "tau_tot": "tau_tot_sigma",
}

OUTPUTS = ("gamma_free_low", "gamma_free_high", "gamma_nf", "gamma_rad_low", "gamma_rad_high",
           "gamma_tot", "gamma_nrad_low", "gamma_nrad_high", "beta_low", "beta_high",
           "qe_low", "qe_high")


def _chain(v, injected):
    """Vectorized rate chain. ``v`` rows follow ``_SIGMA_OF`` order, then injected bounds."""
    c_free, c_nf, na, t_path, t_ges, eta, tau = v[:7]
    if injected:
        gf_lo, gf_hi = v[7], v[8]
    else:
        frac = 0.5 * (1.0 - np.sqrt(1.0 - na * na))
        gf_lo = gf_hi = c_free / (frac * t_path * eta)
    g_nf = c_nf / (eta * np.sqrt(t_ges))
    g_tot = 1.0 / tau
    rad_lo, rad_hi = g_nf + gf_lo, g_nf + gf_hi
    return np.array([gf_lo, gf_hi, g_nf, rad_lo, rad_hi, g_tot, g_tot - rad_lo, g_tot - rad_hi,
                     g_nf / (g_nf + gf_hi), g_nf / (g_nf + gf_lo), rad_lo * tau, rad_hi * tau])


@dataclass(frozen=True)
class EfficiencyReport:
    values: dict
    sigmas: dict
    free_space_source: str
    mc_sigmas: dict = None
    mc_draws: int = 0
    flags: dict = field(default_factory=dict)

    def __getattr__(self, name):
        values = object.__getattribute__(self, "values")
        if name in values:
            return values[name]
        raise AttributeError(name)

    def to_dict(self):
        out = {"free_space_source": self.free_space_source}
        for k in OUTPUTS:
            unit = "_per_s" if k.startswith("gamma") else ""
            out[f"{k}{unit}"] = float(self.values[k])
            out[f"{k}_sigma{unit}"] = float(self.sigmas[k])
            if self.mc_sigmas is not None:
                out[f"{k}_mc_sigma{unit}"] = float(self.mc_sigmas[k])
        out["tau_tot_s"] = float(1.0 / self.values["gamma_tot"])
        out["mc_draws"] = int(self.mc_draws)
        out["flags"] = dict(self.flags)
        return out


def propagate_errors(inputs, monte_carlo=False, n_draws=100_000, seed=0, rel_step=1e-6):
    """Run the full rate chain with first-order error propagation.

    The Jacobian is taken by central differences in every input. With
    ``monte_carlo`` the inputs are also drawn ``n_draws`` times from
    independent normals (seeded) and the sample standard deviations reported
    alongside.
    """
    injected = inputs.free_space_bounds is not None
    mean, sig = inputs._vector()
    center = _chain(mean, injected)
    jac = np.zeros((center.size, mean.size))
    for i in range(mean.size):
        if sig[i] == 0:
            continue
        h = rel_step * abs(mean[i])
        up, dn = mean.copy(), mean.copy()
        up[i] += h
        dn[i] -= h
        jac[:, i] = (_chain(up, injected) - _chain(dn, injected)) / (2 * h)
    sd = np.sqrt((jac**2) @ (sig**2))
    mc = None
    if monte_carlo:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
        draws = mean[:, None] + sig[:, None] * rng.standard_normal((mean.size, int(n_draws)))
        out = _chain(draws, injected)
        # constant rows would otherwise carry rounding noise from the mean
        mc = np.where(np.ptp(out, axis=1) == 0, 0.0, out.std(axis=1, ddof=1))
    values = dict(zip(OUTPUTS, (float(x) for x in center)))
    flags = {
        "qe_above_unity": bool(values["qe_high"] > 1),
        "negative_nonradiative": bool(values["gamma_nrad_high"] < 0),
    }
    if flags["qe_above_unity"]:
        warnings.warn("quantum efficiency bound exceeds unity", QEAboveUnity, stacklevel=2)
    if flags["negative_nonradiative"]:
        warnings.warn("radiative rate exceeds total decay rate", NegativeNonradiative,
                      stacklevel=2)
    return EfficiencyReport(
        values, dict(zip(OUTPUTS, (float(x) for x in sd))),
        "injected" if injected else "geometric",
        None if mc is None else dict(zip(OUTPUTS, (float(x) for x in mc))),
        int(n_draws) if monte_carlo else 0, flags)


def inputs_as_dict(inputs):
    d = asdict(inputs)
    if d["free_space_bounds"] is not None:
        d["free_space_bounds"] = [list(b) for b in d["free_space_bounds"]]
    return d
