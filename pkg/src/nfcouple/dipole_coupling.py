"""Guided-mode emission rate and coupling efficiency of a point dipole near a nanofiber.

Rates are returned relative to the free-space rate Gamma_0. Dipole positions
are cylindrical (r, phi, z) in metres; orientations and NV axes are unit
vectors in the lab Cartesian frame (z along the fiber axis).

Guided emission is summed over both propagation directions and, by default,
over both quasi-linear polarizations of HE11 ("both"). Passing
``polarization="max"`` keeps only the single quasi-linear mode whose
polarization azimuth maximizes the coupling, and a float fixes that azimuth.
For dipoles along r, phi or z the three choices coincide.
"""

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.special import jv, kv

from .errors import EmptySpectrum, ValidationError
from .fiber_modes import effective_mode_area, radial_profiles, solve_he11


def cross_section(wavelength):
    """Radiative cross section 3 lambda^2 / (2 pi)."""
    return 3.0 * wavelength**2 / (2.0 * np.pi)


def _unit(v, what):
    v = np.asarray(v, dtype=float)
    if v.shape != (3,):
        raise ValidationError(f"{what} must be a 3-vector")
    n = np.linalg.norm(v)
    if n == 0:
        raise ValidationError(f"{what} must be nonzero")
    return v / n


def to_local(vec, phi):
    """Cartesian 3-vector -> (r, phi, z) components at azimuth ``phi``."""
    c, s = np.cos(phi), np.sin(phi)
    return np.array([c * vec[0] + s * vec[1], -s * vec[0] + c * vec[1], vec[2]])


def canonical_orientation(name, phi=0.0):
    """Cartesian unit vector for "radial", "tangential" or "parallel" (axial) at ``phi``."""
    c, s = np.cos(phi), np.sin(phi)
    table = {
        "radial": (c, s, 0.0),
        "tangential": (-s, c, 0.0),
        "azimuthal": (-s, c, 0.0),
        "parallel": (0.0, 0.0, 1.0),
        "axial": (0.0, 0.0, 1.0),
    }
    try:
        return np.array(table[name])
    except KeyError:
        raise ValidationError(f"unknown orientation {name!r}") from None


def nv_dipole_pair(nv_axis, azimuth=0.0):
    """Two orthogonal unit dipoles spanning the plane perpendicular to ``nv_axis``."""
    n = _unit(nv_axis, "nv_axis")
    ref = np.array([0.0, 0.0, 1.0]) if abs(n[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(n, ref)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    c, s = np.cos(azimuth), np.sin(azimuth)
    return c * e1 + s * e2, -s * e1 + c * e2


@dataclass(frozen=True)
class DipoleEmitter:
    position: tuple
    wavelength: float
    orientation: tuple = None
    nv_axis: tuple = None
    nv_azimuth: float = 0.0
    gamma0: float = 1.0
    allow_inside: bool = False

    def __post_init__(self):
        if (self.orientation is None) == (self.nv_axis is None):
            raise ValidationError("give exactly one of orientation or nv_axis")
        vec = self.orientation if self.orientation is not None else self.nv_axis
        v = np.asarray(vec, dtype=float)
        if v.shape != (3,) or abs(np.linalg.norm(v) - 1.0) > 1e-12:
            raise ValidationError(f"orientation vectors must be unit norm, got {vec!r}")
        if len(self.position) != 3 or self.position[0] < 0:
            raise ValidationError(f"bad cylindrical position {self.position!r}")
        if not self.wavelength > 0:
            raise ValidationError("wavelength must be positive")

    @classmethod
    def above_surface(cls, radius, distance, wavelength, orientation, phi=0.0, **kw):
        """Dipole ``distance`` above a fiber of ``radius``; ``orientation`` may be a canonical name."""
        if isinstance(orientation, str):
            orientation = canonical_orientation(orientation, phi)
        return cls((radius + distance, phi, 0.0), wavelength,
                   orientation=tuple(float(x) for x in orientation), **kw)

    def dipoles(self):
        """Incoherent set of unit dipoles making up this emitter."""
        if self.orientation is not None:
            return [np.asarray(self.orientation, dtype=float)]
        return list(nv_dipole_pair(self.nv_axis, self.nv_azimuth))


@dataclass(frozen=True)
class CouplingResult:
    gamma_nf_rel: float
    gamma_free_rel: float
    beta: float
    forward: float
    backward: float


def _check_position(mode, dipole):
    if dipole.position[0] < mode.spec.radius and not dipole.allow_inside:
        raise ValidationError(
            f"dipole at r={dipole.position[0]:.4g} m is inside the fiber core "
            f"(radius {mode.spec.radius:.4g} m)")
    if not np.isclose(dipole.wavelength, mode.spec.wavelength, rtol=1e-12, atol=0):
        raise ValidationError("dipole wavelength differs from the mode wavelength")


def _pol_azimuths(profile, u_local, phi, polarization):
    """Polarization azimuths of the quasi-linear modes the rate is summed over."""
    if isinstance(polarization, str):
        if polarization == "both":
            return (phi, phi + 0.5 * np.pi)
        if polarization != "max":
            raise ValidationError(f"unknown polarization {polarization!r}")
        R, P, Z = profile
        # |u.E|^2 = (R u_r cos a + P u_phi sin a)^2 + (Z u_z cos a)^2, a = phi - phi0
        A = (R * u_local[0]) ** 2 + (Z * u_local[2]) ** 2
        B = (P * u_local[1]) ** 2
        Cc = R * P * u_local[0] * u_local[1]
        alpha = 0.5 * np.arctan2(2 * Cc, A - B)
        return (phi - alpha,)
    return (float(polarization),)


def _single_rate_area(mode, position, u_local, pol_azimuths):
    sig = cross_section(mode.spec.wavelength)
    total = 0.0
    for az in pol_azimuths:
        area = effective_mode_area(mode, position, u_local, pol_azimuth=az, convention="dos")
        total += sig / (2.0 * area)
    return total


def guided_emission_rate(mode, dipole, polarization="both"):
    """Gamma_nf / Gamma_0 = sigma_A / (2 A_pol), summed over the selected modes.

    A_pol is the density-of-states mode area projected on the dipole
    orientation. For an NV (two-dipole) emitter the two incoherent dipoles are
    averaged.
    """
    _check_position(mode, dipole)
    r, phi, _ = dipole.position
    prof = [float(v) for v in radial_profiles(mode, r)[:3]]
    rates = []
    for d in dipole.dipoles():
        u = to_local(d, phi)
        az = _pol_azimuths(prof, u, phi, polarization)
        rates.append(_single_rate_area(mode, dipole.position, u, az))
    return float(np.mean(rates))


# --- direct overlap path --------------------------------------------------
# Closed-form quasi-linear HE11 components in the s-parameter form, with their
# own normalization integral. Shares nothing with fiber_modes beyond n_eff,
# n_group and the fiber geometry.


def _kien_parameters(mode):
    spec = mode.spec
    k = spec.k0
    a = spec.radius
    beta = mode.n_eff * k
    h = np.sqrt(spec.n_core**2 * k**2 - beta**2)
    q = np.sqrt(beta**2 - spec.n_clad**2 * k**2)
    u, w = h * a, q * a
    j1u = jv(1, u)
    k1w = kv(1, w)
    jp = 0.5 * (jv(0, u) - jv(2, u))
    kp = -0.5 * (kv(0, w) + kv(2, w))
    s = (1 / u**2 + 1 / w**2) / (jp / (u * j1u) + kp / (w * k1w))
    return beta, h, q, s, k1w / j1u


def _kien_profile(mode, r, params=None):
    """Real amplitudes (R, P, Z) with E = (i R cos, i P sin, Z cos), unnormalized."""
    beta, h, q, s, ratio = params or _kien_parameters(mode)
    if r < mode.spec.radius:
        x = h * r
        R = (q / h) * ratio * ((1 - s) * jv(0, x) - (1 + s) * jv(2, x))
        P = -(q / h) * ratio * ((1 - s) * jv(0, x) + (1 + s) * jv(2, x))
        Z = 2 * (q / beta) * ratio * jv(1, x)
    else:
        x = q * r
        R = (1 - s) * kv(0, x) + (1 + s) * kv(2, x)
        P = -((1 - s) * kv(0, x) - (1 + s) * kv(2, x))
        Z = 2 * (q / beta) * kv(1, x)
    return np.array([R, P, Z])


def _kien_norm(mode, params):
    a = mode.spec.radius

    def dens(x):
        R, P, Z = _kien_profile(mode, a * x, params)
        n2 = mode.spec.n_core**2 if x < 1 else mode.spec.n_clad**2
        return np.pi * n2 * (R * R + P * P + Z * Z) * x * a * a

    inner = quad(dens, 0, 1, epsabs=0, epsrel=1e-13, limit=200)[0]
    outer = quad(dens, 1, np.inf, epsabs=0, epsrel=1e-13, limit=200)[0]
    return inner + outer


def direct_guided_rate(mode, dipole, polarization="both"):
    """Gamma_nf / Gamma_0 from the golden-rule overlap

        3 lambda^2 n_g / (4 pi) * |u . e|^2 / int n^2 |e|^2 dA

    per quasi-linear mode, both directions. Independent check of
    :func:`guided_emission_rate`.
    """
    _check_position(mode, dipole)
    params = _kien_parameters(mode)
    norm = _kien_norm(mode, params)
    r, phi, _ = dipole.position
    prof = _kien_profile(mode, r, params)
    lam = mode.spec.wavelength
    eps_local = mode.spec.n_core**2 if r < mode.spec.radius else mode.spec.n_clad**2
    pref = 3 * lam**2 * mode.n_group / (4 * np.pi) * eps_local
    rates = []
    for d in dipole.dipoles():
        u = to_local(d, phi)
        total = 0.0
        for az in _pol_azimuths(prof, u, phi, polarization):
            psi = phi - az
            R, P, Z = prof
            proj = (R * u[0] * np.cos(psi) + P * u[1] * np.sin(psi)) ** 2 \
                + (Z * u[2] * np.cos(psi)) ** 2
            total += pref * proj / norm
        rates.append(total)
    return float(np.mean(rates))


def beta_factor(mode, dipole, free_space_factor=1.0, polarization="both"):
    """Coupling efficiency with Gamma_free / Gamma_0 = ``free_space_factor``."""
    if not free_space_factor > 0:
        raise ValidationError("free_space_factor must be positive")
    g = guided_emission_rate(mode, dipole, polarization)
    return coupling_result(g, free_space_factor)


def coupling_result(gamma_nf_rel, gamma_free_rel):
    total = gamma_nf_rel + gamma_free_rel
    beta = gamma_nf_rel / total if total > 0 else 0.0
    half = 0.5 * gamma_nf_rel
    return CouplingResult(gamma_nf_rel, gamma_free_rel, beta, half, gamma_nf_rel - half)


@dataclass(frozen=True)
class NVBeta:
    beta_low: float
    beta_high: float
    azimuths: np.ndarray
    betas: np.ndarray


def nv_average_beta(mode, nv_axis, position, wavelength=None, free_space_factor=1.0,
                    polarization="both", n_azimuth=72):
    """Two-dipole NV coupling, bounded over the dipole-pair azimuth about the axis."""
    wavelength = mode.spec.wavelength if wavelength is None else wavelength
    azimuths = np.linspace(0.0, 0.5 * np.pi, n_azimuth, endpoint=False)
    betas = np.empty(n_azimuth)
    for i, chi in enumerate(azimuths):
        em = DipoleEmitter(tuple(position), wavelength,
                           nv_axis=tuple(_unit(nv_axis, "nv_axis")), nv_azimuth=chi)
        betas[i] = beta_factor(mode, em, free_space_factor, polarization).beta
    return NVBeta(float(betas.min()), float(betas.max()), azimuths, betas)


def beta_spectrum(fiber, distance, orientation, wavelengths, free_space_factor=1.0,
                  dispersive=True, polarization="both", phi=0.0):
    """beta(lambda) for a dipole ``distance`` above ``fiber``, re-solving HE11 per wavelength.

    ``orientation`` is a canonical name, a Cartesian unit vector, or
    ``("nv", axis)`` for the two-dipole model.
    """
    out = np.empty(len(wavelengths))
    for i, lam in enumerate(wavelengths):
        spec = fiber.with_wavelength(lam, dispersive)
        mode = solve_he11(spec)
        pos = (spec.radius + distance, phi, 0.0)
        if isinstance(orientation, tuple) and len(orientation) == 2 and orientation[0] == "nv":
            em = DipoleEmitter(pos, lam, nv_axis=tuple(_unit(orientation[1], "nv_axis")))
        else:
            vec = canonical_orientation(orientation, phi) if isinstance(orientation, str) \
                else _unit(orientation, "orientation")
            em = DipoleEmitter(pos, lam, orientation=tuple(vec))
        out[i] = beta_factor(mode, em, free_space_factor, polarization).beta
    return out


def spectral_average(beta_of_lambda, spectrum):
    """Spectrum-weighted coupling, trapezoidal in wavelength.

    ``beta_of_lambda`` and ``spectrum`` are (wavelengths, values) pairs; beta is
    linearly interpolated onto the spectrum grid, which it must cover.
    """
    bl, bv = (np.asarray(x, dtype=float) for x in beta_of_lambda)
    sl, sv = (np.asarray(x, dtype=float) for x in spectrum)
    if sl.size == 0 or sl.shape != sv.shape:
        raise EmptySpectrum("spectrum is empty or ragged")
    if np.any(sv < 0):
        raise ValidationError("spectrum intensities must be nonnegative")
    if np.any(np.diff(sl) <= 0) or np.any(np.diff(bl) <= 0):
        raise ValidationError("wavelength grids must be strictly increasing")
    keep = sv > 0
    lo, hi = sl[keep].min() if keep.any() else 0, sl[keep].max() if keep.any() else 0
    if not keep.any():
        raise EmptySpectrum("spectrum has zero integral")
    if lo < bl[0] * (1 - 1e-12) or hi > bl[-1] * (1 + 1e-12):
        raise ValidationError("beta grid does not cover the emitting part of the spectrum")
    if sl.size == 1:
        return float(np.interp(sl[0], bl, bv))
    beta_s = np.interp(sl, bl, bv)
    den = np.trapezoid(sv, sl)
    if den <= 0:
        raise EmptySpectrum("spectrum has zero integral")
    return float(np.trapezoid(sv * beta_s, sl) / den)
