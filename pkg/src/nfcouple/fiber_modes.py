"""
Fundamental HE11 mode of a step-index cylinder with a homogeneous cladding
(vacuum by default), as used for subwavelength tapered-fiber waists.

Fields are built from the longitudinal components

    E_z = J1(h r) cos(phi - phi0),   Z0 H_z = -b J1(h r) sin(phi - phi0)     (r < a)

(and the K1 continuation outside) so tangential continuity at r = a holds by
construction once ``b`` satisfies the exact vector dispersion relation. All
lengths are SI metres. Magnetic fields are returned in A/m.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.constants import c as C_LIGHT, mu_0
from scipy.integrate import quad
from scipy.optimize import bisect
from scipy.special import jv, kv

from .errors import NoGuidedMode, NonConvergence, QuadratureNotConverged, ValidationError

Z0 = mu_0 * C_LIGHT

# Malitson (1965) fused silica, wavelength in micrometres
_SELLMEIER_B = (0.6961663, 0.4079426, 0.8974794)
_SELLMEIER_C = (0.0684043, 0.1162414, 9.896161)


def silica_index(wavelength):
    """Refractive index of fused silica at ``wavelength`` (m)."""
    lam2 = (np.asarray(wavelength, dtype=float) * 1e6) ** 2
    n2 = 1.0
    for b, c in zip(_SELLMEIER_B, _SELLMEIER_C):
        n2 = n2 + b * lam2 / (lam2 - c * c)
    return np.sqrt(n2)


@dataclass(frozen=True)
class FiberSpec:
    radius: float
    wavelength: float
    n_core: float
    n_clad: float = 1.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValidationError(f"fiber radius must be positive, got {self.radius}")
        if not self.wavelength > 0:
            raise ValidationError(f"wavelength must be positive, got {self.wavelength}")
        if not self.n_clad >= 1.0:
            raise ValidationError(f"cladding index must be >= 1, got {self.n_clad}")
        if not self.n_core > self.n_clad:
            raise ValidationError(
                f"core index {self.n_core} must exceed cladding index {self.n_clad}")

    @classmethod
    def silica(cls, radius, wavelength, n_clad=1.0):
        return cls(radius, wavelength, float(silica_index(wavelength)), n_clad)

    @property
    def k0(self):
        return 2 * np.pi / self.wavelength

    @property
    def v_number(self):
        return self.k0 * self.radius * np.sqrt(self.n_core**2 - self.n_clad**2)

    def with_wavelength(self, wavelength, dispersive=True):
        """Same fiber at another wavelength; silica index re-evaluated if ``dispersive``."""
        n_core = float(silica_index(wavelength)) if dispersive else self.n_core
        return FiberSpec(self.radius, wavelength, n_core, self.n_clad)


def _bessel_terms(u, w):
    """J1'(u)/(u J1(u)) and K1'(w)/(w K1(w)), written without the J1 pole."""
    j0, j1, j2 = jv(0, u), jv(1, u), jv(2, u)
    k0, k1, k2 = kv(0, w), kv(1, w), kv(2, w)
    return j0, j1, j2, k0, k1, k2


def dispersion_function(spec, n_eff):
    """Pole-free HE/EH (l = 1) characteristic function and its magnitude scale.

    The classical relation
        (X + Y)(n1^2 X + n2^2 Y) = n_eff^2 (1/u^2 + 1/w^2)^2
    with X = J1'/(u J1), Y = K1'/(w K1) is multiplied through by (u J1)^2.
    """
    k = spec.k0
    n1, n2 = spec.n_core, spec.n_clad
    u = spec.radius * k * np.sqrt(np.maximum(n1**2 - n_eff**2, 0.0))
    w = spec.radius * k * np.sqrt(np.maximum(n_eff**2 - n2**2, 0.0))
    j0, j1, j2, k0, k1, k2 = _bessel_terms(u, w)
    jp = 0.5 * (j0 - j2)
    y = -0.5 * (k0 + k2) / (w * k1)
    uj = u * j1
    inv = 1.0 / u**2 + 1.0 / w**2
    t1 = (jp + uj * y) * (n1**2 * jp + n2**2 * uj * y)
    t2 = n_eff**2 * inv**2 * uj**2
    return t1 - t2, np.abs(t1) + np.abs(t2)


@dataclass(frozen=True)
class ModeSolution:
    """Solved HE11 mode.

    ``b`` is the (real) ratio of the Z0-scaled longitudinal magnetic amplitude
    to the electric one; ``amp`` scales both so that the energy integral
    int n^2 |E|^2 dA of a quasi-linearly polarized mode equals one.
    ``norm`` tags the mode-area convention: "dos" divides the energy
    integral by the group index so that the guided emission rate equals
    sigma_A / (2 A) with no further factor.
    """

    spec: FiberSpec
    n_eff: float
    n_group: float
    h: float
    q: float
    b: float
    outer_ratio: float
    amp: float
    norm: str = "dos"
    residual: float = field(default=0.0, compare=False)

    @property
    def prop_const(self):
        return self.n_eff * self.spec.k0

    @property
    def coeffs(self):
        """Bessel expansion coefficients {E_z, Z0 H_z} inside and outside the core."""
        return {
            "inside": {"Ez_J1": self.amp, "Hz_J1": -self.b * self.amp / Z0},
            "outside": {"Ez_K1": self.amp * self.outer_ratio,
                        "Hz_K1": -self.b * self.amp * self.outer_ratio / Z0},
        }

    @property
    def decay_length(self):
        """1/e length of the evanescent field amplitude outside the core."""
        return 1.0 / self.q

    @cached_property
    def energy_integral(self):
        """2-D quadrature of int n^2 |E|^2 dA for the quasi-linear mode."""
        return _energy_quadrature(self)


@dataclass(frozen=True)
class FieldPoint:
    position: tuple
    E: np.ndarray
    H: np.ndarray


def _scan_and_bisect(spec, n_samples):
    k = spec.k0
    a = spec.radius
    V = spec.v_number
    u = np.linspace(V * 1e-6, V * (1 - 1e-9), n_samples)
    n_eff = np.sqrt(spec.n_core**2 - (u / (k * a)) ** 2)
    # near-cutoff samples can underflow w to zero; those points carry no sign information
    with np.errstate(all="ignore"):
        g, _ = dispersion_function(spec, n_eff)
    sign_change = np.nonzero(np.signbit(g[:-1]) != np.signbit(g[1:]))[0]

    def f(x):
        return dispersion_function(spec, x)[0]

    for i in sign_change:
        lo, hi = n_eff[i + 1], n_eff[i]
        try:
            root = bisect(f, lo, hi, xtol=1e-15, maxiter=200)
        except (RuntimeError, ValueError) as exc:
            raise NonConvergence(f"bisection failed in [{lo}, {hi}]: {exc}") from exc
        root, resid = _polish(spec, root)
        if resid < 1e-10:
            return root, resid
    return None, None


def _polish(spec, root, steps=8):
    """Pick the float near ``root`` with the smallest |G|.

    Returns the root and its normalized residual, the relative size of a
    Newton step |G / G'| / n_eff (the term-scaled value is used only to
    reject spurious sign changes).
    """
    cands = [root]
    lo = hi = root
    for _ in range(steps):
        lo, hi = np.nextafter(lo, -np.inf), np.nextafter(hi, np.inf)
        cands += [lo, hi]
    cands = np.array(cands)
    val, scale = dispersion_function(spec, cands)
    i = int(np.argmin(np.abs(val)))
    best = float(cands[i])
    if abs(val[i]) > 1e-9 * scale[i]:
        return best, np.inf
    dn = 1e-7 * (spec.n_core - spec.n_clad)
    hi_n = min(best + dn, spec.n_core * (1 - 1e-15))
    lo_n = max(best - dn, spec.n_clad * (1 + 1e-15))
    slope = (dispersion_function(spec, hi_n)[0] - dispersion_function(spec, lo_n)[0]) / (hi_n - lo_n)
    return best, float(abs(val[i] / slope) / best)


def _neff(spec, n_samples=10_000):
    root, resid = _scan_and_bisect(spec, n_samples)
    if root is None:
        raise NoGuidedMode(
            f"no resolvable HE11 root in ({spec.n_clad}, {spec.n_core}) for "
            f"V={spec.v_number:.4g}; the mode is unguided or too close to cutoff")
    return root, resid


def solve_he11(spec, n_samples=10_000, rel_step=1e-4):
    """Solve the HE11 mode of ``spec``.

    The dispersion function is scanned on ``n_samples`` points uniform in the
    core transverse parameter u, the lowest-u sign change is refined by
    bisection and accepted only if its normalized residual is small (J1 zeros
    are removed analytically, so no poles remain). The group index is a
    central difference of beta(omega) at fixed material indices.
    """
    n_eff, resid = _neff(spec, n_samples)

    n_g_pts = []
    for sgn in (-1, 1):
        lam = spec.wavelength / (1 + sgn * rel_step)
        sub = FiberSpec(spec.radius, lam, spec.n_core, spec.n_clad)
        n_g_pts.append(_neff(sub, n_samples)[0] * sub.k0)
    k = spec.k0
    n_group = (n_g_pts[1] - n_g_pts[0]) / (2 * rel_step * k)

    a = spec.radius
    beta = n_eff * k
    h = np.sqrt(spec.n_core**2 * k**2 - beta**2)
    q = np.sqrt(beta**2 - spec.n_clad**2 * k**2)
    u, w = h * a, q * a
    j0, j1, j2, k0_, k1, k2 = _bessel_terms(u, w)
    X = 0.5 * (j0 - j2) / (u * j1)
    Y = -0.5 * (k0_ + k2) / (w * k1)
    b = n_eff * (1 / u**2 + 1 / w**2) / (X + Y)
    outer_ratio = j1 / k1

    trial = ModeSolution(spec, n_eff, n_group, h, q, b, outer_ratio, 1.0, residual=resid)
    energy = _radial_energy(trial)
    return ModeSolution(spec, n_eff, n_group, h, q, b, outer_ratio,
                        1.0 / np.sqrt(energy), residual=resid)


def radial_profiles(mode, r):
    """Radial amplitude functions of the quasi-linear mode polarized along phi0 = 0.

    Returns (R, P, Z, HR, HP, HZ, n2) such that, with psi = phi - phi0,

        E = (i R cos psi, i P sin psi, Z cos psi)
        Z0 H = (i HR sin psi, i HP cos psi, HZ sin psi)

    in the (r, phi, z) basis, for the forward (+z) propagating mode.
    """
    r = np.asarray(r, dtype=float)
    spec = mode.spec
    a = spec.radius
    k = spec.k0
    beta = mode.prop_const
    b = mode.b
    inside = r < a
    out = {}

    x_in = mode.h * np.where(inside, r, 0.0)
    j0, j1, j2 = jv(0, x_in), jv(1, x_in), jv(2, x_in)
    Zi = j1
    Zpi = mode.h * 0.5 * (j0 - j2)
    Zoi = mode.h * 0.5 * (j0 + j2)  # J1(hr)/r, finite on axis
    kap_i = mode.h**2

    x_out = mode.q * np.where(inside, a, r)
    k0_, k1, k2 = kv(0, x_out), kv(1, x_out), kv(2, x_out)
    Zo = mode.outer_ratio * k1
    Zpo = -mode.outer_ratio * mode.q * 0.5 * (k0_ + k2)
    Zoo = mode.outer_ratio * mode.q * 0.5 * (k2 - k0_)
    kap_o = -mode.q**2

    Z = np.where(inside, Zi, Zo)
    Zp = np.where(inside, Zpi, Zpo)
    Zr = np.where(inside, Zoi, Zoo)
    kap = np.where(inside, kap_i, kap_o)
    n2 = np.where(inside, spec.n_core**2, spec.n_clad**2)

    s = mode.amp
    out = (
        s * (beta * Zp - k * b * Zr) / kap,
        s * (-beta * Zr + k * b * Zp) / kap,
        s * Z,
        s * (-beta * b * Zp + k * n2 * Zr) / kap,
        s * (-beta * b * Zr + k * n2 * Zp) / kap,
        -s * b * Z,
        n2,
    )
    return out


def mode_field(mode, position, pol_azimuth=0.0, direction=1):
    """Complex E and H of the quasi-linear HE11 mode at cylindrical ``position``.

    ``pol_azimuth`` is the azimuth of the principal polarization axis,
    ``direction`` is +1 (forward, e^{+i beta z}) or -1 (backward).
    """
    r, phi, z = (float(v) for v in position)
    R, P, Zf, HR, HP, HZ, _ = (float(v) for v in radial_profiles(mode, r))
    psi = phi - pol_azimuth
    c, s = np.cos(psi), np.sin(psi)
    E = np.array([1j * R * c, 1j * P * s, Zf * c])
    H = np.array([1j * HR * s, 1j * HP * c, HZ * s]) / Z0
    if direction == -1:
        E[2] = -E[2]
        H[:2] = -H[:2]
    elif direction != 1:
        raise ValidationError("direction must be +1 or -1")
    phase = np.exp(1j * direction * mode.prop_const * z)
    return FieldPoint((r, phi, z), E * phase, H * phase)


def _radial_energy(mode, rtol=1e-13):
    """Azimuth-integrated energy integral, analytic in phi (each cos^2/sin^2 gives pi)."""
    a = mode.spec.radius

    def density(x):
        R, P, Z, *_, n2 = radial_profiles(mode, a * x)
        return np.pi * n2 * (R * R + P * P + Z * Z) * x * a * a

    inner, e1 = quad(density, 0.0, 1.0, epsabs=0.0, epsrel=rtol, limit=200)
    outer, e2 = quad(density, 1.0, np.inf, epsabs=0.0, epsrel=rtol, limit=200)
    return inner + outer


def _energy_quadrature(mode, rtol=1e-12):
    """int n^2 |E|^2 dA by adaptive radial quadrature on a uniform azimuth grid.

    The azimuth grid is doubled until two successive totals agree to ``rtol``;
    the radial range is split at the core boundary and the outer integral is
    truncated where the evanescent tail has dropped below ``rtol``.
    """
    a = mode.spec.radius
    # |E|^2 ~ exp(-2 q r); pick the cutoff where the tail is below rtol
    cutoff = 1.0 + max(12.0, 0.5 * np.log(1.0 / rtol) + 10.0) * mode.decay_length / a

    def total(n_phi):
        phis = np.arange(n_phi) * (2 * np.pi / n_phi)
        c2, s2 = np.cos(phis) ** 2, np.sin(phis) ** 2

        def density(x):
            R, P, Z, *_, n2 = radial_profiles(mode, a * x)
            ang = (R * R + Z * Z) * c2 + P * P * s2
            return n2 * ang.sum() * (2 * np.pi / n_phi) * x * a * a

        acc = 0.0
        for lo, hi in ((0.0, 1.0), (1.0, cutoff)):
            val, err = quad(density, lo, hi, epsabs=0.0, epsrel=rtol, limit=400)
            if err > 100 * rtol * abs(val):
                raise QuadratureNotConverged(
                    f"radial quadrature error {err:.3g} on [{lo}, {hi}]a")
            acc += val
        return acc

    n_phi = 4
    prev = total(n_phi)
    for _ in range(6):
        n_phi *= 2
        cur = total(n_phi)
        if abs(cur - prev) <= rtol * abs(cur):
            return cur
        prev = cur
    raise QuadratureNotConverged(f"azimuthal refinement did not settle (last {cur!r})")


def effective_mode_area(mode, probe, polarization="total", pol_azimuth=None,
                        convention=None):
    """Effective mode area at the cylindrical position ``probe`` (m^2).

    ``polarization`` is "total" (|E|^2 in the denominator) or a unit 3-vector
    in the local (r, phi, z) basis (|u . E|^2). ``pol_azimuth`` selects the
    quasi-linear polarization of the mode; by default it is aligned with the
    probe azimuth. ``convention`` defaults to the mode's ``norm`` tag: "dos"
    divides by the group index, "energy" is the bare energy ratio. Returns
    ``inf`` where the projected field vanishes.
    """
    convention = convention or mode.norm
    r, phi, z = (float(v) for v in probe)
    if pol_azimuth is None:
        pol_azimuth = phi
    fp = mode_field(mode, (r, phi, z), pol_azimuth)
    if isinstance(polarization, str):
        if polarization != "total":
            raise ValidationError(f"unknown polarization {polarization!r}")
        local = float(np.sum(np.abs(fp.E) ** 2))
    else:
        u = np.asarray(polarization, dtype=float)
        local = float(abs(np.dot(u, fp.E)) ** 2)
    eps_local = mode.spec.n_core**2 if r < mode.spec.radius else mode.spec.n_clad**2
    denom = eps_local * local
    if convention == "dos":
        denom *= mode.n_group
    elif convention != "energy":
        raise ValidationError(f"unknown area convention {convention!r}")
    if denom == 0.0:
        return np.inf
    return mode.energy_integral / denom
