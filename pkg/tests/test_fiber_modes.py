import numpy as np
import pytest
from scipy.optimize import brentq
from scipy.special import jv, jvp, kv, kvp

from nfcouple.errors import NoGuidedMode, ValidationError
from nfcouple.fiber_modes import (FiberSpec, effective_mode_area, mode_field, radial_profiles,
                                  silica_index, solve_he11)

from conftest import N_CORE, RADIUS, WAVELENGTH


def snyder_love_neff(a, lam, n1, n2=1.0):
    """Independent HE11 root of the textbook eigenvalue equation (derivative form)."""
    k = 2 * np.pi / lam

    def f(neff):
        u = k * a * np.sqrt(n1**2 - neff**2)
        w = k * a * np.sqrt(neff**2 - n2**2)
        jj = jvp(1, u) / (u * jv(1, u))
        kk = kvp(1, w) / (w * kv(1, w))
        lhs = (jj + kk) * (jj + (n2 / n1) ** 2 * kk)
        rhs = (neff / n1) ** 2 * (1 / u**2 + 1 / w**2) ** 2
        return lhs - rhs

    # HE11 lies below the first J1 zero in u
    u_max = 3.8317 * (1 - 1e-9)
    lo = max(n2, np.sqrt(max(n1**2 - (u_max / (k * a)) ** 2, 0.0))) + 1e-12
    return brentq(f, lo, n1 - 1e-12, xtol=1e-15)


def test_silica_index_near_666nm():
    assert silica_index(666e-9) == pytest.approx(1.4563, abs=2e-4)


def test_fiberspec_rejects_bad_geometry():
    with pytest.raises(ValidationError):
        FiberSpec(-1e-9, WAVELENGTH, N_CORE)
    with pytest.raises(ValidationError):
        FiberSpec(RADIUS, WAVELENGTH, 1.0, 1.2)


def test_reference_geometry_matches_textbook_eigenvalue():
    spec = FiberSpec(RADIUS, WAVELENGTH, N_CORE)
    mode = solve_he11(spec)
    assert 1.0 < mode.n_eff < N_CORE
    assert mode.n_eff == pytest.approx(snyder_love_neff(RADIUS, WAVELENGTH, N_CORE), abs=1e-11)
    assert mode.residual < 1e-12


def test_v_number_single_mode():
    spec = FiberSpec(RADIUS, WAVELENGTH, N_CORE)
    v = 2 * np.pi * RADIUS / WAVELENGTH * np.sqrt(N_CORE**2 - 1)
    assert spec.v_number == pytest.approx(v, rel=1e-14)
    assert v == pytest.approx(1.30, abs=0.01) and v < 2.405


def test_large_core_approaches_core_index():
    mode = solve_he11(FiberSpec(10e-6, WAVELENGTH, N_CORE))
    assert mode.n_eff > 1.44


def test_group_index_exceeds_phase_index(ref_mode):
    assert ref_mode.n_group >= ref_mode.n_eff


def test_n_eff_increases_with_radius():
    radii = np.linspace(100e-9, 300e-9, 9)
    n = [solve_he11(FiberSpec(r, WAVELENGTH, N_CORE)).n_eff for r in radii]
    assert np.all(np.diff(n) > 0)


def test_no_guided_mode_for_index_matched_limit():
    with pytest.raises((NoGuidedMode, ValidationError)):
        solve_he11(FiberSpec(RADIUS, WAVELENGTH, 1.0 + 1e-15))


def test_tangential_fields_continuous_at_surface(ref_mode):
    a = ref_mode.spec.radius
    worst = 0.0
    for phi in np.linspace(0, 2 * np.pi, 360, endpoint=False):
        fin = mode_field(ref_mode, (a * (1 - 1e-13), phi, 0.0))
        fout = mode_field(ref_mode, (a * (1 + 1e-13), phi, 0.0))
        for v_in, v_out in ((fin.E[1:], fout.E[1:]), (fin.H, fout.H)):
            scale = max(np.abs(v_in).max(), np.abs(v_out).max())
            worst = max(worst, np.abs(v_in - v_out).max() / scale)
    assert worst < 1e-9


def test_normalization_integral_is_one(ref_mode):
    assert ref_mode.energy_integral == pytest.approx(1.0, rel=1e-6)


def test_evanescent_decay_monotone(ref_mode):
    a = ref_mode.spec.radius
    r = a + np.linspace(0, 200e-9, 41)
    R, P, Z = radial_profiles(ref_mode, r)[:3]
    intensity = R**2 + Z**2
    assert np.all(np.diff(intensity) < 0)
    assert intensity[-1] / intensity[0] < 1


def test_on_axis_field_transverse(ref_mode):
    f = mode_field(ref_mode, (0.0, 0.0, 0.0))
    assert abs(f.E[0]) > 0
    assert abs(f.E[2]) < 1e-12 * abs(f.E[0])


def _area_oracle(mode, probe):
    """2-D Gauss-Legendre x uniform-azimuth quadrature of n^2 |E|^2 over the cross-section."""
    a = mode.spec.radius
    outer = a + 12 / mode.q
    xg, wg = np.polynomial.legendre.leggauss(200)
    pieces = []
    for lo, hi in ((0.0, a), (a, a + 2 / mode.q), (a + 2 / mode.q, outer)):
        pieces.append((0.5 * (hi - lo) * xg + 0.5 * (hi + lo), 0.5 * (hi - lo) * wg))
    r = np.concatenate([p[0] for p in pieces])
    w = np.concatenate([p[1] for p in pieces])
    phis = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    R, P, Z, _, _, _, n2 = radial_profiles(mode, r)
    total = 0.0
    for phi in phis:
        c, s = np.cos(phi), np.sin(phi)
        total += np.sum(w * r * n2 * ((R * c) ** 2 + (P * s) ** 2 + (Z * c) ** 2))
    total *= 2 * np.pi / phis.size
    f = mode_field(mode, probe, probe[1])
    return total / (float(np.sum(np.abs(f.E) ** 2)) * mode.spec.n_clad**2)


def test_mode_area_matches_independent_quadrature(ref_mode):
    probe = (ref_mode.spec.radius + 10e-9, 0.0, 0.0)
    area = effective_mode_area(ref_mode, probe, convention="energy")
    assert area == pytest.approx(_area_oracle(ref_mode, probe), rel=1e-3)
    # order lambda^2
    assert 0.05 < area / WAVELENGTH**2 < 5


def test_mode_area_increases_outward(ref_mode):
    a = ref_mode.spec.radius
    areas = [effective_mode_area(ref_mode, (a + d, 0.3, 0.0)) for d in
             np.linspace(1e-9, 400e-9, 12)]
    assert np.all(np.diff(areas) > 0)
    assert effective_mode_area(ref_mode, (a + 20e-6, 0.0, 0.0)) > 1e6 * areas[0]
