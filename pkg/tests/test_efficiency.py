import warnings

import numpy as np
import pytest

from nfcouple.efficiency import (EfficiencyInputs, NegativeNonradiative, QEAboveUnity, beta,
                                 collection_fraction, coupling_efficiency, fiber_rate,
                                 free_space_rate, propagate_errors, quantum_efficiency)
from nfcouple.errors import ValidationError


def test_collection_fraction():
    assert collection_fraction(0.0) == 0.0
    assert collection_fraction(1.0) == pytest.approx(0.5)
    assert collection_fraction(0.32) == pytest.approx(0.5 * (1 - np.sqrt(1 - 0.32**2)), rel=1e-14)
    assert collection_fraction(0.32) == pytest.approx(0.02629, abs=5e-6)


def test_free_space_rate():
    assert free_space_rate(7.7e3, 1, 1, 1) == pytest.approx(7.7e3)
    g = free_space_rate(7.70e3, collection_fraction(0.32), 0.257, 0.65)
    assert 1.6e6 < g < 1.9e6


def test_fiber_rate():
    assert fiber_rate(19.6e3, 1, 1) == pytest.approx(19.6e3)
    assert fiber_rate(19.6e3, 0.0241, 0.65) == pytest.approx(1.942e5, rel=1e-3)


def test_beta_limits_and_bounds():
    assert beta(1.0, 0.0) == 1.0
    assert beta(0.0, 1.0) == 0.0
    lo, hi = coupling_efficiency(1.94e5, 1.7e6, 1.8e6)
    assert lo == pytest.approx(1.94e5 / (1.94e5 + 1.8e6))
    assert hi == pytest.approx(1.94e5 / (1.94e5 + 1.7e6))
    assert lo < hi


def test_quantum_efficiency():
    assert quantum_efficiency(1.894e6, 63e-9) == pytest.approx(0.1193, abs=5e-4)
    assert quantum_efficiency(1.994e6, 63e-9) == pytest.approx(0.1256, abs=5e-4)
    assert quantum_efficiency(1 / 63e-9, 63e-9) == pytest.approx(1.0)
    with pytest.warns(QEAboveUnity):
        assert quantum_efficiency(2 / 63e-9, 63e-9) == pytest.approx(2.0)


def test_golden_chain():
    rep = propagate_errors(EfficiencyInputs.reference())
    assert rep.gamma_nf == pytest.approx(1.94e5, rel=0.01)
    assert abs(100 * rep.beta_low - 9.5) <= 0.3
    assert abs(100 * rep.beta_high - 10.4) <= 0.3
    assert abs(100 * rep.sigmas["beta_low"] - 0.6) <= 0.2
    assert abs(100 * rep.sigmas["beta_high"] - 0.7) <= 0.2
    assert abs(100 * rep.qe_low - 11.8) <= 1.5
    assert abs(100 * rep.qe_high - 12.9) <= 1.5
    assert rep.free_space_source == "injected"


def test_geometric_free_space_inside_bounds():
    rep = propagate_errors(EfficiencyInputs.reference(free_space_bounds=None))
    assert rep.free_space_source == "geometric"
    assert 1.6e6 < rep.gamma_free_low == rep.gamma_free_high < 1.9e6


def test_zero_sigmas_give_zero_report_sigmas():
    inp = EfficiencyInputs(c_free=7.7e3, c_nf=19.6e3, na_eff=0.32, t_path=0.257, t_ges=0.0241,
                           eta=0.65, tau_tot=63e-9)
    rep = propagate_errors(inp, monte_carlo=True, n_draws=1000)
    assert all(v == 0 for v in rep.sigmas.values())
    assert all(v == 0 for v in rep.mc_sigmas.values())


def test_monte_carlo_agrees_with_first_order():
    rep = propagate_errors(EfficiencyInputs.reference(), monte_carlo=True, n_draws=100_000, seed=7)
    for k in ("gamma_nf", "beta_low", "beta_high", "qe_low", "qe_high"):
        assert rep.mc_sigmas[k] == pytest.approx(rep.sigmas[k], rel=0.15), k


def test_monte_carlo_seeded():
    a = propagate_errors(EfficiencyInputs.reference(), monte_carlo=True, n_draws=5000, seed=1)
    b = propagate_errors(EfficiencyInputs.reference(), monte_carlo=True, n_draws=5000, seed=1)
    assert a.mc_sigmas == b.mc_sigmas


def test_beta_monotone_in_fiber_counts():
    betas = [propagate_errors(EfficiencyInputs.reference(c_nf=c)).beta_low
             for c in (5e3, 1e4, 2e4, 4e4)]
    assert np.all(np.diff(betas) > 0)


def test_negative_nonradiative_flag():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", QEAboveUnity)
        with pytest.warns(NegativeNonradiative):
            rep = propagate_errors(EfficiencyInputs.reference(tau_tot=1e-6))
    assert rep.flags["negative_nonradiative"]


def test_report_dict_roundtrip_keys():
    d = propagate_errors(EfficiencyInputs.reference()).to_dict()
    assert d["tau_tot_s"] == pytest.approx(63e-9)
    assert "beta_low" in d and "gamma_nf_sigma_per_s" in d


@pytest.mark.parametrize("bad", [dict(c_nf=0.0), dict(eta=1.5), dict(t_ges=0.0),
                                 dict(tau_tot=-1.0), dict(eta_sigma=-0.1),
                                 dict(free_space_bounds=((2e6, 1e5), (1e6, 1e5)))])
def test_input_validation(bad):
    with pytest.raises(ValidationError):
        EfficiencyInputs.reference(**bad)
