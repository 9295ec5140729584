import numpy as np
import pytest

from nfcouple.emitter_dynamics import calibrate_emission_model
from nfcouple.fiber_modes import FiberSpec, solve_he11

RADIUS = 130e-9
WAVELENGTH = 666e-9
N_CORE = 1.4563


@pytest.fixture(scope="session")
def ref_spec():
    return FiberSpec.silica(RADIUS, WAVELENGTH)


@pytest.fixture(scope="session")
def ref_mode(ref_spec):
    return solve_he11(ref_spec)


@pytest.fixture(scope="session")
def model():
    """Calibrated emitter with a clean confocal pair and a background-laden fiber pair."""
    return calibrate_emission_model(channel_groups=[
        (("conf_a", "conf_b"), 7.7e3, 100.0, 0.0),
        (("fib_a", "fib_b"), 19.6e3, 160.0, 635.0),
    ])


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    """Print the one-line verdict of every acceptance criterion that ran."""
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance checks")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
