"""Dipole emission into optical nanofibers and photon-statistics analysis of the coupled emitter."""

from .errors import (ConfigError, FormatError, NfcoupleError, NonConvergence, NoGuidedMode,
                     NumericalError, ValidationError)

__version__ = "0.1.0"

__all__ = ["ConfigError", "FormatError", "NfcoupleError", "NonConvergence", "NoGuidedMode",
           "NumericalError", "ValidationError", "__version__"]
