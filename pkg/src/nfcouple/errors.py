"""Exception hierarchy shared by the library and the command line.

Each exception carries the process exit code the CLI maps it to.
"""


class NfcoupleError(Exception):
    exit_code = 1


class ValidationError(NfcoupleError, ValueError):
    exit_code = 2


class ConfigError(ValidationError):
    pass


class NumericalError(NfcoupleError, ArithmeticError):
    exit_code = 3


class NoGuidedMode(NumericalError):
    pass


class NonConvergence(NumericalError):
    pass


class QuadratureNotConverged(NumericalError):
    pass


class DegenerateEigenvalues(NumericalError):
    pass


class ZeroNormalization(NumericalError):
    pass


class DegenerateDesign(NumericalError):
    pass


class EmptySpectrum(ValidationError):
    pass


class FormatError(NfcoupleError, IOError):
    """Malformed input file. ``offset`` is the byte (or line) where parsing failed."""

    exit_code = 4

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
