"""Exception types shared across the simulator.

Every class carries a short ``code`` used by the command-line front end to
emit a machine-parseable failure line and pick an exit status.
"""


class AfcSimError(Exception):
    code = "ERROR"
    exit_status = 1


class InvalidInputError(AfcSimError, ValueError):
    code = "INVALID_INPUT"
    exit_status = 3


class ResolutionError(AfcSimError):
    """A grid cannot be built within the configured sample budget."""

    code = "RESOLUTION"
    exit_status = 4

    def __init__(self, message, required_samples=None):
        super().__init__(message)
        self.required_samples = required_samples


class DegenerateFitError(AfcSimError, ValueError):
    code = "DEGENERATE_FIT"
    exit_status = 5


class FitError(AfcSimError, RuntimeError):
    code = "FIT_FAILED"
    exit_status = 5

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class InsufficientCountsError(AfcSimError, ValueError):
    code = "INSUFFICIENT_COUNTS"
    exit_status = 6


class ConfigError(AfcSimError, ValueError):
    code = "CONFIG_INVALID"
    exit_status = 2

    def __init__(self, message, key=None, line=None):
        super().__init__(message)
        self.key = key
        self.line = line
