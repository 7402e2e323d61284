"""Exception hierarchy shared by the library and the command line.

Each class carries the process exit code the CLI maps it to.
"""


class CMCOError(Exception):
    exit_code = 1


class ConfigError(CMCOError, ValueError):
    """Invalid configuration, unreadable input, or an infeasible request."""

    exit_code = 2


class ShapeError(ConfigError):
    """Array shapes do not conform."""


class InfeasibleCalibrationError(ConfigError):
    def __init__(self, n_cal, alpha, minimum):
        self.n_cal = n_cal
        self.alpha = alpha
        self.minimum = minimum
        super().__init__(
            f"calibration set of {n_cal} samples is too small for alpha={alpha}: "
            f"need at least {minimum}"
        )


class NumericError(CMCOError, FloatingPointError):
    """A loss, gradient, or prediction became non-finite."""

    exit_code = 3


class ProvenanceError(CMCOError):
    """Calibration artifact settings disagree with the requested evaluation."""

    exit_code = 4
