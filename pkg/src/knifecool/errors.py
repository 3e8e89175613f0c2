"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value; ``key`` names the offending entry when known."""

    def __init__(self, message, key=None):
        self.key = key
        if key is not None:
            message = f"{key}: {message}"
        super().__init__(message)


class NumericalError(RuntimeError):
    """Base class for failures of a numerical procedure."""


class SimulationError(NumericalError):
    """Trajectory left the configured trap extent."""

    def __init__(self, message, step=None):
        self.step = step
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)


class FilterFault(NumericalError):
    """A non-finite sample reached a filter; its state is no longer usable."""


class FitError(NumericalError):
    """Fit did not converge or ended pinned at a bound."""


class CalibrationError(NumericalError):
    """Calibration input does not support a meaningful result."""
