"""Exception types shared across the package."""


class EffektorError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(EffektorError, ValueError):
    """Invalid configuration (bad spec, bad hyperparameters, bad config file)."""


class DataError(EffektorError, ValueError):
    """Input data violates a precondition (NaN values, shape mismatch)."""


class CalibrationError(EffektorError, ValueError):
    """Noise calibration is impossible (e.g. constant signal)."""


class FitError(EffektorError, RuntimeError):
    """A learner could not produce a fitted model."""


class EstimationError(EffektorError, RuntimeError):
    """An effect estimator could not produce a curve."""


class OracleError(EffektorError, RuntimeError):
    """A test oracle cannot be evaluated (e.g. zero-probability bin)."""


class AnalyticUnavailableError(EffektorError, ValueError):
    """No closed-form effect exists for the requested setting."""
