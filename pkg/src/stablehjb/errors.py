"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Bad, missing or inconsistent experiment configuration."""


class UnsupportedScheduleError(ValueError):
    """Schedule tag with no known analytic tail bound."""


class PoisonedEstimateError(RuntimeError):
    """A Monte Carlo integrand returned a non-finite value."""

    def __init__(self, message, sample_index=None):
        super().__init__(message)
        self.sample_index = sample_index


class MissingGradientError(ValueError):
    """Pathwise estimator requested for a function without a declared gradient."""


class InconclusiveFitError(RuntimeError):
    """A decay fit could not be performed (too few points or all data in the noise floor)."""


class PicardDivergenceError(RuntimeError):
    """Fixed-point iteration failed to contract.

    Carries the measured residual ratio and, where available, the analytic
    contraction factor the iteration was expected to obey.
    """

    def __init__(self, message, empirical_factor=None, analytic_factor=None,
                 residuals=None):
        super().__init__(message)
        self.empirical_factor = empirical_factor
        self.analytic_factor = analytic_factor
        self.residuals = residuals


class AdmissibilityError(ValueError):
    """A control value escaped the admissible ball."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested accuracy."""

    def __init__(self, message, error_estimate=None):
        super().__init__(message)
        self.error_estimate = error_estimate
