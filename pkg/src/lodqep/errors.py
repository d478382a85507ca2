"""Exception hierarchy shared by all modules.

Configuration problems derive from :class:`ConfigError`, numerical
failures from :class:`SolverFailure`; the CLI maps the two families to
distinct exit codes.
"""


class ConfigError(ValueError):
    """Base class for invalid input or configuration."""


class ParameterError(ConfigError):
    pass


class AlignmentError(ConfigError):
    """Coefficient data does not align with the fine mesh lattice."""


class AssumptionViolation(ConfigError):
    """Diffusion coefficient is not strictly positive and finite."""


class SolverFailure(RuntimeError):
    """Base class for numerical failures."""


class FactorizationError(SolverFailure):
    pass


class SolverError(SolverFailure):
    pass


class ConvergenceError(SolverError):
    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class PatchConfigurationError(SolverFailure):
    """Corrector constraint block is rank deficient."""


class AggregationError(SolverFailure):
    pass
