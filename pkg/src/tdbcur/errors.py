"""Exception types shared across the package."""


class TdbCurError(Exception):
    """Base class for all errors raised by this package."""


class InputError(TdbCurError):
    """Invalid input data (non-finite entries, bad shapes, bad counts)."""


class ConfigError(TdbCurError):
    """Invalid run configuration."""


class FactorizationError(TdbCurError):
    """A matrix factorization could not be computed (rank deficiency)."""


class ConditioningError(TdbCurError):
    """A selection submatrix is numerically singular."""

    def __init__(self, message, pinv_norm=None):
        super().__init__(message)
        self.pinv_norm = pinv_norm


class SelectionError(TdbCurError):
    """Greedy index selection failed (rank-deficient interpolation system)."""


class ModelDefinitionError(TdbCurError):
    """A problem definition is inconsistent (e.g. stencil index out of range)."""


class StartupError(TdbCurError):
    """A multistep scheme was invoked without sufficient history."""


class StepError(TdbCurError):
    """A time step failed to converge.

    Carries the failing column index and the last residual norm when known.
    """

    def __init__(self, message, column=None, residual=None):
        super().__init__(message)
        self.column = column
        self.residual = residual


class StabilityError(TdbCurError):
    """An explicit integrator produced a non-finite state."""


class CapabilityError(TdbCurError):
    """Requested operation exceeds a documented size limit."""


class MetricError(TdbCurError):
    """An error metric is undefined for the given inputs."""
