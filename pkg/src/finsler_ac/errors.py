"""Exception hierarchy shared by all modules."""


class FinslerError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(FinslerError, ValueError):
    """Malformed input: bad shapes, out-of-range parameters, unknown presets."""


class ZeroVectorError(ValidationError):
    """A metric-tensor operation received y = 0."""


class NonPositiveMetricError(FinslerError):
    """The metric is not positive at the requested point (e.g. Randers |b|_a >= 1)."""


class DegenerateMetricError(FinslerError):
    """The fundamental tensor is not positive definite.

    Attributes
    ----------
    eigenvalues : ndarray
        Smallest eigenvalues found at the offending points.
    """

    def __init__(self, message, eigenvalues=None):
        super().__init__(message)
        self.eigenvalues = eigenvalues


class StencilOutOfDomainError(FinslerError):
    """A finite-difference stencil would leave an open-box chart."""


class LegendreError(FinslerError):
    """Newton iteration for the Legendre transform did not converge."""

    def __init__(self, message, residual=None, index=None):
        super().__init__(message)
        self.residual = residual
        self.index = index


class DegenerateFlagError(ValidationError):
    """Flag pole and transverse edge are (numerically) parallel."""


class GeodesicError(FinslerError):
    """Geodesic integration or shooting failed."""


class SolverError(FinslerError):
    """The Allen-Cahn solver broke down (dt underflow).

    Attributes
    ----------
    report : ResidualReport or None
        Partial report at the time of failure.
    """

    def __init__(self, message, report=None, field=None):
        super().__init__(message)
        self.report = report
        self.field = field


class InadmissibleParametersError(ValidationError):
    """Estimate parameters fall outside a theorem's admissible window."""


class ResidualGateError(FinslerError):
    """A field handed to an estimate is not a converged solution."""
