"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ShapeError(ValueError):
    """Array dimensions do not agree."""


class MatrixError(ValueError):
    """A matrix argument violates a structural requirement (e.g. not PD)."""


class NearSingularError(MatrixError):
    """A conditioning block or correlation matrix is numerically singular."""


class DegenerateSampleError(ValueError):
    """A sample carries no information for the requested statistic."""


class DegenerateMarginError(ValueError):
    """A data column is constant (usually all zero) where variation is required."""


class InsufficientDataError(ValueError):
    """Fewer observations than the estimator needs."""


class InitializationError(RuntimeError):
    """The optimizer could not start from the supplied point."""


class ConfigError(ValueError):
    """A run configuration failed validation."""


class DataFormatError(ValueError):
    """An input file could not be parsed as a count table."""
