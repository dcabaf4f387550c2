"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes, so every failure a user can trigger with
bad input should surface as one of them.
"""


class ConfigError(ValueError):
    """Invalid run or synthetic-data configuration."""


class DataError(Exception):
    """Base class for problems with experiment data."""


class SchemaError(DataError):
    """A required column is missing or the header is malformed."""


class ParseError(DataError):
    """A cell could not be parsed into the expected type."""


class DomainError(DataError):
    """A value parsed fine but lies outside its declared domain."""


class FitError(DataError):
    """An estimator cannot be fitted on the given data."""


class UnsupportedError(ValueError):
    """The requested estimator/option combination is not supported."""


class InfeasibleError(Exception):
    """An optimization problem has no feasible assignment."""


class CapacityError(Exception):
    """An instance is too large for exhaustive enumeration."""


class UndefinedMetricError(ArithmeticError):
    """A metric is undefined for the given inputs (e.g. no matched records)."""
