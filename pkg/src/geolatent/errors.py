"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: configuration problems exit 2, data
problems exit 3, numerical failures exit 4.
"""


class GeolatentError(Exception):
    """Base class for all package errors."""


class ConfigurationError(GeolatentError):
    """Invalid configuration: bad bank/config parameters, schema violations."""


class InvalidInputError(GeolatentError):
    """A caller passed arguments that violate an operation's preconditions."""


class ShapeError(InvalidInputError):
    """Tensor shapes are incompatible for the requested operation."""


class MaskError(InvalidInputError):
    """An attention or softmax mask leaves no valid entries."""


class UndefinedMetricError(InvalidInputError):
    """The metric is undefined for the given inputs (e.g. zero target variance)."""


class DataError(GeolatentError):
    """Missing or malformed dataset/checkpoint files."""


class NumericalError(GeolatentError):
    """Non-finite values encountered where finite ones are required."""
