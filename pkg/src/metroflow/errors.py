"""Exception hierarchy shared across the package.

The CLI maps each family onto a distinct exit code.
"""


class MetroflowError(Exception):
    exit_code = 1


class ConfigError(MetroflowError, ValueError):
    exit_code = 2


class DataError(MetroflowError, ValueError):
    exit_code = 3


class NumericError(MetroflowError, ArithmeticError):
    exit_code = 4


class DimensionError(DataError):
    """Tensor or array extents do not fit together."""


class UnknownStationError(DataError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class UndefinedMetricError(NumericError):
    """A metric has no finite value for the given input (e.g. WMAPE with zero actuals)."""


class StateError(MetroflowError, RuntimeError):
    """An object was used before it was prepared (e.g. scaler inversion before fit)."""
