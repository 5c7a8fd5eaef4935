"""Exception hierarchy; the CLI maps each family to an exit code."""


class DiffInferError(Exception):
    exit_code = 1


class ConfigError(DiffInferError, ValueError):
    """Invalid configuration or argument."""

    exit_code = 2


class ShapeError(ConfigError):
    pass


class InputError(ConfigError):
    """Non-finite or otherwise unusable numeric input."""


class DataError(DiffInferError, ValueError):
    """Problems reading or transforming tabular data."""

    exit_code = 3


class DivergenceError(DiffInferError, ArithmeticError):
    exit_code = 4

    def __init__(self, message, step=None, epoch=None):
        super().__init__(message)
        self.step = step
        self.epoch = epoch


class SingularityError(DiffInferError, ArithmeticError):
    exit_code = 4
