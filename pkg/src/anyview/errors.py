"""Exception hierarchy shared by all anyview modules.

Each error class carries the CLI exit code it maps to.
"""


class AnyViewError(Exception):
    exit_code = 1


class ConfigError(AnyViewError, ValueError):
    exit_code = 2


class InvalidArgumentError(ConfigError):
    pass


class DataError(AnyViewError):
    exit_code = 3


class ShapeError(DataError, ValueError):
    pass


class InvalidIntrinsicsError(DataError, ValueError):
    pass


class DegeneratePoseError(DataError, ValueError):
    pass


class NumericError(AnyViewError, ArithmeticError):
    exit_code = 4
