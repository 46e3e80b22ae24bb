"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: usage problems -> 1, data problems -> 2,
numerical failures -> 3.
"""


class BinsceneError(Exception):
    exit_code = 2


class InvalidInputError(BinsceneError, ValueError):
    pass


class ConfigurationError(BinsceneError, ValueError):
    exit_code = 1


class DegenerateStatisticsError(BinsceneError, ValueError):
    pass


class NonInvertibleError(ConfigurationError):
    pass


class GeometryError(BinsceneError, ValueError):
    pass


class DataError(BinsceneError, OSError):
    pass


class NumericalError(BinsceneError, ArithmeticError):
    exit_code = 3
