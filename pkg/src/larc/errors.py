"""Exception types; each maps to a CLI exit code."""


class LarcError(Exception):
    exit_code = 1


class ConfigError(LarcError, ValueError):
    exit_code = 2


class DataError(LarcError, ValueError):
    exit_code = 3


class NumericalFailure(LarcError, ArithmeticError):
    exit_code = 4
