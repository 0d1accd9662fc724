"""Exception hierarchy. CLI exit codes are keyed on these classes."""


class PruneError(Exception):
    exit_code = 1


class ConfigError(PruneError, ValueError):
    exit_code = 1


class DimensionError(PruneError, ValueError):
    exit_code = 1


class DataError(PruneError, ValueError):
    exit_code = 2


class FormatError(DataError):
    exit_code = 2


class NumericError(PruneError, ArithmeticError):
    exit_code = 3


class CapacityError(PruneError, ValueError):
    exit_code = 1
