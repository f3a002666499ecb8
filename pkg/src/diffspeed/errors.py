"""Exception hierarchy mapped to CLI exit codes."""


class DiffspeedError(Exception):
    exit_code = 1
    category = "error"


class ConfigError(DiffspeedError):
    exit_code = 2
    category = "config"


class DataError(DiffspeedError):
    exit_code = 3
    category = "data"


class NumericalError(DiffspeedError):
    exit_code = 4
    category = "numerical"
