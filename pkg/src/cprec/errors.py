"""Exception hierarchy. Each class maps onto a CLI exit code."""


class CprecError(Exception):
    exit_code = 1


class ConfigError(CprecError, ValueError):
    """Invalid configuration or usage."""

    exit_code = 1


class DataError(CprecError, ValueError):
    """Malformed input data, schema violations, bad indices."""

    exit_code = 2


class DivergenceError(CprecError, RuntimeError):
    """Training produced a non-finite loss or parameter."""

    exit_code = 3
