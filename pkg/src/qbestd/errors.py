"""Error taxonomy shared by the library and the CLI.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
DegenerateError -> 4. Anything else is a bug and propagates.
"""


class QbeError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(QbeError):
    """Invalid or inconsistent configuration."""

    exit_code = 2


class DataError(QbeError):
    """Malformed, missing or mutually inconsistent data files."""

    exit_code = 3


class DegenerateError(QbeError):
    """Statistics cannot be formed (no targets, zero variance, ...)."""

    exit_code = 4
