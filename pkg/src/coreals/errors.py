"""Exception types, mapped to CLI exit codes by the command-line front end."""


class ConfigError(ValueError):
    """Invalid configuration or parameter value (CLI exit code 2)."""


class DataError(ValueError):
    """Malformed, inconsistent, or out-of-range input data (CLI exit code 3)."""


class NumericalError(RuntimeError):
    """A linear solve or factorization failed beyond recovery (CLI exit code 4)."""
