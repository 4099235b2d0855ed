"""Exceptions shared across the pipeline (the CLI maps these to exit codes)."""


class ConfigError(ValueError):
    """Bad or unknown configuration (exit code 2)."""


class DataError(RuntimeError):
    """Missing or malformed dataset artifacts (exit code 3)."""


class NumericalError(RuntimeError):
    """Non-finite values where finite ones are required (exit code 4)."""
