"""Exception types shared across the package (CLI maps them to exit codes)."""


class ConfigError(Exception):
    """Invalid or unknown configuration key/value."""


class NumericalError(Exception):
    """Non-finite values or a failed numerical check."""


class ProtocolMismatchError(ValueError):
    """An evaluation protocol applied to a dataset that cannot feed it."""
