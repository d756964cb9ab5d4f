"""Exception types shared across modules."""


class ConfigError(ValueError):
    """Invalid or incomplete configuration."""


class DataError(ValueError):
    """Malformed or inconsistent input file or array."""
