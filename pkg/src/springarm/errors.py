"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument violates a documented physical or numeric bound."""


class StateError(RuntimeError):
    """An operation was called in the wrong order (e.g. backward before forward)."""


class ConfigError(Exception):
    """A configuration file or experiment setup is unusable."""
