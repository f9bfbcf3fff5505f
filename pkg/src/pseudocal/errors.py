"""Exception types shared across the package."""


class GuardError(RuntimeError):
    """A size guard refused an enumeration that would be too expensive."""


class InvariantViolation(AssertionError):
    """An exact identity or invariant failed to hold."""


class ConfigError(ValueError):
    """Invalid parameters or experiment configuration."""
