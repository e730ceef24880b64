"""Exception types shared across the package."""


class SpadSimError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SpadSimError, ValueError):
    """A model, device or schedule parameter violates its invariants."""


class DomainError(SpadSimError, ValueError):
    """A function was evaluated outside its mathematical domain."""


class SaturationError(DomainError):
    """Observed count rate reaches the gate frequency, so the log inversion is undefined."""


class UnsupportedConfigurationError(ConfigurationError):
    """The operation does not support the requested mode."""
