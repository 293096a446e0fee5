"""Exception types raised by the EM machinery."""


class MCEMError(Exception):
    """Base class for errors raised by this package."""


class CapabilityError(MCEMError, TypeError):
    """The model does not provide an operation the algorithm needs."""


class DomainError(MCEMError, ValueError):
    """A parameter value fell outside the parameter space.

    Attributes
    ----------
    component : str or None
        Name of the offending parameter component, when known.
    """

    def __init__(self, message, component=None):
        super().__init__(message)
        self.component = component


class ConvergenceError(MCEMError, RuntimeError):
    """An inner numerical routine failed to converge."""


class ConfigError(MCEMError, ValueError):
    """A configuration value is missing, malformed or inconsistent."""
