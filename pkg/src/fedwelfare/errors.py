"""Exception types shared across the package."""


class FedWelfareError(Exception):
    """Base class for all package errors."""


class StructuralError(FedWelfareError, ValueError):
    """Parameter vectors with incompatible layouts were combined."""


class ValidationError(FedWelfareError, ValueError):
    """An argument violated a documented precondition."""


class ConfigurationError(FedWelfareError, ValueError):
    """A scenario or method configuration is invalid."""


class FederationTerminated(FedWelfareError):
    """Raised when no admissible active set remains."""
