"""Exception types shared across the package."""


class FloodDAError(Exception):
    """Base class for package errors."""


class ValidationError(FloodDAError, ValueError):
    """Invalid data structure contents (grids, hydrographs, controls, configs)."""


class IntegrationError(FloodDAError, RuntimeError):
    """Numerical failure during model integration (non-finite depth, bad step)."""


class DomainError(FloodDAError, ValueError):
    """Input outside the mathematical domain of an operator."""


class ConstructionError(FloodDAError, RuntimeError):
    """A derived object (e.g. a transform) could not be built from its sample."""


class ConfigurationError(FloodDAError, ValueError):
    """Inconsistent or incomplete run configuration."""


class ObservationError(FloodDAError, ValueError):
    """Observation set inconsistent with the model trajectory or grid."""
