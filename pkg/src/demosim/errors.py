"""Exception types shared across the engine."""


class DemosimError(Exception):
    """Base class for all engine errors."""


class IntegrityError(DemosimError):
    """A registry mutation would break referential integrity."""


class DomainError(DemosimError, ValueError):
    """An argument is outside the mathematical domain of an operation."""


class ModelError(DemosimError):
    """A model, covariate or rate-table key is missing."""


class ConfigError(DemosimError):
    """Invalid configuration or malformed input file."""


class ConvergenceWarning(UserWarning):
    """IPU could not fit one or more control categories."""
