"""Seedable dynamic demographic microsimulation with household-size alignment."""

from .errors import ConfigError, DomainError, IntegrityError, ModelError
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "ConfigError", "DomainError", "IntegrityError", "ModelError"]
