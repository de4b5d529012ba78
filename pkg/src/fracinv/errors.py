"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: configuration/schema problems
are exit 2, violated mathematical assumptions exit 3, and numerical
failures (singular systems, overflow, non-finite data) exit 4.
"""

from __future__ import annotations


class FracinvError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(FracinvError):
    """Invalid run configuration; carries the offending field path."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"config field '{path}': {message}")


class SizingError(FracinvError):
    """Grid or window sizes too small for the requested stencils."""


class DataError(FracinvError):
    """Non-finite or malformed numeric input."""


class DomainError(FracinvError):
    """Evaluation outside the mathematically valid domain."""


class AssumptionError(FracinvError):
    """A structural hypothesis of the method is violated by the inputs."""


class ConstructionError(FracinvError):
    """A geometric construction cannot satisfy its stated bounds."""


class SolverError(FracinvError):
    """Linear-algebra failure inside a solver (singular or ill-conditioned)."""
