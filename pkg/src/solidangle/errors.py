"""Exception taxonomy shared across the package.

ConfigError signals malformed user input (CLI exit code 1); the numeric
errors below signal domain violations or convergence failures (exit code 2).
"""

from __future__ import annotations

__all__ = [
    "ConfigError",
    "DomainError",
    "ProximityError",
    "PoleError",
    "ConvergenceError",
    "ExtractionError",
    "FuseError",
    "MeshFormatError",
]


class ConfigError(ValueError):
    """Malformed configuration: unknown manifold kind, bad flag value."""


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation."""


class ProximityError(DomainError):
    """Evaluation point is on (or too close to) the submanifold."""


class PoleError(RuntimeError):
    """No projection pole clears the secant-image margin."""


class ConvergenceError(RuntimeError):
    """An iterative scheme hit its cap without meeting tolerance."""


class ExtractionError(RuntimeError):
    """Level-set extraction met an unresolvable cell configuration."""


class FuseError(ExtractionError):
    """Interior mesh and collar could not be joined along the seam."""


class MeshFormatError(ValueError):
    """Mesh file could not be parsed or has inconsistent counts."""
