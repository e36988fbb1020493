"""Exception taxonomy shared across the toolkit."""

from __future__ import annotations


class SpotvolError(Exception):
    """Base class for all toolkit errors."""


class FormatError(SpotvolError):
    """Input bytes do not match the expected file format."""


class EmptyInputError(SpotvolError):
    """Input was present but contained no usable rows."""


class NoDataError(SpotvolError):
    """No data available for a requested asset-day."""


class ConfigError(SpotvolError):
    """Invalid configuration value or combination."""


class DomainError(SpotvolError):
    """Numeric input outside the mathematical domain of an operation."""


class LineageError(SpotvolError):
    """Artifacts presented together were not produced from the same inputs."""


class ConsistencyError(SpotvolError):
    """Internal numeric consistency check failed (e.g. symmetry residue)."""


class ShapeError(SpotvolError):
    """Tensor operands have incompatible shapes."""


class TrainingError(SpotvolError):
    """Optimization failed (non-finite loss or gradient)."""
