"""Structured exceptions shared across the package."""

from __future__ import annotations


class ShockKinError(Exception):
    """Base class; ``details`` carries machine-readable context."""

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.details = details


class DomainError(ShockKinError, ValueError):
    """A momentum value left the declared interval [P-, P+]."""


class UnsupportedFeatureError(ShockKinError, NotImplementedError):
    pass


class NonCoerciveError(ShockKinError, ValueError):
    """The Legendre infimum sits on the edge of the momentum grid."""


class FlowEscapeError(DomainError):
    """An ODE flow left the admissible momentum interval."""


class CFLError(ShockKinError, ValueError):
    pass


class HypothesisViolation(ShockKinError, ValueError):
    """Input data break a structural assumption (sign of a rate, ordering)."""


class TruncationError(ShockKinError, ValueError):
    """A truncated series has a tail bound above the requested tolerance."""


class ConfigError(ShockKinError, ValueError):
    def __init__(self, message: str, line: int | None = None, **details):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message, line=line, **details)
        self.line = line


class TimeOrderError(ShockKinError, ValueError):
    """A time argument violates a required ordering such as t > s."""


class UnknownNameError(ConfigError):
    """A scenario references a model, field or kernel that is not registered."""
