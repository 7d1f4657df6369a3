"""Exception types shared by all atomscope modules."""

from __future__ import annotations


class ParameterError(ValueError):
    """Raised when an input violates a documented precondition."""


class SingularityError(ParameterError):
    """Raised when a quantity is requested at a singular point (e.g. x = 0)."""


class KindError(TypeError):
    """Raised when a radial function of the wrong kind or grid is supplied."""


class SolverError(RuntimeError):
    """Raised when an iterative or adaptive numerical method fails to converge."""
