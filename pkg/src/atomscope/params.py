"""Physical parameter bundle used throughout the package."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ParameterError

#: Critical coupling of the pseudo-relativistic Coulomb problem.
KAPPA_CRITICAL = 2.0 / math.pi


@dataclass(frozen=True)
class PhysicalParams:
    """Nuclear charge, electron number, spin states and fine-structure constant.

    Attributes
    ----------
    Z : float
        Nuclear charge (> 0).
    N : float
        Electron number (>= 0).
    q : int
        Number of spin states (>= 1).
    alpha : float
        Fine-structure constant (> 0).
    """

    Z: float
    N: float
    q: int = 2
    alpha: float = 1e-4

    def __post_init__(self):
        if not self.Z > 0:
            raise ParameterError(f"Z must be positive, got {self.Z}")
        if self.N < 0:
            raise ParameterError(f"N must be nonnegative, got {self.N}")
        if int(self.q) != self.q or self.q < 1:
            raise ParameterError(f"q must be a positive integer, got {self.q}")
        if not self.alpha > 0:
            raise ParameterError(f"alpha must be positive, got {self.alpha}")

    @property
    def kappa(self) -> float:
        """Coupling constant Z*alpha."""
        return self.Z * self.alpha

    @classmethod
    def from_kappa(cls, Z: float, N: float, kappa: float, q: int = 2) -> "PhysicalParams":
        """Build parameters with alpha = kappa / Z."""
        if not kappa > 0:
            raise ParameterError(f"kappa must be positive, got {kappa}")
        return cls(Z=Z, N=N, q=q, alpha=kappa / Z)
