"""Thomas-Fermi and pseudo-relativistic Hartree-Fock tools for heavy atoms."""

__version__ = "0.1.0"

from .errors import KindError, ParameterError, SingularityError, SolverError
from .params import KAPPA_CRITICAL, PhysicalParams

__all__ = [
    "__version__",
    "KAPPA_CRITICAL",
    "PhysicalParams",
    "ParameterError",
    "SingularityError",
    "KindError",
    "SolverError",
]
