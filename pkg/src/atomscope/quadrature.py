"""Thin wrapper around adaptive Gauss-Kronrod quadrature that never fails silently."""

from __future__ import annotations

import math
from typing import Callable

from scipy import integrate

from .errors import SolverError

#: Default relative tolerance for special-function quadratures.
RTOL = 1e-10
#: Hard cap on the number of adaptive subdivisions.
SUBDIVISION_CAP = 500

_IER_MESSAGES = {
    1: "subdivision cap reached",
    2: "roundoff error prevents the requested tolerance",
    3: "extremely bad integrand behaviour",
    4: "the algorithm does not converge",
    5: "the integral is probably divergent",
    6: "invalid input",
}


def adaptive_quad(
    func: Callable[[float], float],
    a: float,
    b: float,
    rtol: float = RTOL,
    atol: float = 0.0,
    limit: int = SUBDIVISION_CAP,
    **kwargs,
) -> float:
    """Integrate ``func`` over ``[a, b]`` and raise on non-convergence.

    Parameters
    ----------
    func : callable
        Scalar integrand.
    a, b : float
        Integration limits; ``b`` may be ``math.inf``.
    rtol, atol : float
        Relative and absolute tolerances handed to QUADPACK.
    limit : int
        Maximum number of subintervals.
    **kwargs
        Extra keyword arguments for :func:`scipy.integrate.quad` (``weight``,
        ``wvar``, ``points``).

    Returns
    -------
    float
        The integral.

    Raises
    ------
    SolverError
        If QUADPACK reports any failure or the result is not finite.
    """
    if "weight" in kwargs and kwargs["weight"] in ("sin", "cos") and math.isinf(b):
        # Fourier integrals use QAWF, whose tolerance is absolute only.
        out = integrate.quad(func, a, b, epsabs=max(atol, 1e-14), limlst=200, limit=limit,
                             full_output=1, **kwargs)
    else:
        out = integrate.quad(func, a, b, epsabs=atol, epsrel=rtol, limit=limit,
                             full_output=1, **kwargs)
    value, err = out[0], out[1]
    ier = _message_code(out[3]) if len(out) > 3 else 0
    if ier != 0 or not math.isfinite(value):
        reason = _IER_MESSAGES.get(ier, "non-finite result")
        raise SolverError(f"adaptive quadrature failed on [{a}, {b}]: {reason} "
                          f"(value={value}, error estimate={err})")
    return float(value)


def _message_code(message: str) -> int:
    text = message.lower()
    if "maximum number of subdivisions" in text or "maximum number of cycles" in text:
        return 1
    if "roundoff" in text:
        return 2
    if "bad integrand" in text or "extremely bad" in text:
        return 3
    if "does not converge" in text:
        return 4
    if "divergent" in text:
        return 5
    return 6
