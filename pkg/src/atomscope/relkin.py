"""Relativistic kinetic symbol, Daubechies functions, K_2 and kinetic inequality predicates.

Units: ``T(p) = sqrt(p^2 + alpha^-2) - 1/alpha`` is the unscaled symbol; the
physical kinetic energy is ``alpha^-1 T(p)``, which tends to ``p^2/2`` as
``alpha -> 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, NamedTuple, Union

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .errors import ParameterError, SolverError
from .quadrature import adaptive_quad
from .radial import RadialFunction, channel_laplacian

__all__ = [
    "KineticSymbol",
    "DaubechiesFunctional",
    "kinetic_symbol",
    "daubechies_g",
    "g_excess",
    "natale_bounds",
    "daubechies_G",
    "behg_bounds",
    "lt_F",
    "lt_F_bound",
    "bessel_K2",
    "k2_moment",
    "k2_bound",
    "InequalityCheck",
    "check_kato",
    "check_herbst_constant",
    "KATO_CONSTANT",
    "DAUBECHIES_C",
]

#: Sharp constant in int |f|^2/|x| <= K int |p| |f^(p)|^2 dp.
KATO_CONSTANT = math.pi / 2.0
#: Daubechies constant per spin state.
DAUBECHIES_C = 0.163
#: Below this argument g(t) - 8t^3/3 is summed from its Taylor series.
SERIES_CUTOFF = 0.1
_SERIES_TERMS = 16


def _check_alpha(alpha: float) -> float:
    if not (np.isfinite(alpha) and alpha > 0):
        raise ParameterError(f"alpha must be a positive finite number, got {alpha}")
    return float(alpha)


def kinetic_symbol(p, alpha: float):
    """Relativistic kinetic symbol ``T(p) = sqrt(p^2 + alpha^-2) - alpha^-1``.

    Evaluated as ``p^2 / (sqrt(p^2 + alpha^-2) + alpha^-1)`` so that it keeps full
    relative precision when ``alpha p << 1``.
    """
    alpha = _check_alpha(alpha)
    p = np.asarray(p, dtype=float)
    if np.any(p < 0):
        raise ParameterError("momentum magnitude must be nonnegative")
    inv = 1.0 / alpha
    out = p * p / (np.hypot(p, inv) + inv)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class KineticSymbol:
    """Kinetic symbols at a fixed fine-structure constant."""

    alpha: float

    def __post_init__(self):
        _check_alpha(self.alpha)

    def E(self, p):
        """Total energy symbol ``sqrt(p^2 + alpha^-2)``."""
        p = np.asarray(p, dtype=float)
        out = np.hypot(p, 1.0 / self.alpha)
        return float(out) if out.ndim == 0 else out

    def T(self, p):
        """Kinetic symbol ``E(p) - 1/alpha``."""
        return kinetic_symbol(p, self.alpha)

    def physical(self, p):
        """Physical kinetic energy ``alpha^-1 T(p)``, bounded by ``p^2/2``."""
        return kinetic_symbol(p, self.alpha) / self.alpha


@lru_cache(maxsize=1)
def _excess_coefficients() -> np.ndarray:
    """Taylor coefficients c_k of g(t) - 8t^3/3 = sum_k c_k t^(2k+1).

    t sqrt(1+t^2)(1+2t^2) = sum_k (b_k + 2 b_(k-1)) t^(2k+1) with b_k = binom(1/2, k),
    and asinh t = sum_k a_k t^(2k+1).
    """
    coeffs = []
    for k in range(_SERIES_TERMS + 3):
        b_k = _binom_half(k)
        b_km1 = _binom_half(k - 1) if k >= 1 else 0.0
        a_k = (-1) ** k * math.factorial(2 * k) / (4**k * math.factorial(k) ** 2 * (2 * k + 1))
        coeffs.append(b_k + 2.0 * b_km1 - a_k)
    # c_0 and c_1 vanish identically; c_1 carries the 8/3 t^3 that is removed.
    coeffs[1] -= 8.0 / 3.0
    out = np.array(coeffs)
    out[:2] = 0.0
    return out


def _binom_half(k: int) -> float:
    out = 1.0
    for j in range(k):
        out *= (0.5 - j) / (j + 1)
    return out


def _excess_series(t: np.ndarray) -> np.ndarray:
    c = _excess_coefficients()
    t2 = t * t
    acc = np.zeros_like(t)
    for ck in c[:1:-1]:
        acc = acc * t2 + ck
    return acc * t**5


def _check_t(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(~np.isfinite(t)) or np.any(t < 0):
        raise ParameterError("argument t must be finite and nonnegative")
    return t


def daubechies_g(t):
    """``g(t) = t (1+t^2)^(1/2) (1+2t^2) - ln(t + (1+t^2)^(1/2))`` for ``t >= 0``."""
    t = _check_t(t)
    out = 8.0 / 3.0 * t**3 + g_excess(t)
    return float(out) if out.ndim == 0 else out


def g_excess(t):
    """``g(t) - 8t^3/3`` without cancellation (Taylor series below t = 0.1)."""
    t = _check_t(t)
    small = t < SERIES_CUTOFF
    out = np.empty_like(t)
    ts = t[small]
    out[small] = _excess_series(ts)
    tl = t[~small]
    out[~small] = tl * np.sqrt(1 + tl * tl) * (1 + 2 * tl * tl) - np.arcsinh(tl) - 8.0 / 3.0 * tl**3
    return float(out) if out.ndim == 0 else out


def natale_bounds(t):
    """Two-sided bounds ``(3/5, 2) * t^4 min{2t/5, 1}`` on ``g(t) - 8t^3/3``."""
    t = _check_t(t)
    m = t**4 * np.minimum(0.4 * t, 1.0)
    lo, hi = 0.6 * m, 2.0 * m
    if lo.ndim == 0:
        return float(lo), float(hi)
    return lo, hi


def _check_rho(rho) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    if np.any(~np.isfinite(rho)) or np.any(rho < 0):
        raise ParameterError("density must be finite and nonnegative")
    return rho


def _check_q(q) -> int:
    if int(q) != q or q < 1:
        raise ParameterError(f"q must be a positive integer, got {q}")
    return int(q)


def daubechies_G(rho, alpha: float, q: int = 2):
    """Daubechies energy density ``G_alpha(rho)`` with ``C = 0.163 q``.

    ``G = (3/8) alpha^-4 C g(alpha (rho/C)^(1/3)) - rho/alpha``; the linear part of
    ``g`` cancels the last term exactly, so only the excess ``g - 8t^3/3`` is
    evaluated.
    """
    alpha = _check_alpha(alpha)
    C = DAUBECHIES_C * _check_q(q)
    rho = _check_rho(rho)
    t = alpha * np.cbrt(rho / C)
    out = 0.375 * C * np.asarray(g_excess(t)) / alpha**4
    return float(out) if out.ndim == 0 else out


def behg_bounds(rho, alpha: float, q: int = 2):
    """Lower and upper envelopes ``(9/20, 3/2) * min{alpha C^(-2/3) rho^(5/3)/5, C^(-1/3) rho^(4/3)/2}``."""
    alpha = _check_alpha(alpha)
    C = DAUBECHIES_C * _check_q(q)
    rho = _check_rho(rho)
    m = np.minimum(alpha * C ** (-2.0 / 3.0) * rho ** (5.0 / 3.0) / 5.0, 0.5 * C ** (-1.0 / 3.0) * rho ** (4.0 / 3.0))
    lo, hi = 0.45 * m, 1.5 * m
    if lo.ndim == 0:
        return float(lo), float(hi)
    return lo, hi


@dataclass(frozen=True)
class DaubechiesFunctional:
    """The density functional ``rho -> int G_alpha(rho)``."""

    q: int
    alpha: float

    def __post_init__(self):
        _check_q(self.q)
        _check_alpha(self.alpha)

    @property
    def C(self) -> float:
        return DAUBECHIES_C * self.q

    def __call__(self, rho):
        return daubechies_G(rho, self.alpha, self.q)

    def integrate(self, rho: RadialFunction) -> float:
        """``int G_alpha(rho(x)) dx`` over the grid of ``rho``."""
        return rho.grid.integrate(daubechies_G(np.maximum(rho.values, 0.0), self.alpha, self.q))

    def bounds(self, rho):
        return behg_bounds(rho, self.alpha, self.q)


def lt_F(s: float, alpha: float) -> float:
    """``F(s) = int_0^s (t^2 + 2t/alpha)^(3/2) dt`` by adaptive quadrature."""
    alpha = _check_alpha(alpha)
    if not (math.isfinite(s) and s >= 0):
        raise ParameterError(f"s must be finite and nonnegative, got {s}")
    if s == 0:
        return 0.0
    return adaptive_quad(lambda t: (t * t + 2.0 * t / alpha) ** 1.5, 0.0, float(s))


def lt_F_bound(s: float, alpha: float) -> float:
    """Convexity bound ``(8/5) alpha^(-3/2) s^(5/2) + s^4 / (2 sqrt 2)`` on F(s)."""
    alpha = _check_alpha(alpha)
    return 1.6 * alpha**-1.5 * s**2.5 + s**4 / (2.0 * math.sqrt(2.0))


def bessel_K2(t: float) -> float:
    """Modified Bessel function ``K_2(t) = t int_0^inf exp(-t sqrt(s^2+1)) s^2 ds``.

    With ``s = sinh u`` the integrand becomes ``exp(-t cosh u) sinh^2 u cosh u``,
    which is smooth and decays doubly exponentially; the factor ``exp(-t)`` is
    pulled out so that large arguments do not underflow inside the quadrature.
    """
    if not (math.isfinite(t) and t > 0):
        raise ParameterError(f"K_2 needs a positive finite argument, got {t}")
    u_max = math.acosh(1.0 + 800.0 / t)

    def integrand(u):
        sh = math.sinh(u)
        return math.exp(-t * (math.cosh(u) - 1.0)) * sh * sh * math.cosh(u)

    # peak of the integrand sits near u ~ asinh(sqrt(3/t)) for small t
    peak = math.asinh(math.sqrt(3.0 / t))
    pts = [peak] if 0 < peak < u_max else None
    return t * math.exp(-t) * adaptive_quad(integrand, 0.0, u_max, points=pts)


def k2_moment(rtol: float = 1e-11) -> float:
    """``int_0^inf t^2 K_2(t) dt`` by nested adaptive quadrature."""
    inner = lambda t: t * t * bessel_K2(t)
    head = adaptive_quad(inner, 0.0, 1.0, rtol=rtol)
    mid = adaptive_quad(inner, 1.0, 40.0, rtol=rtol)
    tail = adaptive_quad(inner, 40.0, 120.0, rtol=rtol, atol=1e-30)
    return head + mid + tail


def k2_bound(t):
    """Upper bound ``16 t^-2 exp(-t/2)``."""
    t = np.asarray(t, dtype=float)
    out = 16.0 / t**2 * np.exp(-0.5 * t)
    return float(out) if out.ndim == 0 else out


class InequalityCheck(NamedTuple):
    lhs: float
    rhs: float
    holds: bool


Profile = Union[Callable[[float], float], RadialFunction]


def _profile_norm(f: Callable[[float], float]) -> float:
    try:
        norm = 4.0 * math.pi * adaptive_quad(lambda r: f(r) ** 2 * r * r, 0.0, math.inf)
    except SolverError as exc:
        raise ParameterError(f"trial profile is not square integrable: {exc}") from exc
    if not (math.isfinite(norm) and norm > 0):
        raise ParameterError("trial profile must have a finite, nonzero L2 norm")
    return norm


def _support_radius(f: Callable[[float], float]) -> float:
    """Radius beyond which ``r^2 |f(r)|`` is negligible at double precision."""
    scale = max(abs(f(r)) * r * r for r in (0.25, 0.5, 1.0, 2.0))
    r = 1.0
    while r < 1e4:
        if all(abs(f(r * c)) * (r * c) ** 2 <= 1e-18 * scale for c in (1.0, 1.5, 2.0)):
            return r
        r *= 2.0
    raise ParameterError("trial profile does not decay fast enough for the momentum-space quadrature")


def _fourier_radial(f: Callable[[float], float], p: float, r_cut: float, atol: float) -> float:
    """Unitary 3D Fourier transform of a radial profile at momentum ``p``."""
    s = adaptive_quad(lambda r: f(r) * r, 0.0, r_cut, atol=atol, weight="sin", wvar=p)
    return (2.0 * math.pi) ** -1.5 * 4.0 * math.pi * s / p


def _momentum_form(f: Callable[[float], float], symbol: Callable[[float], float]) -> float:
    """``int symbol(|p|) |f^(p)|^2 dp`` for a radial profile."""
    r_cut = _support_radius(f)
    # absolute floor for the transform, relative to the size of int |f| r^2 dr
    atol = 1e-13 * adaptive_quad(lambda r: abs(f(r)) * r * r, 0.0, r_cut)
    integrand = lambda p: 4.0 * math.pi * p * p * symbol(p) * _fourier_radial(f, p, r_cut, atol) ** 2
    head = adaptive_quad(integrand, 0.0, 8.0, rtol=1e-11)
    return head + adaptive_quad(integrand, 8.0, math.inf, rtol=1e-9, atol=1e-16)


def _orbital_spectral(u: RadialFunction):
    grid = u.grid
    d, e = channel_laplacian(grid, 0)
    try:
        lam, vec = eigh_tridiagonal(d, e)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"channel eigendecomposition failed: {exc}") from exc
    # interior unknowns; the Dirichlet end carries no weight
    coeff = vec.T @ u.values[:-1]
    return grid, np.maximum(lam, 0.0), coeff


def _orbital_form(u: RadialFunction, symbol) -> float:
    grid, lam, coeff = _orbital_spectral(u)
    return grid.step * float(np.sum(symbol(lam) * coeff * coeff))


def check_kato(f: Profile, alpha: float | None = None, constant: float = KATO_CONSTANT) -> InequalityCheck:
    """Compare ``int |f|^2/|x|`` with ``K int |p| |f^(p)|^2 dp`` (``K = pi/2``).

    ``f`` is either a callable radial profile ``f(r)`` in three dimensions or a
    reduced orbital ``u = r f sqrt(4 pi)`` on a uniform grid, in which case ``|p|``
    is realized as the square root of the discrete s-wave channel operator.
    ``alpha`` is accepted for signature symmetry with :func:`check_herbst_constant`.
    """
    if isinstance(f, RadialFunction):
        _require_orbital(f)
        lhs = f.grid.integrate_1d(f.values**2 / f.grid.r)
        rhs = constant * _orbital_form(f, np.sqrt)
    else:
        _profile_norm(f)
        lhs = 4.0 * math.pi * adaptive_quad(lambda r: f(r) ** 2 * r, 0.0, math.inf)
        rhs = constant * _momentum_form(f, lambda p: p)
    return InequalityCheck(lhs, rhs, lhs <= rhs)


def check_herbst_constant(f: Profile, alpha: float) -> InequalityCheck:
    """Compare ``int exp(-mu |x|^2) |f|^2/|x|`` with ``(pi/2)(sqrt2 - 1)^-1 (f, T(p) f)``.

    ``mu = 1/(pi alpha^2)`` and ``T`` is the unscaled kinetic symbol.
    """
    alpha = _check_alpha(alpha)
    mu = 1.0 / (math.pi * alpha * alpha)
    c = 0.5 * math.pi / (math.sqrt(2.0) - 1.0)
    inv = 1.0 / alpha
    if isinstance(f, RadialFunction):
        _require_orbital(f)
        r = f.grid.r
        lhs = f.grid.integrate_1d(np.exp(-mu * r * r) * f.values**2 / r)
        rhs = c * _orbital_form(f, lambda lam: lam / (np.sqrt(lam + inv * inv) + inv))
    else:
        _profile_norm(f)
        lhs = 4.0 * math.pi * adaptive_quad(lambda r: math.exp(-mu * r * r) * f(r) ** 2 * r, 0.0, math.inf)
        rhs = c * _momentum_form(f, lambda p: kinetic_symbol(p, alpha))
    return InequalityCheck(lhs, rhs, lhs <= rhs)


def _require_orbital(f: RadialFunction) -> None:
    if f.kind != "reduced-orbital":
        raise ParameterError(f"expected a reduced orbital, got kind {f.kind!r}")
