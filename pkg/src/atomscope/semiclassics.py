"""Phase-space functionals: Weyl terms, relativistic corrections, and semiclassical lower bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .quadrature import adaptive_quad
from .radial import RadialFunction, RadialGrid, cut_weights

__all__ = [
    "PhaseSpaceBudget",
    "weyl_term",
    "relativistic_corrections",
    "phase_space_budget",
    "dly_bound",
    "hf_energy_lower_bound",
    "coherent_completeness_check",
    "tf_vs_hf_energy_gap",
    "CORR72_PREFACTOR",
    "CORR92_PREFACTOR",
    "DLY_C_PER_SPIN",
]

# Momentum shell between the nonrelativistic and relativistic Fermi spheres,
# expanded with (1 + x)^(3/2) <= 1 + 3x/2 + 3x^2/8, times q/(2 pi)^3.
CORR72_PREFACTOR = 2.0**1.5 / (8.0 * math.pi**2)
CORR92_PREFACTOR = 2.0**1.5 / (64.0 * math.pi**2)
DLY_C_PER_SPIN = 0.163


@dataclass(frozen=True)
class PhaseSpaceBudget:
    """Weyl term and its relativistic corrections over a radial window."""

    weyl: float
    corr72: float
    corr92: float
    region: tuple


def _samples(phi, grid: RadialGrid | None):
    if isinstance(phi, RadialFunction):
        return phi.grid, np.asarray(phi.values, dtype=float)
    if grid is None:
        raise ParameterError("a grid is required when phi is given as an array or callable")
    vals = phi(grid.r) if callable(phi) else phi
    vals = np.asarray(vals, dtype=float)
    if vals.shape != grid.r.shape:
        raise ParameterError(f"phi has shape {vals.shape}, grid has {grid.r.shape}")
    return grid, vals


def _outside_weights(grid: RadialGrid, r_cut: float) -> np.ndarray:
    """Volume weights for ``int_{|x| > r_cut}``."""
    return 4.0 * np.pi * grid.r**2 * cut_weights(grid, r_cut)


def _region_weights(grid: RadialGrid, region) -> np.ndarray:
    lo, hi = (0.0, math.inf) if region is None else region
    if lo < 0 or hi <= lo:
        raise ParameterError(f"region must satisfy 0 <= lo < hi, got {region}")
    w = _outside_weights(grid, lo) if lo > 0 else grid.volume_weights
    if math.isfinite(hi):
        w = w - _outside_weights(grid, hi)
    return w


def _moment(grid, vals, power, region) -> float:
    return float(np.dot(_region_weights(grid, region), np.maximum(vals, 0.0) ** power))


def weyl_term(phi, q: int = 2, region=None, grid: RadialGrid | None = None) -> float:
    """``-(2^(3/2) q / 15 pi^2) int_region [phi]_+^(5/2) dx``."""
    grid, vals = _samples(phi, grid)
    return -(2.0**1.5) * q / (15.0 * math.pi**2) * _moment(grid, vals, 2.5, region)


def relativistic_corrections(phi, q: int = 2, alpha: float = 0.0, region=None, grid: RadialGrid | None = None,
                             prefactors: tuple[float, float] = (CORR72_PREFACTOR, CORR92_PREFACTOR)):
    """``(c72 q alpha^2 int [phi]_+^(7/2), c92 q alpha^4 int [phi]_+^(9/2))`` over ``region``.

    The integrals diverge at the origin for a Coulomb-like ``phi``, so the region must
    exclude a core ball ``r < lo`` with ``lo > 0``.
    """
    if alpha < 0:
        raise ParameterError(f"alpha must be nonnegative, got {alpha}")
    if alpha == 0:
        return 0.0, 0.0
    if region is None or region[0] <= 0:
        raise ParameterError("relativistic corrections need a region excluding a core ball around the nucleus")
    grid, vals = _samples(phi, grid)
    c72, c92 = prefactors
    return (c72 * q * alpha**2 * _moment(grid, vals, 3.5, region),
            c92 * q * alpha**4 * _moment(grid, vals, 4.5, region))


def phase_space_budget(phi, q: int = 2, alpha: float = 0.0, region=None, grid: RadialGrid | None = None,
                       prefactors: tuple[float, float] = (CORR72_PREFACTOR, CORR92_PREFACTOR)) -> PhaseSpaceBudget:
    grid, vals = _samples(phi, grid)
    w = weyl_term(vals, q, region, grid)
    c72, c92 = relativistic_corrections(vals, q, alpha, region, grid, prefactors)
    return PhaseSpaceBudget(w, c72, c92, (0.0, math.inf) if region is None else tuple(region))


def dly_bound(U, alpha: float, kappa: float, R: float, C: float | None = None, q: int = 2,
              grid: RadialGrid | None = None, check_points: int = 400) -> float:
    """Daubechies-Lieb-Yau type lower bound for ``Tr[alpha^-1 T(p) - U]_-``.

    ``-C kappa^(5/2) alpha^(-3/2) R^(1/2) - C kappa^4 / alpha
    - C int_{|x|>R} (alpha^(-3/2) U^(5/2) + U^4) dx`` with ``C`` defaulting to
    ``0.163 q``. ``U`` is a callable of ``r`` or a potential sampled on ``grid``; it
    must satisfy ``0 <= U <= kappa/r`` for ``r < max(alpha, R)``.
    """
    if alpha <= 0 or R <= 0 or kappa < 0:
        raise ParameterError("need alpha > 0, R > 0 and kappa >= 0")
    C = DLY_C_PER_SPIN * q if C is None else C
    inner = max(alpha, R)
    sampled = isinstance(U, RadialFunction) or grid is not None
    if sampled:
        grid, vals = _samples(U, grid)
        mask = grid.r < inner
        r_in, u_in = grid.r[mask], vals[mask]
        outside = np.dot(_outside_weights(grid, R),
                         alpha**-1.5 * np.abs(vals) ** 2.5 + vals**4)
    else:
        r_in = inner * np.linspace(0.0, 1.0, check_points + 1)[1:]
        r_in = r_in[r_in < inner]
        u_in = np.asarray(U(r_in), dtype=float)
    tol = 1e-12 * max(1.0, kappa)
    if np.any(u_in < -tol) or np.any(u_in * r_in > kappa + tol):
        raise ParameterError("U must satisfy 0 <= U <= kappa/|x| inside max(alpha, R)")
    if not sampled:
        def f(r):
            u = abs(float(U(r)))
            return 4.0 * math.pi * r * r * (alpha**-1.5 * u**2.5 + u**4)

        outside = adaptive_quad(f, R, math.inf, rtol=1e-10)
    return float(-C * kappa**2.5 * alpha**-1.5 * math.sqrt(R) - C * kappa**4 / alpha - C * outside)


def hf_energy_lower_bound(Z: float, N: float, kappa: float, C: float | None = None, q: int = 2) -> float:
    """``-2 C^(2/3) Z^2 N^(1/3) - C kappa^2 Z^2`` with ``C`` defaulting to ``0.163 q``."""
    C = DLY_C_PER_SPIN * q if C is None else C
    return -2.0 * C ** (2.0 / 3.0) * Z**2 * N ** (1.0 / 3.0) - C * kappa**2 * Z**2


def _gaussian_norm_sq(width: float) -> float:
    """Squared normalization of ``exp(-x^2 / (2 b^2))`` in three dimensions."""
    return (math.pi * width**2) ** -1.5


def _radial_gaussian_integral(decay: float, weight=None) -> float:
    """``int_{R^3} exp(-decay |x|^2) weight(|x|) dx`` by radial quadrature."""
    scale = 1.0 / math.sqrt(decay)
    if weight is None:
        def f(t):
            return 4.0 * math.pi * t * t * math.exp(-t * t)
        return scale**3 * adaptive_quad(f, 0.0, math.inf, rtol=1e-13)

    def g(t):
        return 4.0 * math.pi * t * t * math.exp(-t * t) * weight(scale * t)
    return scale**3 * adaptive_quad(g, 0.0, math.inf, rtol=1e-13)


def coherent_completeness_check(f_width: float = 1.0, g_width: float = 1.0, potential_width: float | None = None):
    """Coherent-state resolution of the identity for Gaussian profiles.

    ``f(x) = exp(-x^2 / (2 a^2))`` and the window ``g`` is the normalized Gaussian of
    width ``b``. The overlap ``(f, g^{p,q})`` is reduced in closed form to
    ``sqrt(n_g) (2 pi c^2)^(3/2) exp(-c^2 p^2 / 2) exp(-q^2 / (2 (a^2 + b^2)))`` with
    ``c^-2 = a^-2 + b^-2``; the remaining separable momentum and position integrals
    are done by quadrature. Returns ``(lhs, rhs, rel_err)`` where ``lhs = (f, f)``, or
    ``(f, (V * g^2) f)`` for a Gaussian ``V`` of width ``potential_width``.

    Only Gaussian profiles are supported.
    """
    a, b = float(f_width), float(g_width)
    if a <= 0 or b <= 0 or (potential_width is not None and potential_width <= 0):
        raise ParameterError("Gaussian widths must be positive")
    c2 = 1.0 / (1.0 / a**2 + 1.0 / b**2)
    s2 = a**2 + b**2
    pref = _gaussian_norm_sq(b) * (2.0 * math.pi * c2) ** 3 / (2.0 * math.pi) ** 3
    p_int = _radial_gaussian_integral(c2)
    if potential_width is None:
        lhs = (math.pi * a**2) ** 1.5
        q_int = _radial_gaussian_integral(1.0 / s2)
    else:
        v = float(potential_width)
        # V * g^2 is Gaussian: variances v^2 and b^2/2 add
        sig1, sig2 = v**2, b**2 / 2.0
        conv_amp = _gaussian_norm_sq(b) * (2.0 * math.pi * sig1 * sig2 / (sig1 + sig2)) ** 1.5
        S = sig1 + sig2
        lhs = conv_amp * (math.pi / (1.0 / a**2 + 1.0 / (2.0 * S))) ** 1.5
        q_int = _radial_gaussian_integral(1.0 / s2, lambda r: math.exp(-r * r / (2.0 * v * v)))
    rhs = pref * p_int * q_int
    return lhs, rhs, abs(lhs - rhs) / abs(lhs)


def tf_vs_hf_energy_gap(Z: float, N: float, alpha: float, q: int = 2, hf_config=None, hf_solution=None) -> dict:
    """Energy difference between the HF and TF atoms.

    Returns a row with ``E_HF``, ``E_TF``, ``gap``, ``gap/Z^2``, ``gap/Z^(7/3)`` and
    ``E_TF / (-e0 Z^(7/3))``; solver failures propagate.
    """
    from .hartreefock import scf_solve
    from .thomasfermi import solve_tf_atom, tf_energy_constant

    tf = solve_tf_atom(Z, min(N, Z), q=q)
    hf = hf_solution if hf_solution is not None else scf_solve(Z, N, alpha, q=q, config=hf_config)
    gap = hf.energy["total"] - tf.energy
    e0 = tf_energy_constant(q)
    row = {"Z": Z, "N": N, "alpha": alpha, "E_HF": hf.energy["total"], "E_TF": tf.energy, "gap": gap,
           "gap_Z2": gap / Z**2, "gap_Z73": gap / Z ** (7.0 / 3.0),
           "tf_scaled": tf.energy / (-e0 * Z ** (7.0 / 3.0)), "hf_converged": hf.converged}
    return row
