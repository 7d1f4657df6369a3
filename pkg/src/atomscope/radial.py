"""Radial grids, spherically averaged densities and Newton-theorem electrostatics.

All three-dimensional objects are stored as spherical averages on a radial grid.
Integrals of a radial function ``f`` over a ball are approximated by
``sum(4 pi r_i^2 w_i f_i)``; the weights ``w_i`` are trapezoidal in the natural
variable of the grid (``r`` for uniform grids, ``ln r`` for log grids) with an
endpoint correction that makes the volume of the ball exact.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import KindError, ParameterError, SingularityError

__all__ = [
    "RadialGrid",
    "RadialFunction",
    "make_grid",
    "newton_potential",
    "coulomb_inner",
    "coulomb_norm",
    "screened_potential",
    "mean_field",
    "counorm_split_check",
    "CounormReport",
    "channel_laplacian",
    "cut_weights",
]

SCHEMES = ("uniform", "log-uniform")
KINDS = ("density", "charge", "potential", "reduced-orbital")
LOG_RMIN_FACTOR = 1e-6


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Strictly increasing radii with quadrature weights.

    Attributes
    ----------
    r : ndarray
        Radii, ``r[-1] == r_max``.
    w : ndarray
        One-dimensional weights, ``int g(r) dr ~ sum(w * g)``.
    scheme : str
        ``"uniform"`` or ``"log-uniform"``.
    step : float
        Spacing in the natural variable (``r`` or ``ln r``).
    """

    r: np.ndarray
    w: np.ndarray
    scheme: str
    step: float
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.r.setflags(write=False)
        self.w.setflags(write=False)

    @property
    def n(self) -> int:
        return self.r.size

    @property
    def r_max(self) -> float:
        return float(self.r[-1])

    @property
    def jacobian(self) -> np.ndarray:
        """dr/dx for the natural variable x."""
        return np.ones_like(self.r) if self.scheme == "uniform" else self.r

    @property
    def volume_weights(self) -> np.ndarray:
        """Weights ``4 pi r^2 w`` for integrals over the ball."""
        W = self._cache.get("W")
        if W is None:
            W = 4.0 * np.pi * self.r**2 * self.w
            W.setflags(write=False)
            self._cache["W"] = W
        return W

    def integrate(self, values) -> float:
        """Integral of a radial function over the ball of radius r_max."""
        return float(np.dot(self.volume_weights, np.asarray(values, dtype=float)))

    def integrate_1d(self, values) -> float:
        """One-dimensional integral ``int_0^r_max g(r) dr``."""
        return float(np.dot(self.w, np.asarray(values, dtype=float)))

    def cumulative_1d(self, values) -> np.ndarray:
        """Cumulative trapezoid ``int_0^{r_k} g(r) dr`` at each node.

        The integrand is assumed to vanish at the origin for uniform grids; for
        log grids the inner ball ``[0, r_0]`` uses the constant extension of
        ``g / r^2``.
        """
        g = np.asarray(values, dtype=float)
        J = self.jacobian
        f = g * J
        inc = 0.5 * self.step * (f[1:] + f[:-1])
        out = np.empty_like(g)
        if self.scheme == "uniform":
            out[0] = 0.5 * self.step * f[0]
        else:
            out[0] = g[0] * self.r[0] / 3.0
        out[1:] = out[0] + np.cumsum(inc)
        return out

    def same_as(self, other: "RadialGrid") -> bool:
        return self is other or (
            self.scheme == other.scheme
            and self.n == other.n
            and np.array_equal(self.r, other.r)
        )

    def scaled(self, factor: float) -> "RadialGrid":
        """Grid with every radius multiplied by ``factor``."""
        if not factor > 0:
            raise ParameterError("scale factor must be positive")
        step = self.step * factor if self.scheme == "uniform" else self.step
        return RadialGrid(self.r * factor, self.w * factor, self.scheme, step)


def make_grid(r_max: float, n: int, scheme: str = "uniform", r_min: float | None = None) -> RadialGrid:
    """Build a radial grid.

    Parameters
    ----------
    r_max : float
        Box radius, the last grid point.
    n : int
        Number of points (>= 16).
    scheme : {"uniform", "log-uniform"}
        Uniform grids use ``r_i = i r_max / n`` for ``i = 1..n``. Log grids are
        geometric from ``r_min`` (default ``1e-6 r_max``) to ``r_max``.
    r_min : float, optional
        First point of a log grid.

    Returns
    -------
    RadialGrid
    """
    if not (isinstance(r_max, (int, float, np.floating)) and math.isfinite(r_max) and r_max > 0):
        raise ParameterError(f"r_max must be a positive finite number, got {r_max}")
    if int(n) != n or n < 16:
        raise ParameterError(f"n must be an integer >= 16, got {n}")
    n = int(n)
    r_max = float(r_max)
    if scheme == "uniform":
        if r_min is not None:
            raise ParameterError("r_min is only meaningful for log-uniform grids")
        h = r_max / n
        r = h * np.arange(1, n + 1, dtype=float)
        r[-1] = r_max
        w = np.full(n, h)
        # Trapezoid with the origin as an implicit zero node; the last weight
        # absorbs the Euler-Maclaurin end term so that int r^2 dr is exact.
        w[-1] = 0.5 * h - h / (6.0 * n)
        return RadialGrid(r, w, "uniform", h)
    if scheme == "log-uniform":
        r0 = LOG_RMIN_FACTOR * r_max if r_min is None else float(r_min)
        if not (0 < r0 < r_max):
            raise ParameterError(f"need 0 < r_min < r_max, got r_min={r0}")
        delta = math.log(r_max / r0) / (n - 1)
        r = r0 * np.exp(delta * np.arange(n, dtype=float))
        r[-1] = r_max
        w = delta * r
        w[0] = 0.5 * delta * r[0] + r[0] / 3.0
        head = float(np.dot(w[:-1], r[:-1] ** 2))
        w[-1] = (r_max**3 / 3.0 - head) / r_max**2
        if w[-1] <= 0:
            raise ParameterError("log grid too coarse: endpoint weight is not positive")
        return RadialGrid(r, w, "log-uniform", delta)
    raise ParameterError(f"unknown grid scheme {scheme!r}; expected one of {SCHEMES}")


@dataclass(frozen=True, eq=False)
class RadialFunction:
    """Values of a spherically symmetric function on a grid.

    ``kind`` is one of ``density`` (nonnegative), ``charge`` (signed density),
    ``potential`` or ``reduced-orbital`` (``u(r) = r R(r)`` with ``int u^2 dr = 1``).
    """

    grid: RadialGrid
    values: np.ndarray
    kind: str = "density"

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.grid.r.shape:
            raise ParameterError(f"values have shape {v.shape}, grid has {self.grid.r.shape}")
        if self.kind not in KINDS:
            raise KindError(f"unknown kind {self.kind!r}; expected one of {KINDS}")
        if not np.all(np.isfinite(v)):
            raise ParameterError("radial function has non-finite values")
        if self.kind == "density" and np.any(v < 0):
            raise ParameterError("density values must be nonnegative")
        if self.kind == "reduced-orbital":
            norm = self.grid.integrate_1d(v * v)
            if abs(norm - 1.0) > 1e-10:
                raise ParameterError(f"reduced orbital not normalized: int u^2 dr = {norm}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def orbital(cls, grid: RadialGrid, u) -> "RadialFunction":
        """Normalize ``u`` and wrap it as a reduced orbital."""
        u = np.asarray(u, dtype=float)
        norm = grid.integrate_1d(u * u)
        if not norm > 0:
            raise ParameterError("cannot normalize a zero orbital")
        return cls(grid, u / math.sqrt(norm), "reduced-orbital")

    def total(self) -> float:
        """Integral over the ball (total charge for densities)."""
        return self.grid.integrate(self.values)

    def to_csv(self, path) -> Path:
        """Write ``r,value`` with 17 significant digits."""
        path = Path(path)
        try:
            with path.open("w", newline="") as fh:
                fh.write("r,value\n")
                for ri, vi in zip(self.grid.r, self.values):
                    fh.write(f"{ri:.16e},{vi:.16e}\n")
        except OSError as exc:
            raise OSError(f"cannot write radial function to {path}: {exc}") from exc
        return path

    @staticmethod
    def read_csv(path) -> tuple[np.ndarray, np.ndarray]:
        """Read back the ``r`` and ``value`` columns of :meth:`to_csv`."""
        with Path(path).open() as fh:
            rows = list(csv.DictReader(fh))
        return (np.array([float(x["r"]) for x in rows]), np.array([float(x["value"]) for x in rows]))


def _density_values(rho, grid: RadialGrid | None = None) -> tuple[RadialGrid, np.ndarray]:
    if isinstance(rho, RadialFunction):
        if rho.kind not in ("density", "charge"):
            raise KindError(f"expected a density, got kind {rho.kind!r}")
        if grid is not None and not grid.same_as(rho.grid):
            raise KindError("radial functions live on different grids")
        return rho.grid, rho.values
    raise KindError(f"expected a RadialFunction density, got {type(rho).__name__}")


def _newton_values(grid: RadialGrid, g: np.ndarray, W: np.ndarray | None = None) -> np.ndarray:
    """Discrete Newton theorem with the grid weights and a kink correction.

    ``V_i = sum_j W_j g_j / max(r_i, r_j) - (h^2/12) 4 pi J_i^2 g_i``; the last
    term is the Euler-Maclaurin correction for the derivative jump of the
    integrand at ``r = r_i``. The resulting operator is symmetric in the
    weighted inner product.
    """
    r = grid.r
    Wg = (grid.volume_weights if W is None else W) * g
    inner = np.cumsum(Wg) / r
    outer_terms = Wg / r
    outer = np.cumsum(outer_terms[::-1])[::-1] - outer_terms
    kink = (grid.step**2 / 12.0) * 4.0 * np.pi * grid.jacobian**2 * g
    return inner + outer - kink


def newton_potential(rho: RadialFunction) -> RadialFunction:
    """Potential ``rho * |x|^-1`` of a spherically symmetric charge.

    ``V(r) = (1/r) int_0^r 4 pi s^2 rho(s) ds + int_r^inf 4 pi s rho(s) ds``.
    """
    grid, g = _density_values(rho)
    return RadialFunction(grid, _newton_values(grid, g), "potential")


def coulomb_inner(f: RadialFunction, g: RadialFunction) -> float:
    """Coulomb inner product ``D(f, g) = 1/2 int f (g * |x|^-1)``."""
    grid, fv = _density_values(f)
    _, gv = _density_values(g, grid)
    return 0.5 * float(np.dot(grid.volume_weights * fv, _newton_values(grid, gv)))


def coulomb_norm(f: RadialFunction) -> float:
    """Coulomb norm ``D(f, f)^(1/2)``."""
    return math.sqrt(max(coulomb_inner(f, f), 0.0))


class _Cumulative(NamedTuple):
    r: np.ndarray
    charge: np.ndarray  # int_0^r 4 pi s^2 rho
    first: np.ndarray  # int_0^r 4 pi s rho


def _cumulatives(grid: RadialGrid, g: np.ndarray) -> _Cumulative:
    r = grid.r
    charge = grid.cumulative_1d(4.0 * np.pi * r**2 * g)
    first = grid.cumulative_1d(4.0 * np.pi * r * g)
    return _Cumulative(np.concatenate(([0.0], r)), np.concatenate(([0.0], charge)),
                       np.concatenate(([0.0], first)))


def _interp_cum(cum: _Cumulative, which: np.ndarray, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.interp(np.minimum(x, cum.r[-1]), cum.r, which)


def _potential_at(grid: RadialGrid, g: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Evaluate ``rho * |x|^-1`` at arbitrary radii."""
    V = _newton_values(grid, g)
    total = float(np.dot(grid.volume_weights, g))
    out = np.empty_like(x)
    beyond = x >= grid.r_max
    out[beyond] = total / x[beyond]
    inside = ~beyond
    if np.any(inside):
        key = "spline" if grid.scheme == "uniform" else "logspline"
        if grid.scheme == "uniform":
            spline = CubicSpline(np.concatenate(([0.0], grid.r)),
                                 np.concatenate(([V[0] + (V[0] - V[1]) / 3.0], V)),
                                 bc_type=((1, 0.0), "not-a-knot"))
            out[inside] = spline(x[inside])
        else:
            spline = CubicSpline(np.log(grid.r), V)
            xi = x[inside]
            low = xi < grid.r[0]
            vals = np.empty_like(xi)
            vals[~low] = spline(np.log(xi[~low]))
            vals[low] = V[0]
            out[inside] = vals
        del key
    return out


def _as_positive_radii(x) -> tuple[np.ndarray, bool]:
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(arr <= 0):
        raise SingularityError("potentials are singular at x = 0; need x > 0")
    return arr, np.ndim(x) == 0


def mean_field(rho: RadialFunction, Z: float, x):
    """Mean-field potential ``phi(x) = Z/|x| - (rho * |x|^-1)(x)``."""
    grid, g = _density_values(rho)
    arr, scalar = _as_positive_radii(x)
    out = Z / arr - _potential_at(grid, g, arr)
    return float(out[0]) if scalar else out


def screened_potential(rho: RadialFunction, Z: float, R: float, x):
    """Screened nuclear potential ``Z/|x| - int_{|y|<R} rho(y)/|x-y| dy``.

    The truncation ``chi_{|y|<R}`` uses linear interpolation of the cumulative
    charge, so ``R`` need not be a grid point.
    """
    if not R > 0:
        raise ParameterError(f"screening radius must be positive, got {R}")
    grid, g = _density_values(rho)
    arr, scalar = _as_positive_radii(x)
    cum = _cumulatives(grid, g)
    q_in = float(_interp_cum(cum, cum.charge, R))
    out = np.empty_like(arr)
    outside = arr >= R
    out[outside] = (Z - q_in) / arr[outside]
    inside = ~outside
    if np.any(inside):
        xi = arr[inside]
        # potential of rho chi_{<R} at |x| < R = full potential minus the shell beyond R
        first_total = cum.first[-1]
        first_R = float(_interp_cum(cum, cum.first, R))
        out[inside] = Z / xi - (_potential_at(grid, g, xi) - (first_total - first_R))
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class CounormReport:
    """Both sides of the two Coulomb-norm inequalities at one point."""

    x: float
    s: float
    k: float
    lhs_split: float
    rhs_split: float
    pass_split: bool
    lhs_annulus: float
    rhs_annulus: float
    pass_annulus: bool

    @property
    def passed(self) -> bool:
        return self.pass_split and self.pass_annulus


def counorm_split_check(f: RadialFunction, x: float, s: float, k: float, slack: float = 1e-10) -> CounormReport:
    """Evaluate the s-split and annulus Coulomb-norm inequalities for a signed density.

    Parameters
    ----------
    f : RadialFunction
        Signed spherically symmetric density.
    x : float
        Radius of the evaluation point.
    s : float
        Split radius (> 0).
    k : float
        Annulus fraction, ``0 < k < 1/2``.
    slack : float
        Relative slack allowed in the comparison for rounding.
    """
    if not x > 0:
        raise SingularityError("evaluation radius must be positive")
    if not s > 0:
        raise ParameterError(f"split radius must be positive, got {s}")
    if not 0 < k < 0.5:
        raise ParameterError(f"annulus fraction must satisfy 0 < k < 1/2, got {k}")
    grid, fv = _density_values(f)
    norm_c = coulomb_norm(f)
    pos = np.maximum(fv, 0.0)

    lhs1 = float(_potential_at(grid, fv, np.array([x]))[0])
    # Ball of radius s around the point x; the angular integral of
    # (1/d - 1/s) d dd has the closed form b - a - (b^2 - a^2)/(2s).
    t = grid.r
    a = np.abs(x - t)
    b = np.minimum(x + t, s)
    mask = a < s
    ang = np.where(mask, (b - a) - (b * b - a * a) / (2.0 * s), 0.0)
    ball = float(np.sum(grid.w * pos * 2.0 * np.pi * t / x * ang))
    rhs1 = ball + math.sqrt(2.0) * s**-0.5 * norm_c

    cum = _cumulatives(grid, fv)
    lhs2 = float(_interp_cum(cum, cum.charge, x)) / x
    cum_pos = _cumulatives(grid, pos)
    ann = float(_interp_cum(cum_pos, cum_pos.charge, x) - _interp_cum(cum_pos, cum_pos.charge, (1 - 2 * k) * x))
    rhs2 = ann / x + 2.0**1.5 / k * x**-0.5 * norm_c

    tol1 = slack * max(abs(lhs1), abs(rhs1), 1e-300)
    tol2 = slack * max(abs(lhs2), abs(rhs2), 1e-300)
    return CounormReport(x, s, k, lhs1, rhs1, lhs1 <= rhs1 + tol1, lhs2, rhs2, lhs2 <= rhs2 + tol2)


def cut_weights(grid: RadialGrid, r_cut: float) -> np.ndarray:
    """One-dimensional weights for ``int_{r > r_cut} g(r) dr``.

    Nodes inside the cut get zero weight; the first node outside absorbs the
    partial cell ``[r_cut, r_i]`` with the constant extension of the integrand.
    """
    w = np.where(grid.r >= r_cut, grid.w, 0.0)
    i = int(np.searchsorted(grid.r, r_cut))
    if 0 < i < grid.n:
        J = grid.jacobian[i]
        nat = (grid.r[i] - r_cut) if grid.scheme == "uniform" else math.log(grid.r[i] / r_cut)
        w[i] = (0.5 * grid.step + nat) * J
    return w


def channel_laplacian(grid: RadialGrid, l: int) -> tuple[np.ndarray, np.ndarray]:
    """Tridiagonal ``-d^2/dr^2 + l(l+1)/r^2`` on the interior nodes of a uniform grid.

    Dirichlet conditions are imposed at ``r = 0`` and at ``r = r_max``; the
    unknowns are the values at ``r_1 .. r_{n-1}``.

    Returns
    -------
    diag, offdiag : ndarray
        Main diagonal (length ``n-1``) and off-diagonal (length ``n-2``).
    """
    if grid.scheme != "uniform":
        raise ParameterError("the channel operator requires a uniform grid")
    if l < 0 or int(l) != l:
        raise ParameterError(f"angular momentum must be a nonnegative integer, got {l}")
    h = grid.step
    r = grid.r[:-1]
    diag = 2.0 / h**2 + l * (l + 1) / r**2
    off = np.full(r.size - 1, -1.0 / h**2)
    return diag, off
