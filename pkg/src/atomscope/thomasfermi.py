"""Atomic Thomas-Fermi theory: universal profile, ions, outside-TF problem, Sommerfeld envelopes.

With ``phi(r) - mu = Z y(x) / r`` and ``r = b x``, ``b = (4 pi c_q)^(-2/3) Z^(-1/3)``,
``c_q = 2^(3/2) q / (6 pi^2)``, the TF equation for a Coulomb nucleus becomes
``y'' = x^(-1/2) y^(3/2)`` with ``y(0) = 1``. The neutral atom is the solution
that decays to zero; ions are solutions with a steeper initial slope that hit
zero at a finite ``x0``. Everything scales exactly with ``Z`` at fixed ``N/Z``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from .errors import ParameterError, SolverError
from .params import PhysicalParams
from .quadrature import adaptive_quad
from .radial import RadialFunction, RadialGrid, _cumulatives, _newton_values, cut_weights, make_grid

__all__ = [
    "TFProfile",
    "TFSolution",
    "OTFSolution",
    "SommerfeldEnvelope",
    "solve_tf_dimensionless",
    "solve_tf_atom",
    "solve_otf",
    "sommerfeld_bounds",
    "tf_radius",
    "rho_53_bound_check",
    "tf_functional_on_grid",
    "tf_constants",
    "tf_energy_constant",
    "SOMMERFELD_ZETA",
    "RADIUS_CONSTANT_EXPONENT",
]

SOMMERFELD_ZETA = (-7.0 + math.sqrt(73.0)) / 2.0
#: Power of 2 in the radius constant obtained from the Sommerfeld tail.
RADIUS_CONSTANT_EXPONENT = 1.0 / 3.0
SHOOT_RTOL = 1e-13
SHOOT_ATOL = 1e-15
SHOOT_CAP = 10_000
OTF_CAP = 500
OTF_DAMPING = 0.5
_TAIL_ETA = 1e-9
_MATCH_X = 3.0


class TFConstants(NamedTuple):
    gamma: float  # (3/10)(6 pi^2/q)^(2/3), coefficient of int rho^(5/3)
    c: float  # rho = c [phi - mu]_+^(3/2)
    b1: float  # length scale at Z = 1
    sommerfeld: float  # 3^4 pi^2 / (2 q^2)


def tf_constants(q: int = 2) -> TFConstants:
    """Coefficients of the TF functional and its Coulomb scaling for ``q`` spin states."""
    if int(q) != q or q < 1:
        raise ParameterError(f"q must be a positive integer, got {q}")
    gamma = 0.3 * (6.0 * math.pi**2 / q) ** (2.0 / 3.0)
    c = 2.0**1.5 * q / (6.0 * math.pi**2)
    b1 = (4.0 * math.pi * c) ** (-2.0 / 3.0)
    return TFConstants(gamma, c, b1, 3.0**4 * math.pi**2 / (2.0 * q * q))


def _rhs_sqrt(t, state):
    # x = t^2: dy/dt = 2 t y', dy'/dt = 2 y^(3/2); smooth at the origin
    y, p = state
    return [2.0 * t * p, 2.0 * max(y, 0.0) ** 1.5]


def _event_zero(t, state):
    return state[0]


_event_zero.terminal = True
_event_zero.direction = -1


def _event_turn(t, state):
    return state[1]


_event_turn.terminal = True
_event_turn.direction = 1


def _shoot(slope: float, t_end: float):
    return solve_ivp(_rhs_sqrt, (0.0, t_end), [1.0, -slope], method="DOP853", rtol=SHOOT_RTOL,
                     atol=SHOOT_ATOL, events=(_event_zero, _event_turn), dense_output=True)


def _tail_rhs(s, state):
    v, dv = state
    return [dv, 7.0 * dv - 12.0 * v + max(v, 0.0) ** 1.5]


@dataclass(frozen=True, eq=False)
class TFProfile:
    """Dimensionless TF profile ``y(x)`` for charge ratio ``lam = N/Z``.

    The neutral profile (``lam = 1``) joins a shooting solution on ``[0, x_match]``
    to the stable Sommerfeld orbit of ``v'' - 7 v' + 12 v = v^(3/2)`` in the
    variables ``v = x^3 y``, ``s = ln x``. Ionic profiles end at ``x0`` where
    ``y(x0) = 0``.
    """

    slope: float
    lam: float
    x_end: float  # x_match for the neutral profile, x0 for ions
    inner: object = field(repr=False)
    tail: object = field(default=None, repr=False)
    tail_shift: float = 0.0
    tail_start: float = 0.0
    slope_mismatch: float = 0.0

    @property
    def neutral(self) -> bool:
        return self.lam == 1.0

    def y(self, x) -> np.ndarray:
        """Profile values; zero beyond ``x0`` for ions."""
        return self._eval(x)[0]

    def dy(self, x) -> np.ndarray:
        """Profile derivative ``y'(x)``."""
        return self._eval(x)[1]

    def _eval(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.zeros_like(x)
        dy = np.zeros_like(x)
        inner = x <= self.x_end
        if np.any(inner):
            sol = self.inner.sol(np.sqrt(x[inner]))
            y[inner], dy[inner] = sol[0], sol[1]
        outer = ~inner
        if self.neutral and np.any(outer):
            s = np.log(x[outer]) - self.tail_shift
            v = np.empty_like(s)
            dv = np.empty_like(s)
            on_orbit = s <= self.tail_start
            if np.any(on_orbit):
                vv = self.tail.sol(s[on_orbit])
                v[on_orbit], dv[on_orbit] = vv[0], vv[1]
            far = ~on_orbit
            # beyond the start of the orbit only the linear stable mode survives
            dev = 144.0 * _TAIL_ETA * np.exp(-SOMMERFELD_ZETA * (s[far] - self.tail_start))
            v[far] = 144.0 - dev
            dv[far] = SOMMERFELD_ZETA * dev
            xo = x[outer]
            y[outer] = v / xo**3
            dy[outer] = (dv - 3.0 * v) / xo**4
        if not self.neutral:
            y = np.maximum(y, 0.0)
        return y, dy

    def charge_inside(self, x) -> np.ndarray:
        """Electron charge inside ``x`` in units of ``Z``: ``1 - y + x y'``."""
        x = np.asarray(x, dtype=float)
        y, dy = self._eval(x)
        out = np.where(x >= self.x_end, self.lam, 1.0 - y + x * dy) if not self.neutral else 1.0 - y + x * dy
        return out


@lru_cache(maxsize=8)
def solve_tf_dimensionless(tol: float = 1e-13) -> TFProfile:
    """Universal neutral-atom TF profile and its initial slope ``B = -y'(0)``.

    Bisection on the slope: too steep and ``y`` crosses zero, too shallow and
    ``y`` turns upward. The tail beyond ``x = 3`` follows the stable orbit
    towards the exact solution ``144/x^3``.
    """
    if not tol > 0:
        raise ParameterError(f"tol must be positive, got {tol}")
    lo, hi = 1.0, 2.0
    t_end = math.sqrt(200.0)
    for it in range(SHOOT_CAP):
        if hi - lo <= tol * hi:
            break
        mid = 0.5 * (lo + hi)
        res = _shoot(mid, t_end)
        if res.status == -1:
            raise SolverError(f"TF shooting integration failed at slope {mid}: {res.message}")
        if res.t_events[0].size:
            hi = mid
        elif res.t_events[1].size:
            lo = mid
        else:
            # trajectory indistinguishable from the separatrix up to x = 200
            break
    else:
        raise SolverError(f"TF slope bisection did not converge; bracket [{lo}, {hi}]")
    slope = 0.5 * (lo + hi)
    t_m = math.sqrt(_MATCH_X)
    inner = solve_ivp(_rhs_sqrt, (0.0, t_m), [1.0, -slope], method="DOP853", rtol=SHOOT_RTOL,
                      atol=SHOOT_ATOL, dense_output=True)
    y_m, p_m = inner.y[:, -1]
    v_m = _MATCH_X**3 * y_m
    dv_m = _MATCH_X**4 * p_m + 3.0 * v_m

    def hit(s, st):
        return st[0] - v_m

    hit.terminal = True
    start = [144.0 * (1.0 - _TAIL_ETA), 144.0 * _TAIL_ETA * SOMMERFELD_ZETA]
    tail = solve_ivp(_tail_rhs, (0.0, -80.0), start, method="DOP853", rtol=SHOOT_RTOL,
                     atol=1e-13, events=hit, dense_output=True)
    if not tail.t_events[0].size:
        raise SolverError("Sommerfeld orbit did not reach the matching point")
    s_hit = float(tail.t_events[0][0])
    dv_orbit = float(tail.y_events[0][0][1])
    shift = math.log(_MATCH_X) - s_hit
    mismatch = (dv_orbit - dv_m) / _MATCH_X**4
    if abs(mismatch) > 1e-6:
        raise SolverError(f"inner profile and Sommerfeld tail disagree in slope by {mismatch:.3e}")
    return TFProfile(slope, 1.0, _MATCH_X, inner, tail, shift, 0.0, mismatch)


@lru_cache(maxsize=64)
def _ion_profile(lam: float) -> TFProfile:
    """Profile of a positive ion with ``N/Z = lam`` in (0, 1)."""
    base = solve_tf_dimensionless().slope
    target = 1.0 - lam

    def excess(slope):
        res = _shoot(slope, math.sqrt(1e5))
        if not res.t_events[0].size:
            return -target
        t0 = float(res.t_events[0][0])
        return -t0 * t0 * float(res.y_events[0][0][1]) - target

    lo = base * (1.0 + 1e-12)
    hi = base * 1.5
    while excess(hi) <= 0:
        hi *= 2.0
        if hi > 1e8:
            raise SolverError(f"ion shooting: no upper bracket for N/Z={lam}")
    if excess(lo) >= 0:
        raise SolverError(f"ion shooting: lower bracket invalid for N/Z={lam} (bracket [{lo}, {hi}])")
    slope = brentq(excess, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=SHOOT_CAP)
    res = _shoot(slope, math.sqrt(1e5))
    if not res.t_events[0].size:
        raise SolverError(f"ion shooting converged to a non-terminating profile for N/Z={lam}")
    t0 = float(res.t_events[0][0])
    inner = solve_ivp(_rhs_sqrt, (0.0, t0), [1.0, -slope], method="DOP853", rtol=SHOOT_RTOL,
                      atol=SHOOT_ATOL, dense_output=True)
    return TFProfile(slope, lam, t0 * t0, inner)


def _profile_integrals(profile: TFProfile) -> tuple[float, float, float]:
    """``int y^(5/2) x^(-1/2)``, ``int y^(3/2) x^(-1/2)``, ``int y^(3/2)(1-y) x^(-1/2)``.

    Integrated in ``t = sqrt(x)`` where the integrands are smooth.
    """
    def piece(fn):
        f_t = lambda t: 2.0 * fn(float(profile.y(t * t)[0]))
        head = adaptive_quad(f_t, 0.0, math.sqrt(profile.x_end), rtol=1e-12)
        if not profile.neutral:
            return head
        f_x = lambda x: fn(float(profile.y(x)[0])) / math.sqrt(x)
        return head + adaptive_quad(f_x, profile.x_end, math.inf, rtol=1e-12, atol=1e-16)

    return (piece(lambda y: y**2.5), piece(lambda y: y**1.5), piece(lambda y: y**1.5 * (1.0 - y)))


@lru_cache(maxsize=64)
def _unit_energy(lam: float, q: int) -> dict:
    """Energy components of the ``Z = 1`` atom with ``N = lam``."""
    k = tf_constants(q)
    profile = solve_tf_dimensionless() if lam == 1.0 else _ion_profile(lam)
    i53, i32, iD = _profile_integrals(profile)
    scale = 1.0 / k.b1  # 4 pi c b^(1/2) = 1/b
    rho53 = k.c ** (2.0 / 3.0) * scale * i53
    nuclear = scale * i32
    mu = 0.0 if lam == 1.0 else (1.0 - lam) / (k.b1 * profile.x_end)
    direct = 0.5 * scale * iD - 0.5 * mu * lam
    kinetic = k.gamma * rho53
    return {"kinetic": kinetic, "nuclear": nuclear, "direct": direct,
            "total": kinetic - nuclear + direct, "rho53": rho53, "mu": mu}


def tf_energy_constant(q: int = 2) -> float:
    """``e0`` with neutral TF energy ``-e0 Z^(7/3)``."""
    return -_unit_energy(1.0, int(q))["total"]


@dataclass(frozen=True, eq=False)
class TFSolution:
    """TF minimizer on a grid together with the profile it came from."""

    params: PhysicalParams
    grid: RadialGrid
    rho: RadialFunction
    phi: RadialFunction
    mu: float
    energy: float
    total_charge: float
    components: dict
    profile: TFProfile = field(repr=False)

    @property
    def length_scale(self) -> float:
        return tf_constants(self.params.q).b1 * self.params.Z ** (-1.0 / 3.0)

    def phi_at(self, r) -> np.ndarray:
        """Mean-field potential at arbitrary radii from the profile."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        Z, b = self.params.Z, self.length_scale
        if self.params.N == 0:
            return Z / r
        inside = Z * self.profile.y(r / b) / r + self.mu
        if self.profile.neutral:
            return inside
        r0 = b * self.profile.x_end
        return np.where(r < r0, inside, (Z - self.params.N) / r)

    def rho_at(self, r) -> np.ndarray:
        r = np.atleast_1d(np.asarray(r, dtype=float))
        c = tf_constants(self.params.q).c
        return c * np.maximum(self.phi_at(r) - self.mu, 0.0) ** 1.5

    def charge_outside(self, R) -> np.ndarray:
        """Semi-analytic charge beyond radius ``R`` (no grid truncation)."""
        x = np.asarray(R, dtype=float) / self.length_scale
        y, dy = self.profile._eval(x)
        if self.profile.neutral:
            # y - x y' directly, avoiding 1 - (1 - y + x y') deep in the tail
            return self.params.Z * (y - x * dy)
        lam = self.profile.lam
        return self.params.Z * np.where(x >= self.profile.x_end, 0.0, lam - 1.0 + y - x * dy)

    @property
    def residual(self) -> float:
        """Max violation of ``(1/2)(6 pi^2/q)^(2/3) rho^(2/3) = [phi - mu]_+`` on the grid."""
        k = tf_constants(self.params.q)
        lhs = 0.5 * (6.0 * math.pi**2 / self.params.q) ** (2.0 / 3.0) * self.rho.values ** (2.0 / 3.0)
        rhs = np.maximum(self.phi.values - self.mu, 0.0)
        scale = max(float(np.max(self.phi.values)), 1e-300)
        del k
        return float(np.max(np.abs(lhs - rhs))) / scale

    def to_files(self, stem) -> tuple[Path, Path]:
        """Write ``<stem>.csv`` (``r,rho,phi``) and a JSON sidecar."""
        stem = Path(stem)
        csv_path = stem.with_suffix(".csv")
        json_path = stem.with_suffix(".json")
        try:
            with csv_path.open("w") as fh:
                fh.write("r,rho,phi\n")
                for r, d, p in zip(self.grid.r, self.rho.values, self.phi.values):
                    fh.write(f"{r:.16e},{d:.16e},{p:.16e}\n")
            meta = {"Z": self.params.Z, "N": self.params.N, "q": self.params.q, "mu": self.mu,
                    "energy": self.energy, "total_charge": self.total_charge, "residual": self.residual}
            json_path.write_text(json.dumps(meta, indent=2, sort_keys=True))
        except OSError as exc:
            raise OSError(f"cannot write TF solution to {stem}: {exc}") from exc
        return csv_path, json_path


def default_tf_grid(Z: float, n: int = 2000, extent: float = 80.0) -> RadialGrid:
    """Log grid from ``1e-6 b`` out to ``extent`` Bohr for a TF atom of charge ``Z``."""
    b = tf_constants(2).b1 * Z ** (-1.0 / 3.0)
    return make_grid(extent, n, "log-uniform", r_min=1e-6 * b)


def solve_tf_atom(Z: float, N: float, q: int = 2, grid: RadialGrid | None = None) -> TFSolution:
    """Thomas-Fermi minimizer for a Coulomb nucleus of charge ``Z`` with ``int rho <= N``.

    For ``N >= Z`` the neutral profile is used and ``mu = 0``; otherwise the ionic
    profile with ``N/Z`` is found by shooting on the initial slope.
    """
    params = PhysicalParams(Z=Z, N=N, q=q)
    grid = default_tf_grid(Z) if grid is None else grid
    k = tf_constants(q)
    r = grid.r
    if N == 0:
        rho = RadialFunction(grid, np.zeros_like(r))
        phi = RadialFunction(grid, Z / r, "potential")
        comps = {"kinetic": 0.0, "nuclear": 0.0, "direct": 0.0, "total": 0.0, "rho53": 0.0, "mu": math.inf}
        return TFSolution(params, grid, rho, phi, math.inf, 0.0, 0.0, comps, None)
    lam = 1.0 if N >= Z else float(N) / float(Z)
    profile = solve_tf_dimensionless() if lam == 1.0 else _ion_profile(lam)
    unit = _unit_energy(lam, int(q))
    s73 = Z ** (7.0 / 3.0)
    comps = {key: unit[key] * s73 for key in ("kinetic", "nuclear", "direct", "total", "rho53")}
    mu = unit["mu"] * Z ** (4.0 / 3.0)
    comps["mu"] = mu
    b = k.b1 * Z ** (-1.0 / 3.0)
    sol = TFSolution(params, grid, RadialFunction(grid, np.zeros_like(r)), RadialFunction(grid, Z / r, "potential"),
                     mu, comps["total"], 0.0, comps, profile)
    phi_v = sol.phi_at(r)
    rho_v = k.c * np.maximum(phi_v - mu, 0.0) ** 1.5
    total = Z * float(profile.charge_inside(np.array([r[-1] / b]))[0])
    return TFSolution(params, grid, RadialFunction(grid, rho_v), RadialFunction(grid, phi_v, "potential"),
                      mu, comps["total"], total, comps, profile)


def tf_functional_on_grid(rho: RadialFunction, Z: float, q: int = 2, external=None) -> float:
    """TF energy of a density by grid quadrature (used for refinement checks)."""
    k = tf_constants(q)
    grid = rho.grid
    U = Z / grid.r if external is None else np.asarray(external)
    g = rho.values
    kin = k.gamma * grid.integrate(g ** (5.0 / 3.0))
    pot = grid.integrate(U * g)
    D = 0.5 * float(np.dot(grid.volume_weights * g, _newton_values(grid, g)))
    return kin - pot + D


def tf_radius(sol, nu: float) -> float:
    """Radius ``R`` with ``int_{|x|>R} rho = nu`` by monotone interpolation of the cumulative charge."""
    grid = sol.rho.grid
    profile = getattr(sol, "profile", None)
    if profile is not None:
        total = min(sol.params.N, sol.params.Z)
        r_nodes = np.concatenate(([0.0], grid.r))
        outside = np.concatenate(([total], sol.charge_outside(grid.r)))
    else:
        cum = _cumulatives(grid, sol.rho.values)
        total = cum.charge[-1]
        r_nodes, outside = cum.r, cum.charge[-1] - cum.charge
    if not 0 < nu < total:
        raise ParameterError(f"nu must lie in (0, {total}), got {nu}")
    if nu < outside[-1]:
        raise ParameterError(f"nu={nu} lies beyond the grid (outside charge at r_max is {outside[-1]})")
    # outside charge decreases with r; interpolate r as a function of it
    keep = np.concatenate(([True], np.diff(outside) < 0))
    o, rr = outside[keep][::-1], r_nodes[keep][::-1]
    return float(PchipInterpolator(o, rr)(nu))


def rho_53_bound_check(sol: TFSolution) -> tuple[float, float, bool]:
    """``int rho^(5/3)`` against ``4 (2^(2/3)/pi^2)(5/7) q^(4/3) Z^(7/3)``."""
    if not sol.profile.neutral:
        raise ParameterError("the rho^(5/3) bound applies to neutral TF atoms")
    q, Z = sol.params.q, sol.params.Z
    lhs = sol.components["rho53"]
    rhs = 4.0 * 2.0 ** (2.0 / 3.0) / math.pi**2 * (5.0 / 7.0) * q ** (4.0 / 3.0) * Z ** (7.0 / 3.0)
    return lhs, rhs, lhs <= rhs


@dataclass(frozen=True)
class SommerfeldEnvelope:
    """Constants of the Sommerfeld envelopes for ``q`` spin states and charge ``Z``."""

    q: int
    Z: float

    @property
    def zeta(self) -> float:
        return SOMMERFELD_ZETA

    @property
    def beta0(self) -> float:
        return 0.5 * math.pi ** (2.0 / 3.0) * 3.0 ** (-5.0 / 3.0) * 2.0 ** (-1.0 / 3.0) * self.q ** (-2.0 / 3.0)

    @property
    def a(self) -> float:
        b0 = self.beta0
        return b0**self.zeta * (9.0 * math.pi / (self.q * b0**1.5) - 1.0)

    @property
    def amplitude(self) -> float:
        return 3.0**4 * math.pi**2 / (2.0 * self.q**2)


def sommerfeld_bounds(x, env: SommerfeldEnvelope):
    """Lower and upper envelopes of the atomic TF mean-field potential at radius ``x``.

    Upper: ``min{3^4 pi^2/(2 q^2) x^-4, Z/x}``. Lower: ``Z/x - Z^(4/3)/(2 beta0)`` for
    ``x <= beta0 Z^(-1/3)`` and ``3^4 pi^2/(2q^2)(1 + a Z^(-zeta/3) x^-zeta)^-2 x^-4`` beyond.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ParameterError("radius must be positive")
    Z, A = env.Z, env.amplitude
    upper = np.minimum(A / x**4, Z / x)
    inner = x <= env.beta0 * Z ** (-1.0 / 3.0)
    low_in = Z / x - Z ** (4.0 / 3.0) / (2.0 * env.beta0)
    low_out = A * (1.0 + env.a * Z ** (-env.zeta / 3.0) * x ** (-env.zeta)) ** -2 / x**4
    lower = np.where(inner, low_in, low_out)
    if lower.ndim == 0:
        return float(lower), float(upper)
    return lower, upper


@dataclass(frozen=True, eq=False)
class OTFSolution:
    """Outside-TF minimizer: density supported in ``|x| >= r``."""

    r_cut: float
    V: RadialFunction
    rho: RadialFunction
    phi: RadialFunction
    mu: float
    N_out: float
    q: int
    sweeps: int
    residual: float

    @property
    def grid(self) -> RadialGrid:
        return self.rho.grid

    def envelope_constants(self) -> tuple[float, float]:
        """Smallest ``a`` and ``A`` making the Sommerfeld sandwich hold on the grid."""
        A0 = tf_constants(self.q).sommerfeld
        r = self.grid.r
        mask = (r > self.r_cut) & (self.phi.values > 0)
        x = r[mask]
        ratio = self.phi.values[mask] * x**4 / A0
        scale = (x / self.r_cut) ** SOMMERFELD_ZETA
        a_fit = float(np.max((ratio**-0.5 - 1.0) * scale))
        A_fit = float(np.max((ratio - 1.0) * scale))
        return a_fit, A_fit


def solve_otf(V_r, r: float, N_out: float, q: int = 2, grid: RadialGrid | None = None,
              tol: float = 1e-10) -> OTFSolution:
    """Minimize the TF functional with external potential ``chi_{|x|>=r} V_r`` under ``int rho <= N_out``.

    Damped (0.5) fixed point on ``phi`` with a Newton preconditioner
    ``(1 + D_N M)^-1`` (``D_N`` the discrete Newton operator, ``M`` the derivative
    of ``rho`` with respect to ``phi``) and, every sweep, the chemical potential
    found by bisection so that the charge constraint holds.

    Parameters
    ----------
    V_r : RadialFunction or array or callable
        Potential samples on ``grid`` (only ``|x| >= r`` is used).
    r : float
        Cut radius.
    N_out : float
        Electron budget outside the cut.
    """
    if isinstance(V_r, RadialFunction):
        grid = V_r.grid if grid is None else grid
        v = V_r.values
    elif callable(V_r):
        if grid is None:
            raise ParameterError("a grid is required for a callable potential")
        v = np.asarray(V_r(grid.r), dtype=float)
    else:
        if grid is None:
            raise ParameterError("a grid is required for sampled potential data")
        v = np.asarray(V_r, dtype=float)
    if not r > 0:
        raise ParameterError(f"cut radius must be positive, got {r}")
    if N_out < 0:
        raise ParameterError(f"N_out must be nonnegative, got {N_out}")
    k = tf_constants(q)
    rr = grid.r
    outside = rr >= r
    V = np.where(outside, v, 0.0)
    W = 4.0 * np.pi * rr**2 * cut_weights(grid, r)
    # dense discrete Newton operator on the cut weights, rows act on density values
    Nmat = W[None, :] / np.maximum(rr[:, None], rr[None, :])
    Nmat[np.diag_indices_from(Nmat)] -= (grid.step**2 / 12.0) * 4.0 * np.pi * grid.jacobian**2
    idx = np.flatnonzero(outside)
    Nsub = Nmat[np.ix_(idx, idx)]

    def density(phi, mu):
        return np.where(outside, k.c * np.maximum(phi - mu, 0.0) ** 1.5, 0.0)

    def chem(phi):
        if float(np.dot(W, density(phi, 0.0))) <= N_out:
            return 0.0
        lo, hi = 0.0, float(np.max(phi))
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if float(np.dot(W, density(phi, mid))) > N_out:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-15 * max(hi, 1e-300):
                break
        return hi

    phi = V.copy()
    scale = max(float(np.max(np.abs(V))), 1e-300)
    for sweep in range(1, OTF_CAP + 1):
        mu = chem(phi)
        rho = density(phi, mu)
        res = V - _newton_values(grid, rho, W) - phi
        err = float(np.max(np.abs(res[outside]))) / scale
        if err < tol:
            break
        M = 1.5 * k.c * np.sqrt(np.maximum(phi[idx] - mu, 0.0))
        J = np.eye(idx.size) + Nsub * M[None, :]
        rhs = res[idx]
        if mu > 0:
            # active charge constraint: border the system with the mu direction so
            # the step keeps int rho = N_out to first order
            WM = W[idx] * M
            J = np.block([[J, -(Nsub @ M)[:, None]], [WM[None, :], -np.sum(WM)[None, None]]])
            rhs = np.concatenate((rhs, [N_out - float(np.dot(W, rho))]))
        try:
            step_out = np.linalg.solve(J, rhs)[: idx.size]
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"OTF preconditioner singular at sweep {sweep}: {exc}") from exc
        step = res.copy()
        step[idx] = step_out
        phi = phi + OTF_DAMPING * step
    else:
        raise SolverError(f"OTF iteration did not converge in {OTF_CAP} sweeps (residual {err:.3e})")
    mu = chem(phi)
    rho = density(phi, mu)
    phi = V - _newton_values(grid, rho, W)
    eq = 0.5 * (6.0 * math.pi**2 / q) ** (2.0 / 3.0) * rho ** (2.0 / 3.0) - np.where(outside, np.maximum(phi - mu, 0.0), 0.0)
    residual = float(np.max(np.abs(eq))) / max(float(np.max(phi)), 1e-300)
    return OTFSolution(r, RadialFunction(grid, V, "potential"), RadialFunction(grid, rho),
                       RadialFunction(grid, phi, "potential"), mu, N_out, q, sweep, residual)
