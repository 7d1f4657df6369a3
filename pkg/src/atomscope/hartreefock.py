"""Radial pseudo-relativistic Hartree-Fock in the configuration-averaged central-field model.

Orbitals are reduced radial functions ``u(r)`` on a uniform grid with Dirichlet
conditions at ``r = 0`` and ``r = r_max``. A shell ``(n, l)`` holds up to
``q (2l + 1)`` electrons; partially filled shells use the average energy of
their configuration. The kinetic operator of each channel is the exact matrix
function ``alpha^-1 (sqrt(A + alpha^-2) - alpha^-1)`` of the finite-difference
operator ``A = -d^2/dr^2 + l(l+1)/r^2``.

Energies are in Hartree; ``alpha`` is the fine-structure constant and
``kappa = Z alpha`` must stay below ``2/pi``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.linalg import eigh, eigh_tridiagonal

from .errors import ParameterError, SolverError
from .params import KAPPA_CRITICAL, PhysicalParams
from .radial import (RadialFunction, RadialGrid, _cumulatives, channel_laplacian, make_grid,
                     screened_potential)

__all__ = [
    "ChannelOperator",
    "Shell",
    "HFConfig",
    "HFSolution",
    "build_channel_kinetic",
    "lowest_eigenpairs",
    "direct_potential",
    "exchange_apply",
    "slater_yk",
    "angular_coefficient",
    "scf_solve",
    "hf_screened_potential",
    "hf_radius",
    "hf_grid",
]

log = logging.getLogger(__name__)

MODES = ("relativistic", "nonrelativistic")


# ---------------------------------------------------------------- kinetic operator


@dataclass(frozen=True, eq=False)
class ChannelOperator:
    """Kinetic matrix of one angular-momentum channel on the interior grid nodes."""

    l: int
    grid: RadialGrid
    alpha: float
    mode: str
    matrix: np.ndarray = field(repr=False)
    eigvals: np.ndarray = field(repr=False)
    eigvecs: np.ndarray | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


def _kinetic_values(lam: np.ndarray, alpha: float, mode: str) -> np.ndarray:
    lam = np.maximum(lam, 0.0)
    if mode == "nonrelativistic":
        return 0.5 * lam
    inv = 1.0 / alpha
    return inv * lam / (np.sqrt(lam + inv * inv) + inv)


@lru_cache(maxsize=32)
def _cached_kinetic(n: int, h: float, l: int, alpha: float, mode: str) -> ChannelOperator:
    grid = make_grid(n * h, n)
    d, e = channel_laplacian(grid, l)
    if mode == "nonrelativistic":
        lam = eigh_tridiagonal(d, e, eigvals_only=True)
        mat = np.diag(0.5 * d) + np.diag(0.5 * e, 1) + np.diag(0.5 * e, -1)
        return ChannelOperator(l, grid, alpha, mode, mat, lam, None)
    try:
        lam, U = eigh_tridiagonal(d, e)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"channel eigendecomposition failed for l={l}: {exc}") from exc
    f = _kinetic_values(lam, alpha, mode)
    mat = (U * f) @ U.T
    mat = 0.5 * (mat + mat.T)
    return ChannelOperator(l, grid, alpha, mode, mat, lam, U)


def build_channel_kinetic(grid: RadialGrid, l: int, alpha: float, mode: str = "relativistic") -> ChannelOperator:
    """Kinetic operator of channel ``l`` as a dense symmetric matrix.

    Relativistic mode returns ``U alpha^-1 (sqrt(Lam + alpha^-2) - alpha^-1) U^T``;
    nonrelativistic mode returns ``A / 2``.
    """
    if grid.scheme != "uniform":
        raise ParameterError("the spectral kinetic operator requires a uniform grid")
    if mode not in MODES:
        raise ParameterError(f"mode must be one of {MODES}, got {mode!r}")
    if not alpha > 0:
        raise ParameterError(f"alpha must be positive, got {alpha}")
    if int(l) != l or l < 0:
        raise ParameterError(f"l must be a nonnegative integer, got {l}")
    op = _cached_kinetic(grid.n, float(grid.step), int(l), float(alpha), mode)
    return replace(op, grid=grid)


def _potential_vector(grid: RadialGrid, potential) -> np.ndarray:
    if potential is None:
        return np.zeros(grid.n - 1)
    if isinstance(potential, RadialFunction):
        v = potential.values
    elif callable(potential):
        v = np.asarray(potential(grid.r), dtype=float)
    else:
        v = np.asarray(potential, dtype=float)
    if v.shape == (grid.n,):
        v = v[:-1]
    if v.shape != (grid.n - 1,):
        raise ParameterError(f"potential has shape {v.shape}, expected ({grid.n},)")
    return v


def _to_orbital(grid: RadialGrid, vec: np.ndarray) -> np.ndarray:
    """Euclidean-normalized interior vector -> grid values with ``int u^2 dr = 1``."""
    u = np.zeros(grid.n)
    u[:-1] = vec / math.sqrt(grid.step)
    big = np.flatnonzero(np.abs(u) > 1e-12 * np.max(np.abs(u)))
    if big.size and u[big[0]] < 0:
        u = -u
    return u


def _eigh_lowest(H: np.ndarray, count: int):
    count = min(count, H.shape[0])
    try:
        return eigh(H, subset_by_index=[0, count - 1], driver="evr", check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"dense symmetric eigensolver failed: {exc}") from exc


def lowest_eigenpairs(op: ChannelOperator, potential=None, count: int = 1) -> list[tuple[float, RadialFunction]]:
    """Lowest ``count`` eigenpairs of ``kinetic + potential`` in channel ``op.l``.

    Eigenvectors are normalized with ``int u^2 dr = 1`` and signed so that the first
    significant interior value is positive.
    """
    if count < 1:
        raise ParameterError(f"count must be >= 1, got {count}")
    v = _potential_vector(op.grid, potential)
    H = op.matrix + np.diag(v)
    vals, vecs = _eigh_lowest(H, count)
    out = []
    for k in range(vals.size):
        u = _to_orbital(op.grid, vecs[:, k])
        out.append((float(vals[k]), RadialFunction.orbital(op.grid, u)))
    return out


# ---------------------------------------------------------------- Slater machinery


@lru_cache(maxsize=None)
def angular_coefficient(l1: int, k: int, l2: int) -> float:
    """Square of the 3j symbol ``(l1 k l2; 0 0 0)``; zero unless the triangle and parity rules hold."""
    J = l1 + k + l2
    if J % 2 or k < abs(l1 - l2) or k > l1 + l2:
        return 0.0
    g = J // 2
    f = math.factorial
    val = (f(J - 2 * l1) * f(J - 2 * k) * f(J - 2 * l2) / f(J + 1)) * (f(g) / (f(g - l1) * f(g - k) * f(g - l2))) ** 2
    return float(val)


def _allowed_k(l1: int, l2: int):
    return [k for k in range(abs(l1 - l2), l1 + l2 + 1) if angular_coefficient(l1, k, l2) > 0]


def slater_yk(grid: RadialGrid, f: np.ndarray, k: int) -> np.ndarray:
    """``Y^k(r) = int f(s) r_<^k / r_>^(k+1) ds`` with the kink-corrected trapezoid rule.

    ``f`` is the product of two reduced orbitals sampled on the grid.
    """
    r = grid.r
    wf = grid.w * f
    if k == 0:
        inner = np.cumsum(wf) / r
        t = wf / r
    else:
        inner = np.cumsum(wf * r**k) / r ** (k + 1)
        t = wf / r ** (k + 1)
    outer = np.cumsum(t[::-1])[::-1] - t
    outer = outer * r**k if k else outer
    kink = (grid.step**2 / 12.0) * (2 * k + 1) * f / r**2
    return inner + outer - kink


def _kernel_matrix(grid: RadialGrid, k: int, cache: dict) -> np.ndarray:
    """Interior-node matrix of ``w_j r_<^k/r_>^(k+1)`` with the kink diagonal."""
    key = ("K", k)
    K = cache.get(key)
    if K is None:
        r = grid.r[:-1]
        rmin = np.minimum(r[:, None], r[None, :])
        rmax = np.maximum(r[:, None], r[None, :])
        K = grid.step * rmin**k / rmax ** (k + 1)
        K[np.diag_indices_from(K)] -= (grid.step**2 / 12.0) * (2 * k + 1) / r**2
        cache[key] = K
    return K


@dataclass(frozen=True, eq=False)
class Shell:
    """Occupied radial shell."""

    n: int
    l: int
    occ: float
    eps: float
    u: RadialFunction = field(repr=False)

    @property
    def capacity_per_spin(self) -> int:
        return 2 * self.l + 1


def _density_values(grid: RadialGrid, shells) -> np.ndarray:
    rho = np.zeros(grid.n)
    for s in shells:
        rho += s.occ * s.u.values**2
    return rho / (4.0 * np.pi * grid.r**2)


def direct_potential(shells, grid: RadialGrid | None = None) -> RadialFunction:
    """Hartree potential of ``rho = sum f_i |u_i|^2 / (4 pi r^2)``."""
    if not shells:
        if grid is None:
            raise ParameterError("an empty shell list needs an explicit grid")
        return RadialFunction(grid, np.zeros(grid.n), "potential")
    grid = shells[0].u.grid
    pair = np.zeros(grid.n)
    for s in shells:
        pair += s.occ * s.u.values**2
    return RadialFunction(grid, slater_yk(grid, pair, 0), "potential")


def exchange_apply(shells, target, q: int = 2, target_l: int | None = None) -> RadialFunction:
    """Configuration-averaged exchange acting on ``target``.

    ``(K f)(r) = sum_j (w_j / q) sum_k c_k(l_j, l) u_j(r) Y^k(u_j, f; r)`` where
    ``c_k`` is the squared 3j coefficient. ``target`` is a :class:`Shell` or a
    reduced orbital; for a bare orbital ``target_l`` gives its angular momentum.
    """
    if isinstance(target, Shell):
        f, l = target.u.values, target.l
    else:
        f = target.values if isinstance(target, RadialFunction) else np.asarray(target, dtype=float)
        if target_l is None:
            raise ParameterError("target_l is required for a bare orbital")
        l = int(target_l)
    grid = shells[0].u.grid
    out = np.zeros(grid.n)
    for s in shells:
        for k in _allowed_k(s.l, l):
            out += (s.occ / q) * angular_coefficient(s.l, k, l) * s.u.values * slater_yk(grid, s.u.values * f, k)
    out[-1] = 0.0
    return RadialFunction(grid, out, "potential")


# ---------------------------------------------------------------- energy functional


def _pair_factor(occ: float, cap: int) -> float:
    """``w(w-1)/(g(g-1))``; zero when fewer than two electrons can pair."""
    if cap <= 1 or occ < 1.0:
        return 0.0
    return occ * (occ - 1.0) / (cap * (cap - 1.0))


def _self_factor(occ: float, cap: int) -> float:
    """``(w-1) g / (g-1)``, the weight of the intra-shell interaction in the shell operator."""
    if cap <= 1 or occ < 1.0:
        return 0.0
    return (occ - 1.0) * cap / (cap - 1.0)


@dataclass
class _Workspace:
    grid: RadialGrid
    Z: float
    q: int
    alpha: float
    mode: str
    l_max: int
    cache: dict = field(default_factory=dict)

    def kinetic(self, l: int) -> np.ndarray:
        return build_channel_kinetic(self.grid, l, self.alpha, self.mode).matrix


def _energy(ws: _Workspace, shells) -> dict:
    grid, q = ws.grid, ws.q
    h = grid.step
    kin = 0.0
    nuc = 0.0
    for s in shells:
        v = s.u.values[:-1]
        kin += s.occ * h * float(v @ ws.kinetic(s.l) @ v)
        nuc += s.occ * grid.integrate_1d(s.u.values**2 / grid.r)
    nuc *= ws.Z
    pair = sum(s.occ * s.u.values**2 for s in shells)
    VH = slater_yk(grid, pair, 0)
    direct = 0.5 * grid.integrate_1d(pair * VH)
    e_int = 0.0
    for i, s in enumerate(shells):
        cap = q * (2 * s.l + 1)
        a = _pair_factor(s.occ, cap)
        if a:
            uu = s.u.values**2
            F0 = grid.integrate_1d(uu * slater_yk(grid, uu, 0))
            Fk = sum(angular_coefficient(s.l, k, s.l) * grid.integrate_1d(uu * slater_yk(grid, uu, k))
                     for k in _allowed_k(s.l, s.l))
            e_int += a * 0.5 * cap * cap * (F0 - Fk / q)
        for t in shells[i + 1:]:
            ust = s.u.values * t.u.values
            F0 = grid.integrate_1d(s.u.values**2 * slater_yk(grid, t.u.values**2, 0))
            Gk = sum(angular_coefficient(s.l, k, t.l) * grid.integrate_1d(ust * slater_yk(grid, ust, k))
                     for k in _allowed_k(s.l, t.l))
            e_int += s.occ * t.occ * (F0 - Gk / q)
    exchange = direct - e_int
    return {"kinetic": kin, "nuclear": nuc, "direct": direct, "exchange": exchange,
            "total": kin - nuc + direct - exchange}


def _virtual_operator(ws: _Workspace, shells, l: int, VH: np.ndarray) -> np.ndarray:
    """Matrix of ``h_v = T - Z/r + V_H - K`` on the interior nodes of channel ``l``."""
    r = ws.grid.r[:-1]
    H = ws.kinetic(l) + np.diag(-ws.Z / r + VH[:-1])
    for s in shells:
        u = s.u.values[:-1]
        for k in _allowed_k(s.l, l):
            c = (s.occ / ws.q) * angular_coefficient(s.l, k, l)
            H -= c * (u[:, None] * _kernel_matrix(ws.grid, k, ws.cache) * u[None, :])
    return H


def _self_correction(ws: _Workspace, s: Shell) -> np.ndarray:
    """Local potential ``delta_t`` with ``h_t u_t = h_v u_t + delta_t u_t``."""
    cap = ws.q * (2 * s.l + 1)
    coef = _self_factor(s.occ, cap) - s.occ
    if coef == 0.0:
        return np.zeros(ws.grid.n - 1)
    uu = s.u.values**2
    y = slater_yk(ws.grid, uu, 0)
    y = y - sum(angular_coefficient(s.l, k, s.l) * slater_yk(ws.grid, uu, k) for k in _allowed_k(s.l, s.l)) / ws.q
    return coef * y[:-1]


def _channel_blocks(ws: _Workspace, shells, VH: np.ndarray):
    """Per channel: ``h_v`` matrix, occupied shells, and ``h_t u_t`` vectors."""
    out = {}
    for l in range(ws.l_max + 1):
        Hv = _virtual_operator(ws, shells, l, VH)
        occ = [s for s in shells if s.l == l]
        E = np.array([s.u.values[:-1] * math.sqrt(ws.grid.step) for s in occ]).T if occ else np.zeros((Hv.shape[0], 0))
        HE = Hv @ E if occ else E
        for j, s in enumerate(occ):
            HE[:, j] = HE[:, j] + _self_correction(ws, s) * E[:, j]
        out[l] = (Hv, occ, E, HE)
    return out


def _coupling_operator(Hv: np.ndarray, occ, E: np.ndarray, HE: np.ndarray) -> np.ndarray:
    """Symmetric operator whose eigenvectors solve the shell equations at self-consistency.

    Virtual block ``Q h_v Q``, occupied-virtual block ``Q h_t u_t``, diagonal
    ``eps_t = <u_t|h_t|u_t>``, and occupied-occupied couplings that vanish when the
    Lagrange multipliers are symmetric (scaled as a Newton step in the rotation angle).
    """
    if not occ:
        return Hv
    P_Hv = E @ (E.T @ Hv)
    R = Hv - P_Hv - P_Hv.T + E @ (E.T @ Hv @ E) @ E.T
    QHE = HE - E @ (E.T @ HE)
    R += QHE @ E.T + E @ QHE.T
    M = E.T @ HE  # M[s, t] = <s|h_t|t>
    nocc = len(occ)
    B = np.zeros((nocc, nocc))
    for s in range(nocc):
        B[s, s] = M[s, s]
        for t in range(s + 1, nocc):
            ws_, wt = occ[s].occ, occ[t].occ
            if abs(ws_ - wt) > 1e-12:
                val = (ws_ * M[t, s] - wt * M[s, t]) / (ws_ - wt)
            else:
                val = 0.5 * (M[t, s] + M[s, t])
            B[s, t] = B[t, s] = val
    R += E @ B @ E.T
    return 0.5 * (R + R.T)


def _el_residual(ws: _Workspace, blocks) -> float:
    """``max_t ||h_t u_t - sum_s (Lambda_st / w_t) u_s|| / max(1, |eps_t|)``, symmetric Lambda."""
    worst = 0.0
    for l, (Hv, occ, E, HE) in blocks.items():
        if not occ:
            continue
        w = np.array([s.occ for s in occ])
        M = E.T @ HE
        Lam = 0.5 * (M * w[None, :] + (M * w[None, :]).T)
        for t in range(len(occ)):
            res = HE[:, t] - E @ (Lam[:, t] / w[t])
            eps = M[t, t]
            worst = max(worst, float(np.linalg.norm(res)) / max(1.0, abs(eps)))
    return worst


# ---------------------------------------------------------------- SCF driver


@dataclass(frozen=True)
class HFConfig:
    """SCF settings.

    ``h`` defaults to ``min(0.02, 0.3/Z)``; ``l_max`` defaults to 1, 2 or 3 for
    ``N <= 12``, ``N <= 54`` and larger ``N``.
    """

    mode: str = "relativistic"
    r_max: float = 25.0
    h: float | None = None
    l_max: int | None = None
    damping: float = 0.3
    max_iter: int = 400
    eps_tol: float = 1e-8
    rho_tol: float = 1e-8
    energy_tol: float = 1e-9
    bind_tol: float = 1e-6
    degeneracy_tol: float = 1e-10
    history: int = 6


@dataclass(frozen=True, eq=False)
class HFSolution:
    """Converged (or last) SCF state."""

    params: PhysicalParams
    grid: RadialGrid
    shells: tuple
    rho: RadialFunction
    energy: dict
    iterations: int
    converged: bool
    el_residual: float
    unbound: bool
    mode: str
    damping_log: tuple = ()
    history: tuple = ()

    @property
    def homo(self) -> Shell:
        return max(self.shells, key=lambda s: (s.eps, s.l, s.n))

    def orthonormality_error(self) -> float:
        worst = 0.0
        for l in {s.l for s in self.shells}:
            U = np.array([s.u.values for s in self.shells if s.l == l])
            G = self.grid.step * U @ U.T
            worst = max(worst, float(np.max(np.abs(G - np.eye(len(G))))))
        return worst

    def to_files(self, stem) -> list[Path]:
        """Write ``<stem>.json``, ``<stem>_rho.csv`` and one ``<stem>_u_<n><l>.csv`` per shell."""
        stem = Path(stem)
        paths = []
        try:
            meta = {"Z": self.params.Z, "N": self.params.N, "q": self.params.q, "alpha": self.params.alpha,
                    "converged": self.converged, "iterations": self.iterations,
                    "energy": {k: self.energy[k] for k in ("kinetic", "nuclear", "direct", "exchange", "total")},
                    "shells": [{"n": s.n, "l": s.l, "occ": s.occ, "eps": s.eps} for s in self.shells]}
            p = stem.with_suffix(".json")
            p.write_text(json.dumps(meta, indent=2, sort_keys=True))
            paths.append(p)
            p = stem.parent / f"{stem.name}_rho.csv"
            with p.open("w") as fh:
                fh.write("r,rho\n")
                for r, d in zip(self.grid.r, self.rho.values):
                    fh.write(f"{r:.16e},{d:.16e}\n")
            paths.append(p)
            for s in self.shells:
                p = stem.parent / f"{stem.name}_u_{s.n}{'spdfghik'[s.l]}.csv"
                with p.open("w") as fh:
                    fh.write("r,u\n")
                    for r, u in zip(self.grid.r, s.u.values):
                        fh.write(f"{r:.16e},{u:.16e}\n")
                paths.append(p)
        except OSError as exc:
            raise OSError(f"cannot write HF solution to {stem}: {exc}") from exc
        return paths


def hf_grid(Z: float, config: HFConfig) -> RadialGrid:
    h = config.h if config.h is not None else min(0.02, 0.3 / Z)
    n = int(round(config.r_max / h))
    return make_grid(n * h, n)


def _default_lmax(N: float) -> int:
    if N <= 12:
        return 1
    if N <= 54:
        return 2
    return 3


def _aufbau(candidates, N: float, q: int, tol: float):
    """Fill levels ``(eps, l, n, vec)`` in order; degenerate open levels share electrons equally."""
    order = sorted(candidates, key=lambda c: (c[0], c[1], c[2]))
    left = float(N)
    occs = []
    i = 0
    while left > 1e-12 and i < len(order):
        group = [order[i]]
        j = i + 1
        while j < len(order) and abs(order[j][0] - order[i][0]) <= tol * max(1.0, abs(order[i][0])):
            group.append(order[j])
            j += 1
        cap = sum(q * (2 * c[1] + 1) for c in group)
        if cap <= left:
            for c in group:
                occs.append((c, float(q * (2 * c[1] + 1))))
            left -= cap
        else:
            frac = left / cap
            for c in group:
                occs.append((c, frac * q * (2 * c[1] + 1)))
            left = 0.0
        i = j
    if left > 1e-12:
        raise SolverError(f"not enough levels to place {N} electrons; raise l_max or the level count")
    return occs


def _levels_per_channel(N: float, q: int, l: int) -> int:
    return int(math.ceil(N / (q * (2 * l + 1)))) + 2


def _shells_from(grid: RadialGrid, occs) -> list[Shell]:
    shells = []
    for (eps, l, n, vec), w in occs:
        if w <= 0:
            continue
        u = _to_orbital(grid, vec)
        u /= math.sqrt(grid.integrate_1d(u * u))
        shells.append(Shell(n, l, w, eps, RadialFunction(grid, u, "reduced-orbital")))
    return sorted(shells, key=lambda s: (s.l, s.n))


def _diagonalize(ws: _Workspace, F: dict, N: float, pattern=None):
    """Lowest levels of each channel, filled by aufbau or by a frozen ``(n, l, occ)`` pattern."""
    cands = []
    for l, H in F.items():
        vals, vecs = _eigh_lowest(H, _levels_per_channel(N, ws.q, l))
        for k in range(vals.size):
            cands.append((float(vals[k]), l, l + 1 + k, vecs[:, k]))
    if pattern is not None:
        by_level = {(c[2], c[1]): c for c in cands}
        return _shells_from(ws.grid, [(by_level[(n, l)], w) for n, l, w in pattern])
    return _shells_from(ws.grid, _aufbau(cands, N, ws.q, 1e-10))


def _initial_potential(ws: _Workspace, N: float) -> np.ndarray:
    from .thomasfermi import solve_tf_atom

    r = ws.grid.r
    if N <= 1:
        return -ws.Z / r
    tf = solve_tf_atom(ws.Z, min(N, ws.Z), q=ws.q)
    return -tf.phi_at(r)


class _AndersonMixer:
    """Damped fixed-point update ``F <- F + beta (R(F) - F)`` with Anderson extrapolation.

    Matrices are symmetric, so only their upper triangles are stored. With
    ``depth = 0`` this is plain linear mixing.
    """

    def __init__(self, depth: int):
        self.depth = depth
        self.reset()

    def reset(self):
        self.last = None
        self.dX, self.dF = [], []
        self.gram = np.zeros((0, 0))

    def step(self, F: dict, R: dict, beta: float) -> dict:
        keys = sorted(F)
        idx = {l: np.triu_indices(F[l].shape[0]) for l in keys}
        x = np.concatenate([F[l][idx[l]] for l in keys])
        f = np.concatenate([(R[l] - F[l])[idx[l]] for l in keys])
        if self.last is not None and self.depth > 0:
            dx, df = x - self.last[0], f - self.last[1]
            self.dX.append(dx)
            self.dF.append(df)
            row = np.array([df @ v for v in self.dF])
            if len(self.dF) > self.depth:
                self.dX.pop(0)
                self.dF.pop(0)
                self.gram = self.gram[1:, 1:]
                row = row[1:]
            k = len(self.dF)
            G = np.zeros((k, k))
            G[:-1, :-1] = self.gram
            G[-1, :] = G[:, -1] = row
            self.gram = G
        self.last = (x, f)
        x_new = x + beta * f
        if self.dF:
            rhs = np.array([v @ f for v in self.dF])
            G = self.gram + 1e-12 * np.trace(self.gram) * np.eye(len(self.dF))
            gamma = np.linalg.solve(G, rhs)
            for g, a, b in zip(gamma, self.dX, self.dF):
                x_new -= g * (a + beta * b)
        out, pos = {}, 0
        for l in keys:
            m = idx[l][0].size
            M = np.zeros_like(F[l])
            M[idx[l]] = x_new[pos:pos + m]
            out[l] = M + np.triu(M, 1).T
            pos += m
        return out


def scf_solve(Z: float, N: float, alpha: float, q: int = 2, config: HFConfig | None = None,
              initial: "HFSolution | None" = None) -> HFSolution:
    """Damped self-consistent field iteration of the restricted HF equations.

    Parameters
    ----------
    Z, N : float
        Nuclear charge and electron number (``N >= 1``).
    alpha : float
        Fine-structure constant; ``Z alpha`` must be below ``2/pi``.
    q : int
        Spin states.
    config : HFConfig, optional
        Grid, damping and tolerance settings.
    initial : HFSolution, optional
        Previous solution whose orbitals (interpolated onto the new grid) seed the iteration.

    Returns
    -------
    HFSolution
        ``converged`` is False when the iteration cap is reached; ``unbound`` is True
        when the highest occupied level has ``eps >= -bind_tol``.
    """
    config = HFConfig() if config is None else config
    params = PhysicalParams(Z=Z, N=N, q=q, alpha=alpha)
    if params.kappa >= KAPPA_CRITICAL:
        raise ParameterError(f"kappa = Z alpha = {params.kappa} must be below 2/pi")
    if N < 1:
        raise ParameterError(f"need at least one electron, got N={N}")
    if config.mode not in MODES:
        raise ParameterError(f"mode must be one of {MODES}")
    if not 0 < config.damping <= 1:
        raise ParameterError(f"damping must lie in (0, 1], got {config.damping}")
    grid = hf_grid(Z, config)
    l_max = config.l_max if config.l_max is not None else _default_lmax(N)
    ws = _Workspace(grid, float(Z), int(q), float(alpha), config.mode, l_max)

    if initial is not None:
        V0 = _interp_potential(initial, grid)
    else:
        V0 = _initial_potential(ws, N)
    F = {l: ws.kinetic(l) + np.diag(V0[:-1]) for l in range(l_max + 1)}
    shells = _diagonalize(ws, F, N)

    damping = config.damping
    mixer = _AndersonMixer(config.history)
    occ_key = None
    pattern = None
    seen = {}
    revisits = 0
    damping_log = []
    history = []
    prev_eps = None
    prev_rho = None
    converged = False
    it = 0
    energy = None
    for it in range(1, config.max_iter + 1):
        rho_v = _density_values(grid, shells)
        pair = sum(s.occ * s.u.values**2 for s in shells)
        VH = slater_yk(grid, pair, 0)
        blocks = _channel_blocks(ws, shells, VH)
        energy = _energy(ws, shells)
        history.append(energy["total"])
        key = tuple((s.n, s.l, s.occ) for s in shells)
        if pattern is None and key != occ_key and key in seen:
            revisits += 1
        seen[key] = min(seen.get(key, math.inf), energy["total"])
        eps = {(s.n, s.l): float(blocks[s.l][3][:, i] @ blocks[s.l][2][:, i])
               for l in blocks for i, s in enumerate(blocks[l][1])}
        if prev_eps is not None and prev_eps.keys() == eps.keys():
            d_eps = max(abs(eps[k] - prev_eps[k]) / max(1.0, abs(eps[k])) for k in eps)
            d_rho = grid.integrate(np.abs(rho_v - prev_rho))
            if d_eps < config.eps_tol and d_rho < config.rho_tol * N:
                converged = True
                break
        # rises below the energy tolerance are extrapolation noise, not divergence
        if it > 10 and history[-1] > history[-2] + config.energy_tol * max(1.0, abs(history[-2])):
            damping = max(0.5 * damping, 1e-3)
            damping_log.append((it, damping))
            log.info("SCF energy rose at iteration %d; damping halved to %g", it, damping)
            mixer.reset()
        prev_eps, prev_rho = eps, rho_v
        R = {l: _coupling_operator(*blocks[l]) for l in blocks}
        if key != occ_key:
            mixer.reset()
            occ_key = key
        if pattern is None and revisits >= 2:
            # near-degenerate levels swap places every few sweeps: keep the cheapest filling
            pattern = min(seen, key=seen.get)
            log.info("occupations cycle at iteration %d; frozen to %s", it, pattern)
        F = mixer.step(F, R, damping)
        shells = _diagonalize(ws, F, N, pattern)

    # report orbital energies and residual of the final orbitals
    pair = sum(s.occ * s.u.values**2 for s in shells)
    VH = slater_yk(grid, pair, 0)
    blocks = _channel_blocks(ws, shells, VH)
    final = []
    for l, (Hv, occ, E, HE) in blocks.items():
        for i, s in enumerate(occ):
            final.append(replace(s, eps=float(E[:, i] @ HE[:, i])))
    final.sort(key=lambda s: (s.l, s.n))
    energy = _energy(ws, final)
    resid = _el_residual(ws, blocks)
    rho = RadialFunction(grid, _density_values(grid, final))
    homo = max(s.eps for s in final)
    return HFSolution(params, grid, tuple(final), rho, energy, it, converged, resid,
                      homo >= -config.bind_tol, config.mode, tuple(damping_log), tuple(history))


def _interp_potential(sol: HFSolution, grid: RadialGrid) -> np.ndarray:
    """Local mean-field guess ``-Z/r + V_H`` from a previous solution, extended by its monopole tail."""
    Z = sol.params.Z
    old = sol.grid
    pair = sum(s.occ * s.u.values**2 for s in sol.shells)
    VH = slater_yk(old, pair, 0)
    N = sol.params.N
    v = np.interp(grid.r, old.r, VH)
    beyond = grid.r > old.r_max
    v[beyond] = N / grid.r[beyond]
    return -Z / grid.r + v


def hf_screened_potential(sol: HFSolution, R: float, x):
    """HF-screened nuclear potential ``Z/|x| - int_{|y|<R} rho^HF / |x - y|``."""
    return screened_potential(sol.rho, sol.params.Z, R, x)


def hf_radius(sol, nu: float) -> float:
    """Radius enclosing all but ``nu`` electrons of the HF density."""
    N = sol.params.N
    if not 0 < nu < N:
        raise ParameterError(f"nu must lie in (0, N={N}), got {nu}")
    from .thomasfermi import tf_radius

    return tf_radius(sol, nu)
