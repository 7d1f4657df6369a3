import json
import math

import numpy as np
import pytest
from scipy.linalg import eigh_tridiagonal
from sympy.physics.wigner import wigner_3j

from atomscope.errors import ParameterError
from atomscope.hartreefock import (HFConfig, Shell, angular_coefficient, build_channel_kinetic, direct_potential,
                                   exchange_apply, hf_grid, hf_radius, hf_screened_potential, lowest_eigenpairs,
                                   scf_solve, slater_yk)
from atomscope.radial import RadialFunction, make_grid
from atomscope.relkin import daubechies_G
from atomscope.semiclassics import hf_energy_lower_bound

# dense-grid closed-shell oracle below, Richardson over h = 0.01, 0.005
HE_NONREL_REF = -2.8616800


def hydrogenic_1s(grid, Z):
    return RadialFunction.orbital(grid, grid.r * np.exp(-Z * grid.r) * (grid.r < grid.r_max))


@pytest.fixture(scope="module")
def he_nonrel():
    return scf_solve(2, 2, 1e-4, config=HFConfig(mode="nonrelativistic"))


@pytest.fixture(scope="module")
def he_rel():
    return scf_solve(2, 2, 1e-4)


@pytest.fixture(scope="module")
def open_shell_atoms():
    cfg = HFConfig(r_max=20.0, h=0.04)
    return [scf_solve(Z, N, 0.3 / Z, config=cfg) for Z, N in ((3, 3), (6, 6), (7, 6))]


# ---------------------------------------------------------------- channel operator


def test_kinetic_symmetric_psd_and_limits():
    grid = make_grid(10.0, 200)
    op = build_channel_kinetic(grid, 1, 0.5)
    M = op.matrix
    assert np.max(np.abs(M - M.T)) <= 1e-12 * np.max(np.abs(M))
    assert np.min(np.linalg.eigvalsh(M)) >= -1e-10
    nr = build_channel_kinetic(grid, 1, 0.5, "nonrelativistic").matrix
    # alpha^-1 T <= p^2/2 as matrices
    assert np.min(np.linalg.eigvalsh(nr - M)) >= -1e-10
    small = build_channel_kinetic(grid, 1, 1e-6).matrix
    assert np.max(np.abs(small - nr)) <= 1e-6 * np.max(np.abs(nr))


def test_kinetic_requires_uniform_grid():
    with pytest.raises(ParameterError):
        build_channel_kinetic(make_grid(10.0, 100, "log-uniform"), 0, 0.1)
    with pytest.raises(ParameterError):
        build_channel_kinetic(make_grid(10.0, 100), 0, 0.1, mode="dirac")


def test_hydrogen_ground_state():
    grid = make_grid(60.0, 2000)
    op = build_channel_kinetic(grid, 0, 1e-3, "nonrelativistic")
    eps, u = lowest_eigenpairs(op, -1.0 / grid.r, 1)[0]
    assert eps == pytest.approx(-0.5, abs=1e-3)
    assert u.values[0] > 0
    rel = lowest_eigenpairs(build_channel_kinetic(grid, 0, 1e-3), -1.0 / grid.r, 1)[0][0]
    assert rel == pytest.approx(eps, abs=1e-4)


def test_relativistic_below_nonrelativistic():
    Z, kappa = 10.0, 0.5
    grid = make_grid(6.0, 1500)
    nr = lowest_eigenpairs(build_channel_kinetic(grid, 0, kappa / Z, "nonrelativistic"), -Z / grid.r, 1)[0][0]
    rel = lowest_eigenpairs(build_channel_kinetic(grid, 0, kappa / Z), -Z / grid.r, 1)[0][0]
    assert rel <= nr


def test_free_channel_positive_and_p_state():
    grid = make_grid(60.0, 2000)
    op = build_channel_kinetic(grid, 1, 0.01, "nonrelativistic")
    assert all(e > 0 for e, _ in lowest_eigenpairs(op, None, 5))
    Z = 2.0
    grid = make_grid(40.0, 2000)
    eps = lowest_eigenpairs(build_channel_kinetic(grid, 1, 0.01, "nonrelativistic"), -Z / grid.r, 1)[0][0]
    assert eps == pytest.approx(-Z * Z / 8, rel=1e-3)


def test_eigenpairs_validation():
    op = build_channel_kinetic(make_grid(10.0, 100), 0, 0.1)
    with pytest.raises(ParameterError):
        lowest_eigenpairs(op, None, 0)


# ---------------------------------------------------------------- Slater machinery


@pytest.mark.parametrize("l1,k,l2", [(0, 0, 0), (0, 1, 1), (1, 0, 1), (1, 2, 1), (1, 1, 2), (2, 2, 2),
                                     (2, 4, 2), (1, 3, 2), (3, 2, 1), (0, 2, 1), (2, 1, 2)])
def test_angular_coefficient_matches_3j(l1, k, l2):
    ref = float(wigner_3j(l1, k, l2, 0, 0, 0)) ** 2
    assert angular_coefficient(l1, k, l2) == pytest.approx(ref, rel=1e-14, abs=1e-16)


def test_direct_potential_hydrogenic_closed_form():
    Z = 2.0
    grid = make_grid(20.0, 4000)
    u = hydrogenic_1s(grid, Z)
    V = direct_potential([Shell(1, 0, 1.0, -2.0, u)])
    r = grid.r
    exact = (1 - np.exp(-2 * Z * r) * (1 + Z * r)) / r
    assert np.max(np.abs(V.values - exact)) < 1e-6
    assert V.values[-1] * r[-1] == pytest.approx(1.0, abs=1e-8)


def test_direct_potential_linear_in_occupation():
    grid = make_grid(20.0, 1000)
    u = hydrogenic_1s(grid, 1.0)
    one = direct_potential([Shell(1, 0, 2.0, -1.0, u)])
    two = direct_potential([Shell(1, 0, 1.0, -1.0, u), Shell(1, 0, 1.0, -1.0, u)])
    assert np.allclose(one.values, two.values, rtol=1e-14, atol=0)


def test_exchange_single_orbital_self_interaction():
    # one electron with q = 1: the exchange operator equals the direct potential times the orbital
    grid = make_grid(20.0, 1000)
    u = hydrogenic_1s(grid, 1.0)
    sh = [Shell(1, 0, 1.0, -0.5, u)]
    K = exchange_apply(sh, sh[0], q=1)
    J = direct_potential(sh)
    assert np.allclose(K.values[:-1], (J.values * u.values)[:-1], rtol=0, atol=1e-14)


def test_exchange_symmetric():
    grid = make_grid(20.0, 800)
    r = grid.r
    # trial orbitals obey the Dirichlet condition at r_max
    wall = 1 - r / grid.r_max
    a = RadialFunction.orbital(grid, r**2 * np.exp(-r) * wall)
    b = RadialFunction.orbital(grid, r**2 * (1 - r / 3) * np.exp(-0.7 * r) * wall)
    shells = [Shell(1, 0, 2.0, -1.0, hydrogenic_1s(grid, 1.5)),
              Shell(2, 1, 3.0, -0.3, a), Shell(3, 2, 1.0, -0.1, b)]
    for l in (0, 1, 2):
        f = RadialFunction.orbital(grid, r ** (l + 1) * np.exp(-0.9 * r) * wall)
        g = RadialFunction.orbital(grid, r ** (l + 1) * (2 - r) * np.exp(-0.6 * r) * wall)
        lhs = grid.integrate_1d(g.values * exchange_apply(shells, f, target_l=l).values)
        rhs = grid.integrate_1d(f.values * exchange_apply(shells, g, target_l=l).values)
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-14)


def test_exchange_bare_orbital_needs_l():
    grid = make_grid(10.0, 100)
    u = hydrogenic_1s(grid, 1.0)
    with pytest.raises(ParameterError):
        exchange_apply([Shell(1, 0, 1.0, -0.5, u)], u)


def test_slater_yk_multipole_tail():
    Z = 3.0
    grid = make_grid(30.0, 3000)
    u = hydrogenic_1s(grid, Z)
    # outside the charge Y^k(r) = <r^k> / r^(k+1); 1s moments 1, 3/(2Z), 3/Z^2
    moments = {0: 1.0, 1: 1.5 / Z, 2: 3.0 / Z**2}
    far = grid.r > 15
    for k, m in moments.items():
        y = slater_yk(grid, u.values**2, k)
        assert np.allclose(y[far], m / grid.r[far] ** (k + 1), rtol=1e-6)


def test_he_exchange_against_double_integral(he_nonrel):
    sol = he_nonrel
    grid = sol.grid
    u2 = sol.shells[0].u.values ** 2
    r = grid.r
    # brute-force 2D trapezoid of int int u^2(r) u^2(s) / max(r, s)
    w = grid.w * u2
    F0 = float(np.einsum("i,j,ij->", w, w, 1.0 / np.maximum(r[:, None], r[None, :])))
    assert sol.energy["exchange"] == pytest.approx(F0, rel=1e-4)
    assert sol.energy["direct"] == pytest.approx(2.0 * sol.energy["exchange"], rel=1e-12)


# ---------------------------------------------------------------- SCF


def test_one_electron_identity():
    Z, alpha = 3.0, 0.1
    cfg = HFConfig(r_max=15.0)
    sol = scf_solve(Z, 1, alpha, config=cfg)
    grid = hf_grid(Z, cfg)
    eps = lowest_eigenpairs(build_channel_kinetic(grid, 0, alpha), -Z / grid.r, 1)[0][0]
    assert sol.converged
    assert sol.energy["total"] == pytest.approx(eps, rel=1e-10)
    assert sol.energy["exchange"] == pytest.approx(sol.energy["direct"], rel=1e-12)


def helium_oracle(h, r_max=20.0):
    """Independent 1s^2 restricted HF: three-point Laplacian, cumulative-sum Hartree potential."""
    n = int(round(r_max / h)) - 1
    r = h * np.arange(1, n + 1)
    V = -2.0 / r
    for _ in range(200):
        e, v = eigh_tridiagonal(1.0 / h**2 + V, -0.5 / h**2 * np.ones(n - 1), select="i", select_range=(0, 0))
        d = v[:, 0] ** 2 / h
        J = np.cumsum(d) * h / r + np.cumsum((d / r)[::-1])[::-1] * h - d / r * h
        Vn = -2.0 / r + J
        if np.max(abs(Vn - V)) < 1e-12:
            break
        V = 0.5 * (V + Vn)
    return 2 * e[0] - h * np.sum(d * J)


def test_helium_oracle_frozen():
    a, b = helium_oracle(0.01), helium_oracle(0.005)
    assert b + (b - a) / 3 == pytest.approx(HE_NONREL_REF, abs=1e-6)


def test_helium_nonrelativistic_reference(he_nonrel):
    assert he_nonrel.converged
    assert he_nonrel.energy["total"] == pytest.approx(HE_NONREL_REF, abs=2e-3)


def test_helium_relativistic_small_alpha(he_rel, he_nonrel):
    assert he_rel.converged
    assert abs(he_rel.energy["total"] - he_nonrel.energy["total"]) < 1e-3


def _check_invariants(sol):
    assert sum(s.occ for s in sol.shells) == pytest.approx(sol.params.N, abs=1e-12)
    e = sol.energy
    assert e["total"] == pytest.approx(e["kinetic"] - e["nuclear"] + e["direct"] - e["exchange"], rel=1e-12)
    assert e["direct"] >= e["exchange"] >= 0
    assert sol.el_residual < 1e-6
    assert sol.orthonormality_error() < 1e-8
    alpha = sol.params.alpha
    for s in sol.shells:
        assert -alpha**-2 < s.eps < 0
    # Daubechies: alpha^-1 Tr[T gamma] >= alpha^-1 int G_alpha(rho), which implies the unscaled form
    G = sol.grid.integrate(daubechies_G(sol.rho.values, alpha, sol.params.q))
    assert e["kinetic"] >= G / alpha >= G
    assert e["exchange"] <= 1.68 * sol.grid.integrate(sol.rho.values ** (4 / 3))
    kappa = sol.params.Z * alpha
    assert e["total"] >= hf_energy_lower_bound(sol.params.Z, sol.params.N, kappa, q=sol.params.q)


def test_invariants_closed_shell(he_rel):
    _check_invariants(he_rel)


def test_invariants_open_shells(open_shell_atoms):
    for sol in open_shell_atoms:
        assert sol.converged
        _check_invariants(sol)


def test_open_shell_equal_fractional_filling(open_shell_atoms):
    carbon = open_shell_atoms[1]
    p = [s for s in carbon.shells if s.l == 1]
    assert len(p) == 1 and p[0].occ == pytest.approx(2.0)


def test_energy_monotone_after_warmup(open_shell_atoms):
    for sol in open_shell_atoms:
        hist = np.array(sol.history)
        tol = HFConfig().energy_tol
        rises = np.flatnonzero(np.diff(hist[10:]) > tol * np.maximum(1.0, np.abs(hist[10:-1])))
        # every rise after the warm-up is answered by a halving of the damping
        assert len(sol.damping_log) >= len(rises) > -1


@pytest.mark.parametrize("Z", [1, 2])
def test_no_binding_beyond_lieb_ceiling(Z):
    sol = scf_solve(Z, 2 * Z + 2, 0.1 / Z, config=HFConfig(r_max=20.0, h=0.04))
    assert sol.unbound


def test_hydrogen_binds():
    sol = scf_solve(1, 1, 1e-3, config=HFConfig(r_max=20.0))
    assert not sol.unbound and sol.homo.eps == pytest.approx(-0.5, abs=1e-3)


def test_scf_validation():
    with pytest.raises(ParameterError):
        scf_solve(10, 10, 0.07)
    with pytest.raises(ParameterError):
        scf_solve(2, 0.5, 0.01)
    with pytest.raises(ParameterError):
        scf_solve(2, 2, 0.01, config=HFConfig(damping=0.0))


def test_iteration_cap_flags_nonconvergence():
    sol = scf_solve(4, 4, 0.025, config=HFConfig(r_max=15.0, h=0.05, max_iter=2))
    assert not sol.converged and sol.iterations == 2


def test_warm_start_reaches_same_state(he_rel):
    cfg = HFConfig(r_max=30.0, h=0.04)
    cold = scf_solve(2, 2, 1e-4, config=cfg)
    warm = scf_solve(2, 2, 1e-4, config=cfg, initial=he_rel)
    assert warm.converged and cold.converged
    assert warm.energy["total"] == pytest.approx(cold.energy["total"], abs=1e-8)


def test_screened_potential_and_radius(he_rel):
    sol = he_rel
    assert hf_screened_potential(sol, 1e-9, 0.7) == pytest.approx(2 / 0.7, rel=1e-8)
    # fully screened: the neutral atom leaves almost nothing beyond r_max
    x = sol.grid.r_max
    assert abs(hf_screened_potential(sol, x, 2 * x)) * 2 * x < 1e-8
    Rs = [hf_radius(sol, nu) for nu in (0.1, 0.5, 1.0, 1.5)]
    assert all(a > b for a, b in zip(Rs, Rs[1:]))
    with pytest.raises(ParameterError):
        hf_radius(sol, 2.0)


def test_to_files(tmp_path, he_rel):
    paths = he_rel.to_files(tmp_path / "he")
    names = sorted(p.name for p in paths)
    assert names == ["he.json", "he_rho.csv", "he_u_1s.csv"]
    meta = json.loads((tmp_path / "he.json").read_text())
    assert meta["converged"] and set(meta["energy"]) == {"kinetic", "nuclear", "direct", "exchange", "total"}
    assert meta["shells"][0]["occ"] == 2.0
