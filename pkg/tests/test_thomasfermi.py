import json
import math

import numpy as np
import pytest

from atomscope.errors import ParameterError
from atomscope.radial import RadialFunction, cut_weights, make_grid
from atomscope.thomasfermi import (SOMMERFELD_ZETA, SommerfeldEnvelope, rho_53_bound_check, solve_otf,
                                   solve_tf_atom, solve_tf_dimensionless, sommerfeld_bounds, tf_constants,
                                   tf_energy_constant, tf_functional_on_grid, tf_radius)

# independent shooting oracle: fixed-step RK4 in t = sqrt(x), Richardson over step halving
B_ORACLE = 1.5880710226
E0_Q2 = 0.76874512


def rk4_shoot(slope, h, t_end=5.0):
    """Return +1 if y crosses zero, -1 if y' turns positive, 0 otherwise."""
    def f(t, s):
        y, p = s
        # y'' = x^(-1/2) y^(3/2) in t: dy/dt = 2 t p, dp/dt = 2 y^(3/2)
        return np.array([2.0 * t * p, 2.0 * max(y, 0.0) ** 1.5])

    s = np.array([1.0, -slope])
    t = 0.0
    while t < t_end:
        k1 = f(t, s)
        k2 = f(t + h / 2, s + h / 2 * k1)
        k3 = f(t + h / 2, s + h / 2 * k2)
        k4 = f(t + h, s + h * k3)
        s = s + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
        if s[0] < 0:
            return 1
        if s[1] > 0:
            return -1
    return 0


def rk4_slope(h):
    lo, hi = 1.5, 1.7
    for _ in range(30):
        mid = 0.5 * (lo + hi)
        if rk4_shoot(mid, h) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def test_rk4_oracle_agrees_with_frozen_value():
    b1, b2 = rk4_slope(0.02), rk4_slope(0.01)
    richardson = b2 + (b2 - b1) / 15.0
    assert richardson == pytest.approx(B_ORACLE, abs=2e-5)


def test_slope_B():
    prof = solve_tf_dimensionless()
    assert prof.slope == pytest.approx(B_ORACLE, abs=1e-8)
    assert float(prof.y(0.0)[0]) == 1.0


def test_profile_decreasing_convex():
    prof = solve_tf_dimensionless()
    x = np.geomspace(1e-3, 1e4, 400)
    y, dy = prof.y(x), prof.dy(x)
    assert np.all(np.diff(y) < 0) and np.all(dy < 0)


def test_tail_approaches_144_with_sommerfeld_correction():
    prof = solve_tf_dimensionless()
    x = np.array([1e3, 1e4, 1e5])
    dev = 1.0 - prof.y(x) * x**3 / 144.0
    assert np.all(dev > 0)
    assert dev[2] < 0.01
    # 1 - v/144 decays like x^(-zeta)
    rate = np.log(dev[1] / dev[2]) / math.log(10.0)
    assert rate == pytest.approx(SOMMERFELD_ZETA, rel=0.05)


def test_tolerance_validation():
    with pytest.raises(ParameterError):
        solve_tf_dimensionless(0.0)


def test_e0_and_grid_refinement():
    e0 = tf_energy_constant(2)
    assert e0 == pytest.approx(E0_Q2, rel=1e-6)
    assert round(e0, 4) == 0.7687
    # self-oracle: TF functional on refined grids of the same density
    vals = []
    for n in (4000, 8000):
        sol = solve_tf_atom(1, 1, grid=make_grid(2000.0, n, "log-uniform", r_min=1e-14))
        vals.append(tf_functional_on_grid(sol.rho, 1.0))
    assert abs(vals[1] - vals[0]) < 1e-5 * abs(vals[1])
    assert -vals[1] == pytest.approx(e0, rel=1e-4)


def test_neutral_scaling():
    e1 = solve_tf_atom(1, 1).energy
    for Z in (10, 100):
        assert solve_tf_atom(Z, Z).energy / Z ** (7 / 3) == pytest.approx(e1, rel=1e-6)


def test_neutral_invariants():
    sol = solve_tf_atom(10, 10)
    assert sol.mu == 0.0
    assert sol.residual <= 1e-6
    assert np.all(sol.rho.values >= 0)
    assert sol.total_charge <= 10 + 1e-6


def test_ion_mu_and_charge():
    sol = solve_tf_atom(10, 5)
    assert sol.mu > 0
    assert sol.total_charge == pytest.approx(5.0, rel=1e-6)
    assert sol.residual <= 1e-6


def test_overcharged_is_neutral():
    sol = solve_tf_atom(4, 6)
    assert sol.mu == 0.0 and sol.total_charge <= 4 + 1e-6


def test_mu_nonincreasing_in_N():
    mus = [solve_tf_atom(8, 8 * f).mu for f in (0.25, 0.5, 0.75, 1.0)]
    assert all(a >= b for a, b in zip(mus, mus[1:]))


def test_pointwise_decay_bounds():
    for q in (1, 2):
        sol = solve_tf_atom(20, 20, q=q)
        y = sol.grid.r
        assert np.all(sol.rho.values <= 3**5 / 2 / q**2 * math.pi * y**-6)
        assert np.all(sol.phi.values <= 3**4 / 2 / q**2 * math.pi**2 * y**-4)


def test_envelope_constants():
    env = SommerfeldEnvelope(2, 1.0)
    assert env.zeta == pytest.approx(0.7720019, abs=1e-7)
    assert env.beta0 == pytest.approx(0.08593, abs=1e-5)
    for q in (1, 2, 4):
        a = SommerfeldEnvelope(q, 1.0).a
        assert math.isfinite(a) and a > 0


@pytest.mark.parametrize("Z", [1, 10, 20, 92])
@pytest.mark.parametrize("q", [1, 2])
def test_sommerfeld_envelopes_hold(Z, q):
    sol = solve_tf_atom(Z, Z, q=q)
    lo, hi = sommerfeld_bounds(sol.grid.r, SommerfeldEnvelope(q, Z))
    phi = sol.phi.values
    assert np.all(lo <= phi * (1 + 1e-12)) and np.all(phi <= hi * (1 + 1e-12))


def test_sommerfeld_rejects_origin():
    with pytest.raises(ParameterError):
        sommerfeld_bounds(0.0, SommerfeldEnvelope(2, 1.0))


@pytest.mark.parametrize("Z", [1, 92])
def test_rho53_bound(Z):
    lhs, rhs, ok = rho_53_bound_check(solve_tf_atom(Z, Z))
    assert ok and rhs / lhs > 1


def test_rho53_scaling():
    a = rho_53_bound_check(solve_tf_atom(1, 1))[0]
    b = rho_53_bound_check(solve_tf_atom(10, 10))[0]
    assert b / 10 ** (7 / 3) == pytest.approx(a, rel=1e-6)


def test_rho53_grid_value_matches_profile():
    # the integrand r^2 rho^(5/3) ~ r^(-1/2) at the origin, so the inner cell costs r_min^(1/2)
    sol = solve_tf_atom(5, 5, grid=make_grid(80.0, 4000, "log-uniform", r_min=1e-14))
    lhs = rho_53_bound_check(sol)[0]
    assert sol.grid.integrate(sol.rho.values ** (5 / 3)) == pytest.approx(lhs, rel=1e-4)


def test_tf_radius_median_and_monotone():
    sol = solve_tf_atom(10, 10)
    R_half = tf_radius(sol, 5.0)
    assert sol.charge_outside(R_half) == pytest.approx(5.0, rel=1e-6)
    Rs = [tf_radius(sol, nu) for nu in (0.5, 1, 2, 5, 9, 9.99)]
    assert all(a > b for a, b in zip(Rs, Rs[1:]))
    assert Rs[-1] < 0.01


def test_tf_radius_out_of_range():
    sol = solve_tf_atom(10, 10)
    with pytest.raises(ParameterError):
        tf_radius(sol, 10.0)
    with pytest.raises(ParameterError):
        tf_radius(sol, 0.0)


def test_tf_radius_large_Z_constant():
    q = 2
    target = 3 ** (4 / 3) * 2 ** (1 / 3) * math.pi ** (2 / 3) * q ** (-2 / 3)
    Z = 1e12
    sol = solve_tf_atom(Z, Z, grid=make_grid(200.0, 3000, "log-uniform", r_min=1e-6 * Z ** (-1 / 3)))
    for nu in (1, 2, 4, 8):
        assert tf_radius(sol, nu) * nu ** (1 / 3) == pytest.approx(target, rel=0.02)


def test_to_files(tmp_path):
    sol = solve_tf_atom(3, 3)
    csv_path, json_path = sol.to_files(tmp_path / "tf")
    assert csv_path.read_text().splitlines()[0] == "r,rho,phi"
    meta = json.loads(json_path.read_text())
    assert set(meta) == {"Z", "N", "q", "mu", "energy", "total_charge", "residual"}


def test_constants_validation():
    with pytest.raises(ParameterError):
        tf_constants(0)


def _otf_inputs(r_cut, Z=10):
    tf = solve_tf_atom(Z, Z)
    grid = make_grid(60.0, 600, "log-uniform", r_min=1e-3)
    # screened potential (Z - charge inside the cut) / x equals the outside charge over x
    N_out = float(tf.charge_outside(np.array([r_cut]))[0])
    return tf, grid, N_out / grid.r, N_out


@pytest.mark.parametrize("r_cut", [0.5, 2.0])
def test_otf_reproduces_tf_outside(r_cut):
    tf, grid, V, N_out = _otf_inputs(r_cut)
    sol = solve_otf(V, r_cut, N_out, grid=grid)
    assert sol.mu == pytest.approx(0.0, abs=1e-10)
    assert sol.residual <= 1e-6
    assert np.all(sol.rho.values[grid.r < r_cut] == 0.0)
    ref = np.where(grid.r >= r_cut, tf.rho_at(grid.r), 0.0)
    l1 = np.sum(grid.volume_weights * np.abs(sol.rho.values - ref)) / np.sum(grid.volume_weights * ref)
    assert l1 < 1e-3


def test_otf_envelope_fit():
    _, grid, V, N_out = _otf_inputs(1.0)
    sol = solve_otf(V, 1.0, N_out, grid=grid)
    a, A = sol.envelope_constants()
    assert math.isfinite(a) and math.isfinite(A)
    A0 = tf_constants(2).sommerfeld
    x = grid.r[(grid.r > 1.0) & (sol.phi.values > 0)]
    phi = sol.phi.values[(grid.r > 1.0) & (sol.phi.values > 0)]
    s = (1.0 / x) ** SOMMERFELD_ZETA
    assert np.all(A0 * x**-4 * (1 + a * s) ** -2 <= phi * (1 + 1e-10))
    assert np.all(phi <= A0 * x**-4 * (1 + A * s) * (1 + 1e-10))


def test_otf_active_constraint():
    _, grid, V, N_out = _otf_inputs(1.0)
    sol = solve_otf(V, 1.0, 0.5 * N_out, grid=grid)
    assert sol.mu > 0
    W = 4 * math.pi * grid.r**2 * cut_weights(grid, 1.0)
    assert np.dot(W, sol.rho.values) == pytest.approx(0.5 * N_out, rel=1e-6)


def test_otf_validation():
    grid = make_grid(10.0, 100, "log-uniform")
    with pytest.raises(ParameterError):
        solve_otf(1 / grid.r, 0.0, 1.0, grid=grid)
    with pytest.raises(ParameterError):
        solve_otf(1 / grid.r, 1.0, -1.0, grid=grid)
    with pytest.raises(ParameterError):
        solve_otf(1 / grid.r, 1.0, 1.0)
    pot = RadialFunction(grid, 1 / grid.r, "potential")
    assert solve_otf(pot, 1.0, 0.0).rho.total() == 0.0
