"""Experiment orchestration and the ``atomscope`` command line."""

from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import hashlib
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import click
import numpy as np
import yaml
from scipy.optimize import linprog

from . import __version__
from .errors import ParameterError, SolverError
from .hartreefock import HFConfig, hf_radius, hf_screened_potential, scf_solve
from .params import KAPPA_CRITICAL
from .radial import make_grid, mean_field
from .thomasfermi import SommerfeldEnvelope, solve_otf, solve_tf_atom, tf_radius

__all__ = [
    "ExperimentConfig",
    "ReportRow",
    "ScanReport",
    "run_ionization_scan",
    "run_radius_scan",
    "run_potential_comparison",
    "run_ionization_energy",
    "run_checks",
    "emit_report",
    "load_report",
    "fit_screening_envelope",
    "main",
]

log = logging.getLogger(__name__)

KINDS = ("ionization", "radius", "potential", "ionization-energy", "check")
N_POLICIES = ("neutral", "scan", "explicit")
CSV_COLUMNS = ("Z", "N", "alpha", "observable", "value", "bound", "pass", "runtime_s")
REPORT_ONLY = "report-only"
RADIUS_CONSTANT_EXPONENTS = {"2^(1/3)": 1.0 / 3.0, "2^(1/2)": 0.5}


def radius_constant(q: int = 2, two_power: float = 1.0 / 3.0) -> float:
    """``3^(4/3) 2^p pi^(2/3) q^(-2/3)``; ``p = 1/3`` follows from the Sommerfeld tail."""
    return 3.0 ** (4.0 / 3.0) * 2.0**two_power * math.pi ** (2.0 / 3.0) * q ** (-2.0 / 3.0)


# ---------------------------------------------------------------- configuration


@dataclass(frozen=True)
class ExperimentConfig:
    """Inputs of one experiment; ``alpha`` is derived per atom as ``kappa / Z``."""

    kind: str = "ionization"
    Z: tuple = (2,)
    N_policy: str = "neutral"
    N: tuple = ()
    q: int = 2
    kappa: float = 0.1
    grid_n: int | None = None
    r_max: float = 20.0
    scheme: str = "uniform"
    mode: str = "relativistic"
    bind_tol: float = 1e-6
    eps_tol: float = 1e-8
    rho_tol: float = 1e-8
    validate_rmax: bool = True
    nu: tuple = (1.0, 2.0, 4.0, 8.0)
    hf_Z: tuple = ()
    x_range: tuple = (0.01, 10.0)
    x_points: int = 60
    eps_lattice: tuple = tuple(round(0.05 + 0.1 * k, 2) for k in range(40))
    tf_grid_n: int = 3000
    tf_r_max: float = 200.0
    out_dir: str = "atomscope-out"
    formats: tuple = ("csv", "json")
    seed: int = 0

    def __post_init__(self):
        for name in ("Z", "N", "nu", "hf_Z", "x_range", "formats", "eps_lattice"):
            val = getattr(self, name)
            if not isinstance(val, tuple):
                object.__setattr__(self, name, tuple(val) if isinstance(val, (list, tuple)) else (val,))
        if self.kind not in KINDS:
            raise ParameterError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.N_policy not in N_POLICIES:
            raise ParameterError(f"N_policy must be one of {N_POLICIES}, got {self.N_policy!r}")
        if not self.Z:
            raise ParameterError("the Z list must be nonempty")
        if self.N_policy == "explicit" and not self.N:
            raise ParameterError("the explicit N policy needs a nonempty N list")
        if not 0 <= self.kappa < KAPPA_CRITICAL:
            raise ParameterError(f"kappa must lie in [0, 2/pi), got {self.kappa}")
        if not self.r_max > 0:
            raise ParameterError(f"r_max must be positive, got {self.r_max}")
        if self.grid_n is not None and self.grid_n < 10:
            raise ParameterError(f"grid_n must be at least 10, got {self.grid_n}")
        if any(z <= 0 for z in self.Z):
            raise ParameterError("all Z must be positive")
        if not self.nu or any(v <= 0 for v in self.nu):
            raise ParameterError("nu values must be positive and nonempty")

    def alpha(self, Z: float) -> float:
        return self.kappa / Z if self.kappa > 0 else 1e-8

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}

    @property
    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON of every field that affects results."""
        d = self.to_dict()
        for k in ("out_dir", "formats"):
            d.pop(k, None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"), default=float)
        return hashlib.sha256(blob.encode()).hexdigest()

    @classmethod
    def from_mapping(cls, data: dict, base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ParameterError(f"unknown configuration keys: {sorted(unknown)}")
        cur = dataclasses.asdict(base) if base is not None else {}
        cur.update(data)
        return cls(**cur)

    @classmethod
    def from_file(cls, path, base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except OSError as exc:
            raise OSError(f"cannot read config file {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ParameterError(f"config file {path} must hold a key-value mapping")
        return cls.from_mapping(data, base)

    def hf_config(self, Z: float, r_max: float | None = None) -> HFConfig:
        if self.scheme != "uniform":
            raise ParameterError("the HF solver requires a uniform grid")
        r_max = self.r_max if r_max is None else r_max
        h = None if self.grid_n is None else self.r_max / self.grid_n
        return HFConfig(mode=self.mode, r_max=r_max, h=h, bind_tol=self.bind_tol,
                        eps_tol=self.eps_tol, rho_tol=self.rho_tol)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("ATOMSCOPE_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------- reports


@dataclass
class ReportRow:
    """One scan observation. ``passed`` is None for report-only rows.

    Asserted rows pass iff ``value <= bound``.
    """

    Z: float
    N: float
    alpha: float
    observable: str
    value: float
    bound: float = math.nan
    passed: bool | None = None
    runtime_s: float = 0.0

    @classmethod
    def check(cls, Z, N, alpha, observable, value, bound, runtime_s=0.0) -> "ReportRow":
        ok = bool(np.isfinite(value) and value <= bound)
        return cls(Z, N, alpha, observable, float(value), float(bound), ok, runtime_s)

    @classmethod
    def info(cls, Z, N, alpha, observable, value, bound=math.nan, runtime_s=0.0) -> "ReportRow":
        return cls(Z, N, alpha, observable, float(value), float(bound), None, runtime_s)

    def recompute(self) -> bool | None:
        if self.passed is None:
            return None
        return bool(np.isfinite(self.value) and self.value <= self.bound)

    def csv_fields(self) -> list:
        flag = REPORT_ONLY if self.passed is None else ("true" if self.passed else "false")
        return [_num(self.Z), _num(self.N), _num(self.alpha), self.observable, _num(self.value),
                _num(self.bound), flag, f"{self.runtime_s:.3f}"]

    def to_json(self) -> dict:
        return {"Z": self.Z, "N": self.N, "alpha": self.alpha, "observable": self.observable,
                "value": _jnum(self.value), "bound": _jnum(self.bound),
                "pass": REPORT_ONLY if self.passed is None else self.passed, "runtime_s": self.runtime_s}

    @classmethod
    def from_json(cls, d: dict) -> "ReportRow":
        flag = d["pass"]
        return cls(d["Z"], d["N"], d["alpha"], d["observable"], _unjnum(d["value"]), _unjnum(d["bound"]),
                   None if flag == REPORT_ONLY else bool(flag), d["runtime_s"])


def _num(x) -> str:
    return repr(float(x)) if x is not None else "nan"


def _jnum(x):
    x = float(x)
    return x if math.isfinite(x) else str(x)


def _unjnum(x):
    return float(x)


@dataclass
class ScanReport:
    kind: str
    config: ExperimentConfig
    rows: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    plot_columns: tuple = ()
    plot_rows: list = field(default_factory=list)
    runtime_s: float = 0.0
    solutions: list = field(default_factory=list, repr=False)

    @property
    def metadata(self) -> dict:
        return {"version": __version__, "config_hash": self.config.config_hash,
                "date": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")}

    @property
    def asserted(self) -> list:
        return [r for r in self.rows if r.passed is not None]

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.asserted)

    def rows_named(self, prefix: str) -> list:
        return [r for r in self.rows if r.observable.startswith(prefix)]


def emit_report(report: ScanReport, formats=("csv", "json"), out_dir=None) -> list[Path]:
    """Write ``<kind>.csv`` / ``<kind>.json`` and, for comparison experiments, ``observable_vs_x.csv``."""
    out = Path(out_dir if out_dir is not None else report.config.out_dir)
    stem = report.kind.replace("-", "_")
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        if "csv" in formats:
            p = out / f"{stem}.csv"
            with p.open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(CSV_COLUMNS)
                for r in report.rows:
                    w.writerow(r.csv_fields())
            written.append(p)
        if "json" in formats:
            p = out / f"{stem}.json"
            doc = {"kind": report.kind, "metadata": report.metadata, "config": report.config.to_dict(),
                   "fits": report.fits, "notes": report.notes, "runtime_s": report.runtime_s,
                   "rows": [r.to_json() for r in report.rows]}
            p.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jnum))
            written.append(p)
        if report.plot_columns:
            p = out / "observable_vs_x.csv"
            with p.open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(report.plot_columns)
                for row in report.plot_rows:
                    w.writerow([_num(v) for v in row])
            written.append(p)
    except OSError as exc:
        raise OSError(f"cannot write report to {out}: {exc}") from exc
    return written


def load_report(path) -> ScanReport:
    """Reload a JSON report written by :func:`emit_report`."""
    doc = json.loads(Path(path).read_text())
    cfg = ExperimentConfig.from_mapping(doc["config"])
    rep = ScanReport(doc["kind"], cfg, [ReportRow.from_json(d) for d in doc["rows"]], doc.get("fits", {}),
                     doc.get("notes", []))
    rep.runtime_s = doc.get("runtime_s", 0.0)
    return rep


# ---------------------------------------------------------------- scans


def _solve(Z, N, cfg: ExperimentConfig, r_max=None, initial=None):
    return scf_solve(Z, N, cfg.alpha(Z), q=cfg.q, config=cfg.hf_config(Z, r_max), initial=initial)


def _map(fn, items):
    items = list(items)
    n = min(_threads(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _ionization_point(cfg: ExperimentConfig, Z: int):
    rows, sols = [], []
    alpha = cfg.alpha(Z)
    N, N_max, prev, unstable = Z, None, None, 0
    ceiling = int(2 * Z + 2)
    while N <= ceiling:
        t0 = time.perf_counter()
        try:
            sol = _solve(Z, N, cfg, initial=prev)
            sols.append(sol)
            bound = not sol.unbound
            if cfg.validate_rmax:
                big = _solve(Z, N, cfg, r_max=2.0 * cfg.r_max, initial=sol)
                sols.append(big)
                if (not big.unbound) != bound:
                    unstable += 1
                rows.append(ReportRow.info(Z, N, alpha, "homo_eps_2rmax", big.homo.eps, -cfg.bind_tol))
                bound = bound and not big.unbound
        except (SolverError, ParameterError) as exc:
            rows.append(ReportRow(Z, N, alpha, f"solver_failure:{type(exc).__name__}", math.nan, math.nan, False,
                                  time.perf_counter() - t0))
            break
        dt = time.perf_counter() - t0
        rows.append(ReportRow.info(Z, N, alpha, "homo_eps", sol.homo.eps, -cfg.bind_tol, dt))
        rows.append(ReportRow.info(Z, N, alpha, "bound", float(bound), runtime_s=dt))
        if not sol.converged:
            rows.append(ReportRow.info(Z, N, alpha, "scf_not_converged", sol.iterations))
        if not bound:
            break
        N_max, prev = N, sol
        N += 1
    if N_max is None:
        N_max = Z - 1
    rows.append(ReportRow.check(Z, N_max, alpha, "excess_charge_Q", N_max - Z, 2.0))
    rows.append(ReportRow.check(Z, N_max, alpha, "N_max", N_max, 2 * Z + 1))
    rows.append(ReportRow.check(Z, N_max, alpha, "rmax_doubling_flips", unstable, 0.0))
    return rows, sols


def run_ionization_scan(cfg: ExperimentConfig) -> ScanReport:
    """Raise ``N`` from ``Z`` until the highest shell unbinds; ``Q = N_max - Z``."""
    t0 = time.perf_counter()
    rep = ScanReport("ionization", cfg)
    results = _map(lambda Z: _ionization_point(cfg, int(Z)), cfg.Z)
    Qs = []
    for rows, sols in results:
        rep.rows.extend(rows)
        rep.solutions.extend(sols)
        Qs.extend(r.value for r in rows if r.observable == "excess_charge_Q")
    if len(Qs) > 1:
        rises = sum(1 for a, b in zip(Qs, Qs[1:]) if b > a)
        rep.rows.append(ReportRow.info(math.nan, math.nan, math.nan, "Q_increases_over_Z", rises))
    rep.fits["Q"] = max(Qs) if Qs else math.nan
    rep.runtime_s = time.perf_counter() - t0
    return rep


def _tf_radius_grid(Z: float, cfg: ExperimentConfig):
    r_min = 1e-6 * Z ** (-1.0 / 3.0)
    return make_grid(cfg.tf_r_max, cfg.tf_grid_n, "log-uniform", r_min=r_min)


def run_radius_scan(cfg: ExperimentConfig) -> ScanReport:
    """Tabulate ``R(nu) nu^(1/3)`` for TF atoms over ``cfg.Z`` and HF atoms over ``cfg.hf_Z``."""
    t0 = time.perf_counter()
    rep = ScanReport("radius", cfg)
    q = cfg.q
    target = radius_constant(q)
    rep.plot_columns = ("model", "Z", "nu", "R", "R_nu13")
    largest = max(cfg.Z)
    tf_by_Z = {}
    for Z in cfg.Z:
        t1 = time.perf_counter()
        sol = solve_tf_atom(Z, Z, q=q, grid=_tf_radius_grid(Z, cfg))
        vals = []
        for nu in cfg.nu:
            if nu >= Z:
                rep.rows.append(ReportRow(Z, Z, 0.0, f"tf_radius_invalid_nu={nu:g}", math.nan, math.nan, None))
                continue
            R = tf_radius(sol, nu)
            c = R * nu ** (1.0 / 3.0)
            vals.append(c)
            rep.plot_rows.append(("TF", Z, nu, R, c))
            rep.rows.append(ReportRow.info(Z, Z, 0.0, f"tf_R_nu13_nu={nu:g}", c, target))
            if Z == largest:
                rep.rows.append(ReportRow.check(Z, Z, 0.0, f"tf_const_reldev_nu={nu:g}", abs(c / target - 1.0), 0.02,
                                                time.perf_counter() - t1))
        tf_by_Z[Z] = sol
        if Z == largest and vals:
            fit = float(np.mean(vals))
            rep.fits["tf_constant"] = fit
            rep.rows.append(ReportRow.check(Z, Z, 0.0, "tf_const_fit_reldev", abs(fit / target - 1.0), 0.02))
            devs = {name: fit / radius_constant(q, p) - 1.0 for name, p in RADIUS_CONSTANT_EXPONENTS.items()}
            for name, d in devs.items():
                rep.rows.append(ReportRow.info(Z, Z, 0.0, f"fit_vs_constant_{name}", d))
            best = min(devs, key=lambda k: abs(devs[k]))
            rep.fits["radius_constant_match"] = best
            rep.notes.append(
                f"radius constant: fitted {fit:.6f}; 3^(4/3) 2^(1/3) pi^(2/3) q^(-2/3) = {radius_constant(q):.6f} "
                f"(rel. dev. {devs['2^(1/3)']:+.2e}); with 2^(1/2) = {radius_constant(q, 0.5):.6f} "
                f"(rel. dev. {devs['2^(1/2)']:+.2e}); fit matches {best}")
    for Z in cfg.hf_Z:
        t1 = time.perf_counter()
        try:
            hf = _solve(Z, Z, cfg)
        except (SolverError, ParameterError) as exc:
            rep.rows.append(ReportRow(Z, Z, cfg.alpha(Z), f"solver_failure:{type(exc).__name__}", math.nan, math.nan,
                                      False))
            continue
        rep.solutions.append(hf)
        tf = solve_tf_atom(Z, Z, q=q, grid=_tf_radius_grid(Z, cfg))
        c_hf, c_tf = [], []
        for nu in cfg.nu:
            if nu >= Z:
                rep.rows.append(ReportRow(Z, Z, cfg.alpha(Z), f"hf_radius_invalid_nu={nu:g}", math.nan, math.nan, None))
                continue
            Rh, Rt = hf_radius(hf, nu), tf_radius(tf, nu)
            c_hf.append(Rh * nu ** (1.0 / 3.0))
            c_tf.append(Rt * nu ** (1.0 / 3.0))
            rep.plot_rows.append(("HF", Z, nu, Rh, c_hf[-1]))
            rep.rows.append(ReportRow.info(Z, Z, cfg.alpha(Z), f"hf_R_nu13_nu={nu:g}", c_hf[-1]))
            rep.rows.append(ReportRow.info(Z, Z, cfg.alpha(Z), f"hf_vs_tf_reldev_nu={nu:g}", abs(Rh / Rt - 1.0), 0.1))
        if c_hf:
            # fitted constants compared at the same Z; asserted only at the largest HF atom
            dev = abs(np.mean(c_hf) / np.mean(c_tf) - 1.0)
            row = ReportRow.check if Z == max(cfg.hf_Z) else ReportRow.info
            rep.rows.append(row(Z, Z, cfg.alpha(Z), "hf_const_vs_tf_reldev", dev, 0.1, time.perf_counter() - t1))
            rep.fits[f"hf_constant_Z{Z:g}"] = float(np.mean(c_hf))
    rep.runtime_s = time.perf_counter() - t0
    return rep


def fit_screening_envelope(x, s, eps_lattice) -> dict:
    """Fit ``s(x) <= C_Phi x^(-4+eps) + C_M`` for each ``eps`` by a minimax linear program.

    For fixed ``eps`` the program minimizes ``t`` subject to
    ``0 <= C_Phi x^(-4+eps) + C_M - s(x) <= t`` and ``C_Phi, C_M >= 0``. Returns the
    per-``eps`` fits and the index of the smallest ``t``.
    """
    x = np.asarray(x, dtype=float)
    s = np.asarray(s, dtype=float)
    fits = []
    for eps in eps_lattice:
        a = x ** (-4.0 + eps)
        # variables (C_Phi, C_M, t)
        A_ub = np.vstack([np.column_stack([-a, -np.ones_like(a), np.zeros_like(a)]),
                          np.column_stack([a, np.ones_like(a), -np.ones_like(a)])])
        b_ub = np.concatenate([-s, s])
        res = linprog(c=[0.0, 0.0, 1.0], A_ub=A_ub, b_ub=b_ub, bounds=[(0, None)] * 3, method="highs")
        if not res.success:
            raise SolverError(f"envelope fit failed at eps={eps}: {res.message}")
        fits.append({"eps": float(eps), "C_Phi": float(res.x[0]), "C_M": float(res.x[1]), "t": float(res.x[2])})
    return {"fits": fits}


def _potential_point(cfg: ExperimentConfig, Z: float):
    t0 = time.perf_counter()
    hf = _solve(Z, Z, cfg)
    tf = solve_tf_atom(Z, Z, q=cfg.q)
    x = np.geomspace(cfg.x_range[0], min(cfg.x_range[1], 0.9 * hf.grid.r_max), cfg.x_points)
    s_hf = np.array([hf_screened_potential(hf, xi, xi) for xi in x])
    s_tf = tf.charge_outside(x) / x
    s = np.abs(s_hf - s_tf)
    d = np.abs(mean_field(hf.rho, Z, x) - tf.phi_at(x))
    return hf, x, s, d, time.perf_counter() - t0


def run_potential_comparison(cfg: ExperimentConfig) -> ScanReport:
    """Screened-potential and mean-field differences between HF and TF atoms.

    The universal exponent is shared across ``Z``: for every ``eps`` on the lattice the
    envelope is fitted per atom, and the ``eps`` with the smallest summed normalized
    minimax residual is kept.
    """
    t0 = time.perf_counter()
    rep = ScanReport("potential", cfg)
    points = _map(lambda Z: (Z, _potential_point(cfg, Z)), cfg.Z)
    fits_s, fits_d = {}, {}
    for Z, (hf, x, s, d, dt) in points:
        rep.solutions.append(hf)
        fits_s[Z] = fit_screening_envelope(x, s, cfg.eps_lattice)["fits"]
        fits_d[Z] = fit_screening_envelope(x, d, cfg.eps_lattice)["fits"]

    def pick(fits, data):
        score = [sum(fits[Z][k]["t"] / max(np.max(data[Z]), 1e-300) for Z in fits) for k in range(len(cfg.eps_lattice))]
        return int(np.argmin(score))

    s_data = {Z: p[2] for Z, p in points}
    d_data = {Z: p[3] for Z, p in points}
    ks, kd = pick(fits_s, s_data), pick(fits_d, d_data)
    rep.fits["eps_screened"] = cfg.eps_lattice[ks]
    rep.fits["eps_mean_field"] = cfg.eps_lattice[kd]
    rep.plot_columns = ("Z", "x", "s", "d", "s_envelope", "d_envelope")
    C_Phi, C_M = [], []
    for Z, (hf, x, s, d, dt) in points:
        fs, fd = fits_s[Z][ks], fits_d[Z][kd]
        alpha = cfg.alpha(Z)
        C_Phi.append(fs["C_Phi"])
        C_M.append(fs["C_M"])
        rep.rows.append(ReportRow.info(Z, Z, alpha, "C_Phi", fs["C_Phi"], runtime_s=dt))
        rep.rows.append(ReportRow.info(Z, Z, alpha, "C_M", fs["C_M"]))
        rep.rows.append(ReportRow.info(Z, Z, alpha, "minimax_residual_screened", fs["t"]))
        rep.rows.append(ReportRow.info(Z, Z, alpha, "A_phi_mean_field", fd["C_Phi"]))
        rep.rows.append(ReportRow.info(Z, Z, alpha, "A1_mean_field", fd["C_M"]))
        env_s = fs["C_Phi"] * x ** (-4.0 + fs["eps"]) + fs["C_M"]
        env_d = fd["C_Phi"] * x ** (-4.0 + fd["eps"]) + fd["C_M"]
        rep.rows.append(ReportRow.check(Z, Z, alpha, "screened_envelope_violation", float(np.max(s - env_s)),
                                        1e-9 * max(1.0, float(np.max(s)))))
        beta0 = SommerfeldEnvelope(cfg.q, Z).beta0
        win = x <= beta0 * Z ** (-1.0 / 3.0)
        if np.any(win):
            rep.rows.append(ReportRow.info(Z, Z, alpha, "small_x_window_max_s_x4meps",
                                           float(np.max(s[win] * x[win] ** (4.0 - fs["eps"])))))
        for xi, si, di, es, ed in zip(x, s, d, env_s, env_d):
            rep.plot_rows.append((Z, xi, si, di, es, ed))
    for name, vals in (("C_M", C_M), ("C_Phi", C_Phi)):
        vals = np.array(vals)
        ratio = float(np.max(vals) / np.min(vals)) if np.min(vals) > 0 else math.inf
        rep.fits[f"{name}_ratio"] = ratio
        rep.rows.append(ReportRow.check(math.nan, math.nan, math.nan, f"{name}_ratio_max_min", ratio, 2.0))
    rep.fits["C_Phi"] = {str(Z): c for Z, c in zip(cfg.Z, C_Phi)}
    rep.fits["C_M"] = {str(Z): c for Z, c in zip(cfg.Z, C_M)}
    rep.runtime_s = time.perf_counter() - t0
    return rep


def _ionization_energy_point(cfg: ExperimentConfig, Z: int):
    t0 = time.perf_counter()
    neutral = _solve(Z, Z, cfg)
    sols = [neutral]
    if Z == 1:
        e_ion = 0.0
    else:
        ion = _solve(Z, Z - 1, cfg)
        sols.append(ion)
        e_ion = ion.energy["total"]
    return Z, e_ion - neutral.energy["total"], sols, time.perf_counter() - t0


def run_ionization_energy(cfg: ExperimentConfig) -> ScanReport:
    """``E(Z, Z-1) - E(Z, Z)`` per ``Z``; nonnegativity and a max/min ratio test."""
    t0 = time.perf_counter()
    rep = ScanReport("ionization-energy", cfg)
    vals = []
    for Z, I, sols, dt in _map(lambda Z: _ionization_energy_point(cfg, int(Z)), cfg.Z):
        rep.solutions.extend(sols)
        vals.append(I)
        rep.rows.append(ReportRow.info(Z, Z, cfg.alpha(Z), "ionization_energy", I, runtime_s=dt))
        rep.rows.append(ReportRow.check(Z, Z, cfg.alpha(Z), "minus_ionization_energy", -I, 1e-8))
    vals = np.array(vals)
    if vals.size > 1:
        ratio = float(np.max(vals) / np.min(vals)) if np.min(vals) > 0 else math.inf
        rep.fits["ratio_max_min"] = ratio
        rep.rows.append(ReportRow.check(math.nan, math.nan, math.nan, "ionization_energy_ratio_max_min", ratio, 3.0))
        slope = float(np.polyfit(np.asarray(cfg.Z, dtype=float), vals, 1)[0])
        rep.rows.append(ReportRow.info(math.nan, math.nan, math.nan, "ionization_energy_trend_slope", slope))
    rep.runtime_s = time.perf_counter() - t0
    return rep


def run_checks(cfg: ExperimentConfig) -> ScanReport:
    """Fast self-checks of the analytic building blocks."""
    from .relkin import bessel_K2, check_herbst_constant, check_kato, k2_moment
    from .semiclassics import coherent_completeness_check
    from .thomasfermi import solve_tf_dimensionless

    t0 = time.perf_counter()
    rep = ScanReport("check", cfg)
    B = solve_tf_dimensionless().slope
    rep.rows.append(ReportRow.check(0, 0, 0, "tf_slope_B_abs_dev", abs(B - 1.588071), 1e-4))
    rep.rows.append(ReportRow.check(0, 0, 0, "k2_moment_abs_dev", abs(k2_moment() - 1.5 * math.pi), 1e-8))
    t = np.geomspace(1e-2, 1e2, 50)
    worst = max(bessel_K2(float(ti)) - 16.0 / ti**2 * math.exp(-ti / 2.0) for ti in t)
    rep.rows.append(ReportRow.check(0, 0, 0, "k2_bound_max_excess", worst, 0.0))

    def gauss(r):
        return np.exp(-np.asarray(r) ** 2)

    k = check_kato(gauss)
    rep.rows.append(ReportRow.check(0, 0, 0, "kato_gaussian_lhs_minus_rhs", k.lhs - k.rhs, 0.0))
    h = check_herbst_constant(gauss, 1.0)
    rep.rows.append(ReportRow.check(0, 0, 0, "herbst_gaussian_lhs_minus_rhs", h.lhs - h.rhs, 0.0))
    _, _, err = coherent_completeness_check()
    rep.rows.append(ReportRow.check(0, 0, 0, "coherent_completeness_rel_err", err, 1e-10))
    rep.runtime_s = time.perf_counter() - t0
    return rep


RUNNERS = {
    "ionization": run_ionization_scan,
    "radius": run_radius_scan,
    "potential": run_potential_comparison,
    "ionization-energy": run_ionization_energy,
    "check": run_checks,
}


# ---------------------------------------------------------------- CLI


def _floats(text):
    if text is None:
        return None
    return tuple(float(v) for v in str(text).replace(" ", "").split(",") if v)


def _zs(text):
    vals = _floats(text)
    if vals is None:
        return None
    out = []
    for v in vals:
        out.append(int(v) if float(v).is_integer() else v)
    return tuple(out)


def _build_config(kind, overrides: dict, config_file) -> ExperimentConfig:
    data = {k: v for k, v in overrides.items() if v is not None}
    data["kind"] = kind
    cfg = ExperimentConfig.from_mapping(data)
    if config_file:
        cfg = ExperimentConfig.from_file(config_file, base=cfg)
    return cfg


_common = [
    click.option("--Z", "Z", help="Nuclear charge(s), comma separated."),
    click.option("--N", "N", help="Electron number(s), comma separated (explicit policy)."),
    click.option("--q", type=int, help="Spin states."),
    click.option("--kappa", type=float, help="Coupling Z*alpha."),
    click.option("--grid-n", type=int, help="Grid points."),
    click.option("--rmax", type=float, help="Outer grid radius."),
    click.option("--scheme", type=click.Choice(["uniform", "log-uniform"]), help="Grid scheme."),
    click.option("--out", type=click.Path(file_okay=False), help="Output directory."),
    click.option("--format", "fmt", help="Comma-separated output formats (csv,json)."),
    click.option("--seed", type=int, help="Seed for randomized suites."),
    click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False),
                 help="Key-value (YAML/JSON) file overriding flags."),
]


def _options(f):
    for opt in reversed(_common):
        f = opt(f)
    return f


def _overrides(Z, N, q, kappa, grid_n, rmax, scheme, out, fmt, seed) -> dict:
    d = {"Z": _zs(Z), "N": _floats(N), "q": q, "kappa": kappa, "grid_n": grid_n, "r_max": rmax, "scheme": scheme,
         "out_dir": out, "seed": seed}
    if fmt:
        d["formats"] = tuple(s.strip() for s in fmt.split(",") if s.strip())
    if d["N"]:
        d["N_policy"] = "explicit"
    return d


@click.group()
@click.version_option(__version__, prog_name="atomscope")
@click.option("-v", "--verbose", is_flag=True, help="Log solver progress.")
def main(verbose):
    """Thomas-Fermi and pseudo-relativistic Hartree-Fock experiments for heavy atoms."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


@main.command()
@_options
def tf(Z, N, q, kappa, grid_n, rmax, scheme, out, fmt, seed, config_file):
    """Solve the Thomas-Fermi atom and write r,rho,phi plus a JSON sidecar."""
    cfg = _build_config("check", _overrides(Z, N, q, kappa, grid_n, rmax, None, out, fmt, seed), config_file)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    Ns = cfg.N if cfg.N_policy == "explicit" else cfg.Z
    for Z_, N_ in zip(cfg.Z, Ns if len(Ns) == len(cfg.Z) else [Ns[0]] * len(cfg.Z)):
        grid = make_grid(rmax or 80.0 * Z_ ** (-1.0 / 3.0), grid_n or 2000, scheme or "log-uniform",
                         r_min=1e-6 * Z_ ** (-1.0 / 3.0) if (scheme or "log-uniform") != "uniform" else None)
        sol = solve_tf_atom(Z_, N_, q=cfg.q, grid=grid)
        paths = sol.to_files(out_dir / f"tf_Z{Z_:g}_N{N_:g}")
        click.echo(f"TF Z={Z_:g} N={N_:g}: energy={sol.energy:.10g} mu={sol.mu:.6g} "
                   f"charge={sol.total_charge:.8g} residual={sol.residual:.2e} -> {paths[0]}")


@main.command()
@_options
@click.option("--mode", type=click.Choice(["relativistic", "nonrelativistic"]), default=None)
def hf(Z, N, q, kappa, grid_n, rmax, scheme, out, fmt, seed, config_file, mode):
    """Run the Hartree-Fock SCF and export JSON plus density and orbital CSVs."""
    ov = _overrides(Z, N, q, kappa, grid_n, rmax, scheme, out, fmt, seed)
    ov["mode"] = mode
    cfg = _build_config("check", ov, config_file)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    Ns = cfg.N if cfg.N_policy == "explicit" else cfg.Z
    failed = False
    for Z_, N_ in zip(cfg.Z, Ns if len(Ns) == len(cfg.Z) else [Ns[0]] * len(cfg.Z)):
        sol = _solve(Z_, N_, cfg)
        sol.to_files(out_dir / f"hf_Z{Z_:g}_N{N_:g}")
        e = sol.energy
        click.echo(f"HF Z={Z_:g} N={N_:g} alpha={cfg.alpha(Z_):.6g}: total={e['total']:.10g} "
                   f"kinetic={e['kinetic']:.8g} direct={e['direct']:.8g} exchange={e['exchange']:.8g} "
                   f"converged={sol.converged} iterations={sol.iterations} residual={sol.el_residual:.2e} "
                   f"unbound={sol.unbound}")
        for s in sol.shells:
            click.echo(f"  {s.n}{'spdfg'[s.l]} occ={s.occ:g} eps={s.eps:.10g}")
        failed |= not sol.converged
    sys.exit(1 if failed else 0)


@main.command()
@_options
@click.option("--rcut", type=float, required=True, help="Cut radius r.")
@click.option("--source", type=click.Choice(["tf", "hf"]), default="tf", help="Atom providing the screened potential.")
def otf(Z, N, q, kappa, grid_n, rmax, scheme, out, fmt, seed, config_file, rcut, source):
    """Solve the outside Thomas-Fermi problem beyond a cut radius."""
    from .radial import cut_weights, screened_potential

    cfg = _build_config("check", _overrides(Z, N, q, kappa, grid_n, rmax, scheme, out, fmt, seed), config_file)
    Z_ = cfg.Z[0]
    if source == "hf":
        atom = _solve(Z_, Z_, cfg)
        rho = atom.rho
    else:
        atom = solve_tf_atom(Z_, Z_, q=cfg.q)
        rho = atom.rho
    g = rho.grid
    V = np.where(g.r >= rcut, screened_potential(rho, Z_, rcut, g.r), 0.0)
    n_out = float(np.dot(4.0 * np.pi * g.r**2 * cut_weights(g, rcut), rho.values))
    sol = solve_otf(V, rcut, n_out, q=cfg.q, grid=g)
    a, A = sol.envelope_constants()
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sol.rho.to_csv(out_dir / f"otf_Z{Z_:g}_r{rcut:g}_rho.csv")
    click.echo(f"OTF Z={Z_:g} r={rcut:g} source={source}: N_out={n_out:.8g} mu={sol.mu:.3e} "
               f"sweeps={sol.sweeps} residual={sol.residual:.2e} a={a:.4g} A={A:.4g}")


@main.command()
@click.argument("kind", type=click.Choice(["ionization", "radius", "potential", "ionization-energy"]))
@_options
@click.option("--nu", help="Outer charges for the radius scan, comma separated.")
@click.option("--hf-Z", "hf_Z", help="Z values for HF radius rows.")
def scan(kind, Z, N, q, kappa, grid_n, rmax, scheme, out, fmt, seed, config_file, nu, hf_Z):
    """Run a scan and write its report; exit code 0 iff all asserted rows pass."""
    ov = _overrides(Z, N, q, kappa, grid_n, rmax, scheme, out, fmt, seed)
    ov["nu"] = _floats(nu)
    ov["hf_Z"] = _zs(hf_Z)
    cfg = _build_config(kind, ov, config_file)
    _finish(RUNNERS[kind](cfg), cfg)


@main.command()
@_options
def check(Z, N, q, kappa, grid_n, rmax, scheme, out, fmt, seed, config_file):
    """Run fast analytic self-checks."""
    cfg = _build_config("check", _overrides(Z, N, q, kappa, grid_n, rmax, scheme, out, fmt, seed), config_file)
    _finish(run_checks(cfg), cfg)


def _finish(rep: ScanReport, cfg: ExperimentConfig):
    paths = emit_report(rep, cfg.formats, cfg.out_dir)
    for r in rep.rows:
        flag = REPORT_ONLY if r.passed is None else ("PASS" if r.passed else "FAIL")
        click.echo(f"{flag:11s} Z={r.Z:<6g} N={r.N:<6g} {r.observable:40s} value={r.value:.6g} bound={r.bound:.6g}")
    for note in rep.notes:
        click.echo(note)
    click.echo(f"config hash {cfg.config_hash[:16]}; wrote {', '.join(str(p) for p in paths)}")
    sys.exit(0 if rep.all_passed else 1)


if __name__ == "__main__":  # pragma: no cover
    main()
