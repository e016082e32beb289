"""Batch front-end: configure, run, and report on all computations.

Every run resolves its configuration up front, computes, writes
machine-readable outputs into the chosen directory, and finishes with a
manifest recording the resolved values, library versions, and a
pass/fail summary. Timestamps live only in the manifest, so data files
from identical configurations compare byte for byte. Figures are
rendered next to the delimited files as a convenience; the CSVs stay
the canonical record.

Exit codes: 0 success, 1 parameter error, 2 computation or acceptance
failure, 3 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import json
import math
import platform
import sys
from datetime import datetime, timezone

import numpy as np

from . import __version__
from ._reduce import set_threads
from .config import RunConfig, load_config
from .errors import (
    DomainError,
    EvaluationError,
    FormatError,
    IterationError,
    ParameterError,
)
from .measures import GridMeasure, GridSpec, write_measure_csv

__all__ = ["main", "cmd_stable", "cmd_evolve", "cmd_profile", "cmd_verify", "cmd_diagnose"]


# -- manifest ----------------------------------------------------------------


class _Resolver:
    """Reads config values and remembers every key-default pair used,
    so the manifest can show the full effective configuration."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.resolved: dict = {}

    def _record(self, key, value):
        self.resolved[key] = value
        return value

    def str_(self, key, default=None):
        return self._record(key, self.cfg.get_str(key, default))

    def float_(self, key, default=None):
        return self._record(key, self.cfg.get_float(key, default))

    def int_(self, key, default=None):
        return self._record(key, self.cfg.get_int(key, default))

    def bool_(self, key, default=None):
        return self._record(key, self.cfg.get_bool(key, default))

    def floats_(self, key, default=None):
        return self._record(key, self.cfg.get_floats(key, default))

    def ints_(self, key, default=None):
        return self._record(key, self.cfg.get_ints(key, default))


def _versions() -> dict:
    import matplotlib
    import scipy

    return {
        "kinprof": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "matplotlib": matplotlib.__version__,
    }


def _write_manifest(out_dir, payload: dict) -> None:
    path = out_dir / "manifest.json"
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# -- shared pieces -----------------------------------------------------------


def _grid_from(res: _Resolver, x_min: float, x_max: float, n: int) -> GridSpec:
    return GridSpec(
        x_min=res.float_("grid.x_min", x_min),
        x_max=res.float_("grid.x_max", x_max),
        n_points=res.int_("grid.n_points", n),
    )


def _write_csv(path, header: str, columns) -> None:
    rows = np.column_stack(columns)
    lines = [header]
    for row in rows:
        lines.append(",".join(f"{v:.17g}" for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


# -- stable ------------------------------------------------------------------


def cmd_stable(cfg: RunConfig, out_dir) -> tuple:
    from .plots import save_stable_figure
    from .stable import StableDensityTable, build_table, density_mass_two_routes, v_alpha_eval, write_table_csv

    res = _Resolver(cfg)
    alphas = res.floats_("stable.alphas", None)
    if not alphas:
        raise ParameterError("stable.alphas is empty: need at least one order")
    for alpha in alphas:
        if not (0.0 < alpha < 2.0):
            raise ParameterError(
                f"stable order alpha must lie in the open interval (0, 2), got {alpha:g}"
            )
    z_max = res.float_("stable.z_max", 100.0)
    n_samples = res.int_("stable.n_points", 4096)

    curves = {}
    report = {}
    all_pass = True
    for alpha in alphas:
        table = build_table(alpha, core_z_max=z_max, n_samples=n_samples)
        write_table_csv(table, out_dir / f"stable_alpha_{alpha:g}.csv")
        curves[alpha] = (table.z_samples, table.v_samples)

        z_route, k_route = density_mass_two_routes(table)
        mass = z_route + (1.0 - k_route)
        checks = {"mass": mass, "mass_ok": bool(abs(mass - 1.0) <= 1e-5)}
        z_band = min(50.0, 0.5 * z_max)
        band_val = float(z_band ** (alpha + 1.0) * v_alpha_eval(table, z_band))
        checks["tail_band_z"] = z_band
        checks["tail_band_value"] = band_val
        checks["tail_band_ok"] = bool(0.95 <= band_val <= 1.05)
        if alpha == 1.0:
            zs = np.linspace(0.0, 10.0, 201)
            exact = 1.0 / (math.pi**2 + zs**2)
            err = float(np.max(np.abs(v_alpha_eval(table, zs) - exact)))
            checks["cauchy_max_error"] = err
            checks["cauchy_ok"] = bool(err <= 1e-8)
        report[f"{alpha:g}"] = checks
        all_pass = all_pass and all(v for k, v in checks.items() if k.endswith("_ok"))

    with open(out_dir / "stable_report.json", "w", encoding="utf-8", newline="\n") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    save_stable_figure(out_dir / "stable_densities.png", curves)
    return (0 if all_pass else 2), {"resolved": res.resolved, "checks": report, "pass": all_pass}


# -- evolve ------------------------------------------------------------------


def cmd_evolve(cfg: RunConfig, out_dir) -> tuple:
    from .evolution import (
        EvolutionParams,
        contraction_horizon,
        run_trajectory,
        write_trajectory_csv,
    )
    from .plots import save_trajectory_figure

    res = _Resolver(cfg)
    rho = res.float_("evolve.rho", None)
    epsilon = res.float_("evolve.epsilon", None)
    a = res.float_("evolve.a", None)
    grid = _grid_from(res, 0.01, 100.0, 512)
    steps = res.int_("evolve.steps", 100)
    snap = res.int_("evolve.snapshot_every", 0)
    r0 = res.float_("evolve.r0", 0.0)
    dt_raw = res.str_("evolve.dt", "auto")
    if dt_raw == "auto":
        dt = 0.9 * contraction_horizon(rho, epsilon)
    else:
        try:
            dt = float(dt_raw)
        except ValueError:
            raise ParameterError(f"evolve.dt: expected a number or `auto`, got {dt_raw!r}")
    params = EvolutionParams(
        rho=rho,
        epsilon=epsilon,
        a=a,
        grid=grid,
        dt=dt,
        R0=r0 if r0 > 0.0 else None,
    )
    x = grid.nodes()
    member = (2.0 - rho) * (rho - 1.0) * x ** (1.0 - rho)
    psi0 = GridMeasure(grid=grid, density=member)

    states = run_trajectory(params, psi0, steps)
    write_trajectory_csv(states, out_dir / "trajectory.csv")
    if snap > 0:
        for k, st in enumerate(states):
            if k % snap == 0 or k == len(states) - 1:
                write_measure_csv(st.psi, out_dir / f"state_{k:04d}.csv")

    norms = np.array([st.rho_norm_history[-1][1] for st in states])
    margins = np.array([st.lower_bound_margin_history[-1][1] for st in states])
    rows = np.column_stack(
        [
            np.array([st.t for st in states]),
            norms,
            margins,
            np.array([st.psi.mass() for st in states]),
        ]
    )
    save_trajectory_figure(out_dir / "trajectory.png", rows)
    step_growth = float(np.max(norms[1:] / norms[:-1])) if len(norms) > 1 else 1.0
    summary = {
        "dt": dt,
        "norm_initial": float(norms[0]),
        "norm_final": float(norms[-1]),
        "norm_nonincreasing": bool(step_growth <= 1.0 + 1e-8),
        "margin_min": float(margins.min()),
        "mass_final": float(rows[-1, 3]),
    }
    return 0, {"resolved": res.resolved, "summary": summary, "pass": True}


# -- profile -----------------------------------------------------------------


def _default_profile_grid(rho: float) -> tuple:
    # the rho=2 profile decays exponentially: past ~r=9 it is below 1e-10
    # and a wide window only hands the solver room to park a spurious
    # power tail the transport term cannot see
    if rho < 2.0:
        return 0.05, 2000.0, 512
    return 0.01, 9.0, 512


def _relax_schedule(res: _Resolver, rho: float, grid: GridSpec):
    from .evolution import EvolutionParams, contraction_horizon

    eps_list = res.floats_("relax.epsilons", [0.5, 0.25])
    a_list = res.floats_("relax.a_values", [0.2, 0.1])
    dt_factor = res.float_("relax.dt_factor", 0.9)
    if len(eps_list) != len(a_list):
        raise ParameterError("relax.epsilons and relax.a_values must have equal length")
    schedule = []
    for eps, aa in zip(eps_list, a_list):
        dt = dt_factor * contraction_horizon(rho, eps)
        schedule.append(EvolutionParams(rho=rho, epsilon=eps, a=aa, grid=grid, dt=dt))
    return schedule


def cmd_profile(cfg: RunConfig, out_dir) -> tuple:
    from .diagnostics import TailFit, build_report, default_fit_window, write_report_json
    from .plots import save_profile_figure
    from .profiles import (
        _stationary_defect,
        default_battery,
        direct_iterate,
        relax_to_profile,
        solve_stationary,
        weak_residual,
        write_profile,
    )

    res = _Resolver(cfg)
    rho = res.float_("profile.rho", None)
    if not (1.0 < rho <= 2.0):
        raise ParameterError(f"profile.rho must lie in (1, 2], got {rho:g}")
    method = res.str_("profile.method", "direct")
    if method not in ("direct", "relax", "both"):
        raise ParameterError(f"profile.method must be direct, relax or both, got {method!r}")
    with_family = res.bool_("profile.with_family", False)
    g0 = _default_profile_grid(rho)
    grid = _grid_from(res, *g0)

    summary: dict = {}
    sol = None
    if method in ("direct", "both"):
        ladder = tuple(res.ints_("solver.ladder", [96, 192]))
        prepared = solve_stationary(
            rho,
            grid,
            ladder=ladder,
            norm_weight=res.float_("solver.norm_weight", 3.0),
            fine_target=res.float_("solver.fine_target", 3e-6),
        )
        sol = direct_iterate(
            rho,
            prepared,
            damping=res.float_("solver.damping", 0.3),
            max_iter=res.int_("solver.max_iter", 40),
            tol=res.float_("solver.tol", 1e-3),
        )
        summary["direct"] = {
            "iterations": sol.solver_path["iterations"],
            "residual_strong": sol.residual_strong,
            "residual_weak": sol.residual_weak,
        }

    sol_relax = None
    if method in ("relax", "both"):
        if rho >= 2.0:
            raise ParameterError("the relaxation route requires rho < 2")
        schedule = _relax_schedule(res, rho, grid)
        sol_relax = relax_to_profile(
            rho,
            schedule,
            max_steps_per_stage=res.int_("relax.max_steps", 400),
            stage_tol=res.float_("relax.stage_tol", 2e-4),
        )
        summary["relax"] = {
            "residual_strong": sol_relax.residual_strong,
            "residual_weak": sol_relax.residual_weak,
        }
        if sol is None:
            sol = sol_relax
            sol_relax = None

    write_profile(sol, str(out_dir / "profile"))
    x = sol.phi.grid.nodes()
    d = sol.phi.density
    _write_csv(out_dir / "plot_profile.csv", "r,phi", (x, d))
    _write_csv(out_dir / "plot_compensated.csv", "r,phi*r^rho", (x, d * x**rho))
    _write_csv(
        out_dir / "residual_strong.csv",
        "r,defect",
        (x, _stationary_defect(rho, sol.phi.grid, d)),
    )
    battery = default_battery(sol.phi.grid)
    weak_rows = [(tf.name, weak_residual(rho, sol.phi, battery=[tf])) for tf in battery]
    with open(out_dir / "residual_weak.csv", "w", encoding="utf-8", newline="\n") as f:
        f.write("test_function,residual\n")
        for name, val in weak_rows:
            f.write(f"{name},{val:.17g}\n")

    n_flux = res.int_("diagnostics.flux_radii", 10)
    flux_radii = None
    if rho < 2.0:
        flux_radii = list(np.geomspace(10.0 * grid.x_min, grid.x_max / 10.0, n_flux))
    report = build_report(sol, flux_radii=flux_radii)
    write_report_json(report, out_dir / "diagnostics.json")
    fit = TailFit(
        rate=report.tail_exponent_fit[0],
        stderr=report.tail_exponent_fit[1],
        r_squared=report.details.get("fit_r_squared", 0.0),
    )
    save_profile_figure(
        out_dir / "profile.png", sol.phi, rho, fit=fit, window=tuple(report.tail_exponent_fit[2])
    )
    summary["tail_exponent"] = report.tail_exponent_fit[0]
    if report.tail_constant_ratio is not None:
        summary["tail_constant_ratio"] = report.tail_constant_ratio

    if sol_relax is not None:
        write_profile(sol_relax, str(out_dir / "profile_relax"))
        mid = math.sqrt(grid.x_min * grid.x_max)
        sel = (x >= mid / math.sqrt(10.0)) & (x <= mid * math.sqrt(10.0))
        rel = np.abs(sol_relax.phi.density[sel] - d[sel]) / d[sel]
        _write_csv(
            out_dir / "compare_methods.csv",
            "r,phi_direct,phi_relax,rel_diff",
            (x[sel], d[sel], sol_relax.phi.density[sel], rel),
        )
        summary["cross_method_max_rel_diff"] = float(rel.max())

    if with_family:
        from .selfsimilar import (
            WeakSolutionFamily,
            residual_scale,
            selfsimilar_battery,
            weak_form_residual,
            write_residual_report,
        )

        fam = WeakSolutionFamily(profile=sol, M=1.05 * sol.phi.mass(), t0=1.0)
        rows = []
        worst = 0.0
        for tf in selfsimilar_battery(grid):
            for t_end in (0.5, 1.0):
                r = weak_form_residual(fam, tf, t_end)
                s = residual_scale(fam, tf, t_end)
                rows.append((tf.name, t_end, r, s))
                worst = max(worst, r / s if s > 0.0 else math.inf)
        write_residual_report(rows, out_dir / "family_residuals.csv")
        summary["family_worst_scaled_residual"] = worst

    return 0, {"resolved": res.resolved, "summary": summary, "pass": True}


# -- verify ------------------------------------------------------------------


def _verify_checks(cfg: RunConfig, sol) -> dict:
    from .diagnostics import build_report
    from .profiles import strong_residual, weak_residual

    res = _Resolver(cfg)
    rho = sol.rho
    checks: dict = {}

    def judge(name, value, ok):
        checks[name] = {"value": value, "ok": bool(ok)}

    band_s = res.float_("bands.residual_strong", 1e-3)
    band_w = res.float_("bands.residual_weak", 1e-3)
    rs = strong_residual(rho, sol.phi)
    rw = weak_residual(rho, sol.phi)
    judge("residual_strong", rs, rs <= band_s)
    judge("residual_weak", rw, rw <= band_w)

    report = build_report(sol)
    if rho < 2.0:
        frac = res.float_("bands.tail_exponent_frac", 0.10)
        exponent = report.tail_exponent_fit[0]
        judge("tail_exponent", exponent, abs(exponent - rho) <= frac * rho)
        lo = res.float_("bands.tail_ratio_lo", 0.85)
        hi = res.float_("bands.tail_ratio_hi", 1.15)
        ratio = report.tail_constant_ratio
        judge("tail_constant_ratio", ratio, lo <= ratio <= hi)
        fb = res.float_("bands.flux_pointwise", 1e-2)
        judge("flux_identity", report.flux_identity_max_residual,
              report.flux_identity_max_residual <= fb)
        lf = res.float_("bands.limits_frac", 0.10)
        upper, lower, nrm = report.norm_limits
        lim_ok = abs(upper - nrm) <= lf * nrm and abs(lower - nrm) <= lf * nrm
        judge("norm_limits", [upper, lower, nrm], lim_ok)
    else:
        r2p = res.float_("bands.r2_pointwise", 0.99)
        judge("tail_fit_r_squared", report.details["fit_r_squared"],
              report.details["fit_r_squared"] >= r2p)
        moments_ok = all(bool(row[3]) for row in report.moment_table)
        judge("moment_bounds", sum(1 for row in report.moment_table if row[3]), moments_ok)
        r2i = res.float_("bands.r2_interval", 0.98)
        judge("interval_fit_r_squared", report.details["exp_lower_r_squared"],
              report.details["exp_lower_r_squared"] >= r2i)
        rf = res.float_("bands.interval_rate_frac", 0.15)
        up, low = report.exp_upper_rate, report.exp_lower_rate
        judge("interval_vs_pointwise_rate", [low, up], abs(low - up) <= rf * up)
    checks["_resolved"] = res.resolved
    return checks


def cmd_verify(cfg: RunConfig, out_dir, profile_base: str) -> tuple:
    from .profiles import read_profile

    sol = read_profile(profile_base)
    checks = _verify_checks(cfg, sol)
    resolved = checks.pop("_resolved")
    ok = all(c["ok"] for c in checks.values())
    with open(out_dir / "verify.json", "w", encoding="utf-8", newline="\n") as f:
        json.dump({"profile": profile_base, "checks": checks, "pass": ok},
                  f, indent=2, sort_keys=True)
        f.write("\n")
    return (0 if ok else 2), {"resolved": resolved, "checks": checks, "pass": ok}


# -- diagnose ----------------------------------------------------------------


def cmd_diagnose(cfg: RunConfig, out_dir, profile_base: str) -> tuple:
    from .diagnostics import (
        build_report,
        write_calI_csv,
        write_intervals_csv,
        write_moments_csv,
        write_report_json,
    )
    from .profiles import read_profile

    res = _Resolver(cfg)
    sol = read_profile(profile_base)
    rho = sol.rho
    grid = sol.phi.grid
    n_flux = res.int_("diagnostics.flux_radii", 10)
    flux_radii = None
    if rho < 2.0:
        flux_radii = list(np.geomspace(10.0 * grid.x_min, grid.x_max / 10.0, n_flux))
    report = build_report(sol, flux_radii=flux_radii)
    write_report_json(report, out_dir / "diagnostics.json")
    if rho < 2.0:
        rows = report.details["flux_rows"]
        with open(out_dir / "flux.csv", "w", encoding="utf-8", newline="\n") as f:
            f.write("r,residual\n")
            for r, v in rows:
                f.write(f"{r:.17g},{v:.17g}\n")
    else:
        top = grid.x_max / 3.0
        Rs = np.linspace(max(top / 10.0, 1.0), max(top - 1.0, 2.0), 12)
        write_calI_csv(sol.phi, np.geomspace(grid.x_min * 10.0, grid.x_max / 3.0, 12),
                       out_dir / "calI.csv")
        write_intervals_csv(sol.phi, list(Rs), out_dir / "intervals.csv")
        write_moments_csv(report.moment_table, out_dir / "moments.csv")
    return 0, {"resolved": res.resolved, "summary": {"rho": rho}, "pass": True}


# -- entry point -------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ParameterError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="kinprof", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="path to a section.key = value file")
    common.add_argument("--out", default=".", help="output directory (created if absent)")
    common.add_argument("--threads", type=int, default=1, help="worker thread cap")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("stable", parents=[common], help="tabulate symmetric stable densities")
    sub.add_parser("evolve", parents=[common], help="run the regularized evolution")
    sub.add_parser("profile", parents=[common], help="solve for a self-similar profile")
    p_verify = sub.add_parser("verify", parents=[common], help="re-check a stored profile")
    p_verify.add_argument("profile_base", help="path prefix of profile .csv/.json pair")
    p_diag = sub.add_parser("diagnose", parents=[common], help="diagnostics for a stored profile")
    p_diag.add_argument("profile_base", help="path prefix of profile .csv/.json pair")
    return parser


def main(argv=None) -> int:
    from pathlib import Path

    started = _utcnow()
    out_dir = None
    manifest: dict = {}
    try:
        args = _build_parser().parse_args(argv)
        if args.threads < 1:
            raise ParameterError("--threads must be at least 1")
        set_threads(args.threads)
        cfg = load_config(args.config) if args.config else RunConfig()
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest = {
            "command": args.command,
            "threads": args.threads,
            "versions": _versions(),
            "started": started,
        }
        if args.command == "stable":
            code, result = cmd_stable(cfg, out_dir)
        elif args.command == "evolve":
            code, result = cmd_evolve(cfg, out_dir)
        elif args.command == "profile":
            code, result = cmd_profile(cfg, out_dir)
        elif args.command == "verify":
            code, result = cmd_verify(cfg, out_dir, args.profile_base)
        else:
            code, result = cmd_diagnose(cfg, out_dir, args.profile_base)
        manifest.update(result)
        manifest["exit_code"] = code
        manifest["finished"] = _utcnow()
        _write_manifest(out_dir, manifest)
        return code
    except (ParameterError, DomainError) as e:
        print(f"parameter error: {e}", file=sys.stderr)
        return 1
    except (IterationError, EvaluationError) as e:
        print(f"computation failed: {e}", file=sys.stderr)
        if out_dir is not None and manifest:
            manifest.update({"pass": False, "failure": str(e), "exit_code": 2,
                             "finished": _utcnow()})
            try:
                _write_manifest(out_dir, manifest)
            except OSError:
                pass
        return 2
    except (FormatError, OSError, json.JSONDecodeError) as e:
        print(f"file error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
