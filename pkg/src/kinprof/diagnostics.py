"""Quantitative checks run against computed profiles.

Each function evaluates one identity or bound the profiles are supposed
to satisfy: the pair-interaction functional and its flux identities, the
norm recovered from the flux, the two tail limits, moment bounds and
interval lower bounds for the borderline case, and the square-root
growth of the small-x mass. The report collects them with enough
context (fit windows, grid-only vs tail-closed values) that a reader
can judge how much each number owes to the closure choices.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from numpy.typing import NDArray

from ._reduce import tree_sum
from .errors import DomainError, ParameterError
from .measures import GridMeasure, moment, quadrature
from .profiles import (
    ProfileEvaluator,
    ProfileSolution,
    TailModel,
    fit_tail,
    mass_with_tail,
    norm_with_tail,
)

_FLOOR = 1e-300


def _extended_arrays(phi: GridMeasure, rho: float, extend_decades: float):
    """Grid nodes and weights, optionally continued past x_max by the
    tail model on a 16-per-decade ladder."""
    x = phi.grid.nodes()
    w = phi.grid.trap_weights()
    d = phi.density
    if extend_decades <= 0.0:
        return x, w, d
    tail = fit_tail(phi, rho)
    n_tail = max(int(round(16 * extend_decades)), 2)
    step = math.log(10.0) / 16.0
    xt = phi.grid.x_max * np.exp(step * np.arange(1, n_tail + 1))
    dt = tail(xt)
    xe = np.concatenate([x, xt])
    de = np.concatenate([d, dt])
    # trapezoid in log coordinates over the concatenated ladder
    lg = np.log(xe)
    we = np.zeros_like(xe)
    we[:-1] += 0.5 * np.diff(lg)
    we[1:] += 0.5 * np.diff(lg)
    we *= xe
    return xe, we, de


def cal_I(phi: GridMeasure, r: float, rho: float = 2.0, extend_decades: float = 0.0) -> float:
    """Pair functional: double integral of (phi phi / sqrt(xy)) times
    (x+y-r)_+ ^ (r-|x-y|)_+ over the quadrant.

    The bracket vanishes unless x+y > r and |x-y| < r, and is bounded by
    r, so the tensor product rule needs no singularity handling. With
    extend_decades > 0 the quadrature continues past x_max on the tail
    model's ladder.
    """
    if not r > 0.0:
        raise ParameterError(f"r must be positive, got {r}")
    x, w, d = _extended_arrays(phi, rho, extend_decades)
    kern = d * w / np.sqrt(x)
    xs = x[:, None] + x[None, :]
    xd = np.abs(x[:, None] - x[None, :])
    bracket = np.minimum(np.maximum(xs - r, 0.0), np.maximum(r - xd, 0.0))
    return tree_sum((kern[:, None] * kern[None, :] * bracket).ravel())


def _tail_mass(tail: TailModel, rho: float) -> float:
    """int over (x_anchor, inf) of the tail density."""
    if tail.kind == "power":
        return tail.amplitude * tail.x_anchor / (rho - 1.0)
    return tail.amplitude / tail.rate


def flux_identity_residual(rho: float, phi: GridMeasure, r: float,
                           tail: bool = True) -> float:
    """Relative defect of the interior flux identity at radius r.

    (1/rho) [ (rho-2) int_0^r x phi + (rho-1) r int_r^inf phi ]
    against half the pair functional at r. With tail=True the outward
    integral closes with the tail model; the pair functional itself is
    insensitive to the closure (far pairs need |x-y| < r, and the
    near-diagonal strip beyond x_max carries O(r^2 x_max^(-2 rho))).
    """
    if not r > 0.0:
        raise ParameterError(f"r must be positive, got {r}")
    if not np.any(phi.density > 0.0):
        return 0.0
    inner = moment(phi, 1.0, r_cut=r)
    outer = moment(phi, 0.0) - moment(phi, 0.0, r_cut=r)
    if tail:
        outer += _tail_mass(fit_tail(phi, rho), rho)
    lhs = ((rho - 2.0) * inner + (rho - 1.0) * r * outer) / rho
    rhs = 0.5 * cal_I(phi, r, rho=rho)
    return abs(lhs - rhs) / (abs(rhs) + _FLOOR)


def norm_via_flux(rho: float, phi: GridMeasure, R: float,
                  per_decade: int = 8, tail: bool = True) -> float:
    """Mismatch between the flux integral (rho/2) int_0^R calI(r) r^(rho-3) dr
    and the truncated-norm functional R^(rho-2) int (1 ^ R/x) x phi dx.

    The norm side integrates R phi over everything above R, so its tail
    beyond x_max is first order in the truncated mass and the closure
    matters; the flux side sees the far tail only through near-diagonal
    pairs and needs none.
    """
    if not (1.0 < rho < 2.0):
        raise DomainError(f"rho must lie in (1, 2), got {rho}")
    if not R > 0.0:
        raise ParameterError(f"R must be positive, got {R}")
    if not np.any(phi.density > 0.0):
        return 0.0
    grid = phi.grid
    r_lo = grid.x_min / 10.0
    n = max(int(round(per_decade * math.log10(R / r_lo))), 8) + 1
    rs = np.exp(np.linspace(math.log(r_lo), math.log(R), n))
    vals = np.array([cal_I(phi, float(r), rho=rho) for r in rs])
    # integral in log r of calI(r) r^(rho-2)
    integrand = vals * rs ** (rho - 2.0)
    lg = np.log(rs)
    flux = float(np.trapezoid(integrand, lg))
    # below r_lo the pair functional is exactly linear in r (only the
    # near-diagonal bracket survives), so the remainder closes against
    # a linear model anchored at the first sample
    if vals[0] > 0.0:
        flux += vals[0] / r_lo * r_lo ** (rho - 1.0) / (rho - 1.0)
    flux *= rho / 2.0
    x = grid.nodes()
    w = grid.trap_weights()
    core = tree_sum(np.minimum(1.0, R / x) * x * phi.density * w)
    if tail:
        core += R * _tail_mass(fit_tail(phi, rho), rho)
    target = R ** (rho - 2.0) * core
    return abs(flux - target) / (abs(target) + _FLOOR)


def limits_at_infinity(rho: float, phi: GridMeasure, R: Optional[float] = None,
                       tail: bool = True):
    """The two tail functionals that share the norm as their limit.

    Returns (upper, lower): R^(rho-1)/(2-rho) * int_(R,inf) phi and
    R^(rho-2)/(rho-1) * int_(0,R) x phi.
    """
    if not (1.0 < rho < 2.0):
        raise DomainError(f"rho must lie in (1, 2), got {rho}")
    if R is None:
        R = phi.grid.x_max / 10.0
    if not R > 0.0:
        raise ParameterError(f"R must be positive, got {R}")
    outer = moment(phi, 0.0) - moment(phi, 0.0, r_cut=R)
    if tail:
        outer += _tail_mass(fit_tail(phi, rho), rho)
    upper = R ** (rho - 1.0) / (2.0 - rho) * outer
    inner = moment(phi, 1.0, r_cut=R)
    lower = R ** (rho - 2.0) / (rho - 1.0) * inner
    return upper, lower


class TailFit(NamedTuple):
    rate: float
    stderr: float
    r_squared: float


def tail_fit(phi: GridMeasure, window, model: str) -> TailFit:
    """Least squares on the window: log phi against log r (power) or
    against r (exponential). Returns the positive decay parameter."""
    r1, r2 = window
    if not (phi.grid.x_min <= r1 < r2 <= phi.grid.x_max):
        raise ParameterError(f"window ({r1:g}, {r2:g}) must lie inside the grid")
    if model not in ("power", "exponential"):
        raise ParameterError(f"model must be power or exponential, got {model!r}")
    x = phi.grid.nodes()
    m = (x >= r1) & (x <= r2)
    if int(m.sum()) < 20:
        raise ParameterError(f"window holds {int(m.sum())} nodes, need at least 20")
    d = phi.density[m]
    if np.any(d <= 0.0):
        raise DomainError("density must be positive throughout the fit window")
    abscissa = np.log(x[m]) if model == "power" else x[m]
    y = np.log(d)
    coef, cov = np.polyfit(abscissa, y, 1, cov=True)
    fitted = np.polyval(coef, abscissa)
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0.0 else 1.0
    return TailFit(rate=-float(coef[0]), stderr=float(np.sqrt(cov[0, 0])), r_squared=r2)


def default_fit_window(phi: GridMeasure) -> tuple:
    """Last resolved decade ending at x_max/3; the final third of a
    decade is boundary layer and stays out."""
    hi = phi.grid.x_max / 3.0
    return (hi / 10.0, hi)


def tail_constant_ratio(rho: float, phi: GridMeasure, at: Optional[float] = None) -> float:
    """phi(r) r^rho / ((2-rho)(rho-1)) at the window end."""
    if at is None:
        at = default_fit_window(phi)[1]
    ev = ProfileEvaluator(phi, rho)
    return float(ev(np.array([at]))[0]) * at**rho / ((2.0 - rho) * (rho - 1.0))


def _tail_moment(tail: TailModel, gamma: float) -> float:
    """int over (x_anchor, inf) of x^gamma times the exponential tail
    density, by trapezoid on a linear ladder (40 e-foldings).

    The ladder works in the shifted variable u = x - x_anchor so no
    e^(a x_anchor) overflow can occur."""
    a = tail.rate
    xm = tail.x_anchor
    u = np.linspace(0.0, 40.0 / a, 2000)
    vals = (xm + u) ** gamma * np.exp(-a * u)
    return tail.amplitude * float(np.trapezoid(vals, u))


def closed_moment(phi: GridMeasure, gamma: float, rho: float = 2.0,
                  tail: bool = True) -> float:
    """m_gamma = int x^gamma phi, closed past x_max with the tail model.

    Power tails only converge for gamma < rho - 1; asking beyond that
    is a domain error rather than a silently truncated number.
    """
    if gamma < 0.0:
        raise ParameterError("gamma must be nonnegative")
    val = moment(phi, gamma)
    if not tail:
        return val
    model = fit_tail(phi, rho)
    if model.kind == "exponential":
        return val + _tail_moment(model, gamma)
    if gamma >= rho - 1.0:
        raise DomainError(
            f"moment gamma={gamma:g} diverges under a power tail with rate {model.rate:g}")
    xa = model.x_anchor
    return val + model.amplitude * xa ** (gamma + 1.0) / (model.rate - 1.0 - gamma)


def moment_bound_check(phi_2: GridMeasure, gammas, tail: bool = True) -> list:
    """Rows (gamma, m_gamma, bound, ok) with bound = gamma^gamma (3 m0)^(gamma+1),
    0^0 = 1. Moments close with the exponential tail model."""
    model = fit_tail(phi_2, 2.0)
    if model.kind != "exponential":
        raise DomainError("moment bounds need an exponential tail model")
    m0 = closed_moment(phi_2, 0.0, rho=2.0, tail=tail)
    A = 3.0 * m0
    rows = []
    for g in gammas:
        g = float(g)
        if g < 0.0:
            raise ParameterError("gamma must be nonnegative")
        mg = closed_moment(phi_2, g, rho=2.0, tail=tail)
        coef = 1.0 if g == 0.0 else g**g
        bound = coef * A ** (g + 1.0)
        rows.append((g, mg, bound, mg <= bound))
    return rows


class ExpLowerResult(NamedTuple):
    min_integral: float
    rate: float
    r_squared: float


def interval_integrals(phi: GridMeasure, R_list) -> NDArray[np.float64]:
    """I_R = int over (R, R+1) of phi, on the grid."""
    return np.array([moment(phi, 0.0, r_cut=float(R) + 1.0) - moment(phi, 0.0, r_cut=float(R))
                     for R in R_list])


def exp_lower_check(phi_2: GridMeasure, R_list) -> ExpLowerResult:
    """Unit-interval integrals I_R = int_(R,R+1) phi and the linear fit
    of -log I_R against R. A finite fitted rate with no leftover
    curvature is the checkable form of the interval lower bound."""
    Rs = np.asarray(list(R_list), dtype=np.float64)
    if Rs.size < 3:
        raise ParameterError("need at least 3 interval positions")
    vals = interval_integrals(phi_2, Rs)
    if np.any(vals <= 0.0):
        return ExpLowerResult(min_integral=float(vals.min()), rate=math.nan, r_squared=math.nan)
    y = -np.log(vals)
    coef = np.polyfit(Rs, y, 1)
    fitted = np.polyval(coef, Rs)
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0.0 else 1.0
    return ExpLowerResult(min_integral=float(vals.min()), rate=float(coef[0]), r_squared=r2)


def sqrtR_bound_constant(phi: GridMeasure) -> float:
    """sup over grid R of [int_0^R phi] / sqrt(R)."""
    x = phi.grid.nodes()
    g = phi.density * x
    cells = 0.5 * (g[1:] + g[:-1]) * np.diff(np.log(x))
    cum = np.concatenate([[0.0], np.cumsum(cells)])
    return float(np.max(cum[1:] / np.sqrt(x[1:])))


@dataclass(frozen=True)
class DiagnosticsReport:
    rho: float
    tail_exponent_fit: tuple          # (exponent or rate, stderr, (r1, r2))
    tail_constant_ratio: Optional[float]
    flux_identity_max_residual: Optional[float]
    norm_limits: Optional[tuple]      # (upper, lower, rho_norm_value)
    moment_table: Optional[list]
    exp_upper_rate: Optional[float]
    exp_lower_rate: Optional[float]
    sqrt_bound: float
    details: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        vals = [self.rho, self.sqrt_bound, self.tail_exponent_fit[0], self.tail_exponent_fit[1]]
        for v in (self.tail_constant_ratio, self.flux_identity_max_residual,
                  self.exp_upper_rate, self.exp_lower_rate):
            if v is not None:
                vals.append(v)
        if self.norm_limits is not None:
            vals.extend(self.norm_limits)
        if not all(math.isfinite(float(v)) for v in vals):
            raise DomainError("diagnostics produced a non-finite value")


def build_report(sol: ProfileSolution, flux_radii=None) -> DiagnosticsReport:
    """Run the applicable diagnostics for one solved profile."""
    rho = sol.rho
    phi = sol.phi
    window = default_fit_window(phi)
    model = "power" if rho < 2.0 else "exponential"
    fit = tail_fit(phi, window, model)
    details = {
        "fit_window": [window[0], window[1]],
        "fit_r_squared": fit.r_squared,
    }
    if rho < 2.0:
        if flux_radii is None:
            mid = math.sqrt(phi.grid.x_min * phi.grid.x_max)
            flux_radii = [mid / 3.0, mid, 3.0 * mid]
        flux_rows = [(float(r), flux_identity_residual(rho, phi, float(r))) for r in flux_radii]
        details["flux_rows"] = flux_rows
        details["grid_only"] = {
            "flux_rows": [(float(r), flux_identity_residual(rho, phi, float(r), tail=False))
                          for r in flux_radii],
            "norm_limits": list(limits_at_infinity(rho, phi, tail=False)),
        }
        nrm = norm_with_tail(phi, rho)
        upper, lower = limits_at_infinity(rho, phi)
        return DiagnosticsReport(
            rho=rho,
            tail_exponent_fit=(fit.rate, fit.stderr, window),
            tail_constant_ratio=tail_constant_ratio(rho, phi),
            flux_identity_max_residual=max(r for _, r in flux_rows),
            norm_limits=(upper, lower, nrm),
            moment_table=None,
            exp_upper_rate=None,
            exp_lower_rate=None,
            sqrt_bound=sqrtR_bound_constant(phi),
            details=details,
        )
    gammas = [0.5 * k for k in range(1, 17)]
    table = moment_bound_check(phi, gammas)
    details["grid_only"] = {
        "moment_table": [list(row[:3]) for row in moment_bound_check(phi, gammas, tail=False)],
    }
    top = phi.grid.x_max / 3.0
    Rs = np.linspace(max(top / 10.0, 1.0), max(top - 1.0, 2.0), 12)
    low = exp_lower_check(phi, Rs)
    details["exp_lower_r_squared"] = low.r_squared
    details["exp_lower_min_integral"] = low.min_integral
    return DiagnosticsReport(
        rho=rho,
        tail_exponent_fit=(fit.rate, fit.stderr, window),
        tail_constant_ratio=None,
        flux_identity_max_residual=None,
        norm_limits=None,
        moment_table=table,
        exp_upper_rate=fit.rate,
        exp_lower_rate=low.rate,
        sqrt_bound=sqrtR_bound_constant(phi),
        details=details,
    )


def write_report_json(report: DiagnosticsReport, path) -> None:
    payload = {
        "rho": report.rho,
        "tail_exponent_fit": {
            "value": report.tail_exponent_fit[0],
            "stderr": report.tail_exponent_fit[1],
            "window": list(report.tail_exponent_fit[2]),
        },
        "tail_constant_ratio": report.tail_constant_ratio,
        "flux_identity_max_residual": report.flux_identity_max_residual,
        "norm_limits": list(report.norm_limits) if report.norm_limits else None,
        "moment_table": [
            {"gamma": g, "m_gamma": m, "bound": b, "ok": bool(ok)}
            for g, m, b, ok in report.moment_table
        ] if report.moment_table else None,
        "exp_upper_rate": report.exp_upper_rate,
        "exp_lower_rate": report.exp_lower_rate,
        "sqrt_bound": report.sqrt_bound,
        "details": report.details,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_calI_csv(phi: GridMeasure, radii, path, rho: float = 2.0) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["r", "calI"])
        for r in radii:
            out.writerow([f"{float(r):.17g}", f"{cal_I(phi, float(r), rho=rho):.17g}"])


def write_intervals_csv(phi_2: GridMeasure, R_list, path) -> None:
    vals = interval_integrals(phi_2, R_list)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["R", "I_R"])
        for R, val in zip(R_list, vals):
            out.writerow([f"{float(R):.17g}", f"{float(val):.17g}"])


def write_moments_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["gamma", "m_gamma", "bound"])
        for g, m, b, _ok in rows:
            out.writerow([f"{g:.17g}", f"{m:.17g}", f"{b:.17g}"])
