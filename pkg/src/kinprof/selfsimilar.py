"""Time-dependent weak solutions carried by a stationary profile.

The family pairs a point mass at the origin with a spreading bulk: the
profile rides the dilation x -> x/(t+t0)^{1/rho} while its amplitude
decays like 1/(t+t0), and the mass the bulk sheds is exactly what the
origin absorbs. Nothing here assumes the pairing works; the residual
evaluator integrates the weak identity over a time window and reports
how far it is from holding.

Evaluation returns the bulk on the dilated image of the profile's grid
rather than resampling onto the original nodes. On the image grid the
trapezoid mass of the bulk is the profile's own mass times the exact
scalar factor, so total mass is conserved to rounding; resampling would
trade that identity for an interpolation error.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from ._reduce import tree_sum
from .errors import DomainError, ParameterError
from .measures import GridMeasure, GridSpec, quadrature
from .profiles import ProfileSolution, TestFunction, _log_bump


@dataclass(frozen=True)
class TimeTestFunction:
    """Test function phi(s, x), C^1 in both arguments.

    f(s, x) and df_dx(s, x) take a scalar time and an array of
    positions; df_ds is the time derivative at frozen x.
    """

    name: str
    f: object
    df_dx: object
    df_ds: object


def frozen(tf: TestFunction) -> TimeTestFunction:
    """Lift a static test function to a constant-in-time one."""
    return TimeTestFunction(
        name=tf.name,
        f=lambda s, x, _tf=tf: np.asarray(_tf.f(x)),
        df_dx=lambda s, x, _tf=tf: np.asarray(_tf.df(x)),
        df_ds=lambda s, x, _tf=tf: np.zeros_like(np.asarray(x, dtype=np.float64)),
    )


def linear_in_time(tf: TestFunction, slope: float = 0.5) -> TimeTestFunction:
    """phi(s, x) = (1 + slope*s) * tf(x)."""
    return TimeTestFunction(
        name=f"{tf.name}*(1+{slope:g}t)",
        f=lambda s, x, _tf=tf: (1.0 + slope * s) * np.asarray(_tf.f(x)),
        df_dx=lambda s, x, _tf=tf: (1.0 + slope * s) * np.asarray(_tf.df(x)),
        df_ds=lambda s, x, _tf=tf: slope * np.asarray(_tf.f(x)),
    )


def selfsimilar_battery(grid: GridSpec) -> list:
    """5 frozen bumps with supports inside [10*x_min, x_max/10]."""
    lo = math.log(10.0 * grid.x_min)
    hi = math.log(grid.x_max / 10.0)
    half_width = 1.2 * (hi - lo) / 6.0
    centers = np.exp(np.linspace(lo + half_width, hi - half_width, 5))
    return [frozen(_log_bump(float(c), half_width)) for c in centers]


@dataclass(frozen=True)
class WeakSolutionFamily:
    profile: ProfileSolution
    M: float
    t0: float

    def __post_init__(self) -> None:
        if not self.t0 > 0.0:
            raise ParameterError(f"t0 must be positive, got {self.t0}")
        if self.M < 0.0:
            raise ParameterError(f"total mass must be nonnegative, got {self.M}")
        rho = self.profile.rho
        need = self.profile.phi.mass()
        have = self.M * self.t0 ** ((rho - 1.0) / rho)
        if have < need * (1.0 - 1e-12):
            raise DomainError(
                "condensate mass at t=0 would be negative: "
                f"M*t0^((rho-1)/rho) = {have:.6g} < profile mass {need:.6g}"
            )

    def minimal_M(self) -> float:
        """Smallest admissible M for this profile and t0."""
        rho = self.profile.rho
        return self.profile.phi.mass() / self.t0 ** ((rho - 1.0) / rho)


def evaluate_G(family: WeakSolutionFamily, t: float) -> GridMeasure:
    """The measure G(t): atom at the origin plus the dilated bulk."""
    if t < 0.0:
        raise ParameterError(f"t must be nonnegative, got {t}")
    rho = family.profile.rho
    phi = family.profile.phi
    tau = t + family.t0
    lam = tau ** (1.0 / rho)
    atom = family.M - phi.mass() * tau ** (-(rho - 1.0) / rho)
    # scaled(1/lam) multiplies the nodes by lam: node lam*z_i carries
    # density(z_i)/tau, which is the dilated bulk sampled exactly
    return GridMeasure(
        grid=phi.grid.scaled(1.0 / lam),
        density=phi.density / tau,
        atom_at_zero=max(atom, 0.0),
    )


def _collision_pairing(G: GridMeasure, f_at) -> float:
    """(1/2) * double integral of (G G / sqrt(xy)) * D2[phi](x, y).

    D2[phi](x, y) = phi(x+y) + phi(|x-y|) - 2 phi(x v y), symmetric, and
    zero whenever either argument is zero, so the atom drops out of
    every pairing and only the bulk density enters.
    """
    x = G.grid.nodes()
    w = G.grid.trap_weights()
    kern = G.density * w / np.sqrt(x)
    xs = x[:, None] + x[None, :]
    xd = np.abs(x[:, None] - x[None, :])
    xm = np.maximum(x[:, None], x[None, :])
    d2 = f_at(xs) + f_at(xd) - 2.0 * f_at(xm)
    return 0.5 * tree_sum((kern[:, None] * kern[None, :] * d2).ravel())


def weak_form_residual(
    family: WeakSolutionFamily,
    phi_test: TimeTestFunction,
    t_end: float,
    n_time: int = 33,
) -> float:
    """Defect of the integrated weak identity over [0, t_end].

    |<phi(t_end), G(t_end)> - <phi(0), G(0)>
      - int_0^t_end ( <d_s phi, G> + collision pairing ) ds|

    with the time integral by composite Simpson on an odd mesh of at
    least 33 points.
    """
    if t_end < 0.0:
        raise ParameterError(f"t_end must be nonnegative, got {t_end}")
    if t_end == 0.0:
        return 0.0
    n = max(int(n_time), 33)
    if n % 2 == 0:
        n += 1
    mesh = np.linspace(0.0, t_end, n)
    vals = np.empty(n)
    for i, s in enumerate(mesh):
        Gs = evaluate_G(family, float(s))
        a = quadrature(Gs, lambda xx, s=s: phi_test.df_ds(s, np.asarray(xx, dtype=np.float64)))
        c = _collision_pairing(Gs, lambda xx, s=s: np.asarray(phi_test.f(s, np.asarray(xx, dtype=np.float64))))
        vals[i] = a + c
    h = mesh[1] - mesh[0]
    simp = np.ones(n)
    simp[1:-1:2] = 4.0
    simp[2:-1:2] = 2.0
    integral = float(np.sum(simp * vals)) * h / 3.0
    G0 = evaluate_G(family, 0.0)
    G1 = evaluate_G(family, t_end)
    b0 = quadrature(G0, lambda xx: phi_test.f(0.0, np.asarray(xx, dtype=np.float64)))
    b1 = quadrature(G1, lambda xx: phi_test.f(t_end, np.asarray(xx, dtype=np.float64)))
    return abs(b1 - b0 - integral)


def residual_scale(
    family: WeakSolutionFamily, phi_test: TimeTestFunction, t_end: float, n_time: int = 33
) -> float:
    """Magnitude the residual is judged against: the largest pairing of
    the test function with G over the window plus the integrated size of
    the rate terms."""
    n = max(int(n_time), 33)
    mesh = np.linspace(0.0, max(t_end, 0.0), min(n, 9))
    best = 0.0
    rate = 0.0
    for s in mesh:
        Gs = evaluate_G(family, float(s))
        b = abs(quadrature(Gs, lambda xx, s=s: phi_test.f(s, np.asarray(xx, dtype=np.float64))))
        a = abs(quadrature(Gs, lambda xx, s=s: phi_test.df_ds(s, np.asarray(xx, dtype=np.float64))))
        c = abs(_collision_pairing(Gs, lambda xx, s=s: np.asarray(phi_test.f(s, np.asarray(xx, dtype=np.float64)))))
        best = max(best, b)
        rate = max(rate, a + c)
    return best + rate * t_end


def write_residual_report(rows: list, path) -> None:
    """CSV rows (test_id, t_end, residual, scale)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["test_id", "t_end", "residual", "scale"])
        for test_id, t_end, residual, scale in rows:
            out.writerow(
                [test_id, f"{t_end:.17g}", f"{residual:.17g}", f"{scale:.17g}"]
            )
