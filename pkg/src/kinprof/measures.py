"""Nonnegative measures on [0, infinity) and their functionals.

A measure is stored as an optional point mass at zero plus a density
sampled on a logarithmic grid; quadrature is trapezoidal in log
coordinates. The scale-weighted norm

    |mu|_rho = sup_R R^(rho-2) * integral of (1 ^ R/x) dmu

is evaluated on a finite grid of R-candidates, four per decade, spanning
one decade beyond the measure's support on each side. For rho = 2 the
weight is eventually 1 on the whole support and the norm reduces to the
total mass. Measures with rho < 2 must not carry an atom: the finiteness
of |mu|_rho forces mu({0}) = 0.

Densities with integrable singularities at the origin (x^(-1/2) and the
like) are handled by grid refinement, not by endpoint rules; the tests
quantify the quadrature error. Everything here is pure and deterministic:
sums go through the fixed pairwise tree in _reduce.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from ._reduce import tree_sum
from .errors import DomainError, EvaluationError, FormatError, ParameterError

__all__ = [
    "GridSpec",
    "GridMeasure",
    "RhoNormResult",
    "r_candidates",
    "quadrature",
    "rho_norm",
    "lambda_lower_bound_margin",
    "moment",
    "rescale",
    "write_measure_csv",
    "read_measure_csv",
]


@dataclass(frozen=True)
class GridSpec:
    """Logarithmic grid on [x_min, x_max] with n_points nodes.

    Node i sits at x_min * (x_max/x_min)**(i/(n_points-1)).
    """

    x_min: float
    x_max: float
    n_points: int
    spacing: str = "logarithmic"

    def __post_init__(self):
        if not (self.x_min > 0.0 and self.x_max > 0.0):
            raise ParameterError("grid endpoints must be positive")
        if not self.x_min < self.x_max:
            raise ParameterError("x_min must be below x_max")
        if self.n_points < 16:
            raise ParameterError("need at least 16 grid points")
        if self.spacing != "logarithmic":
            raise ParameterError("only logarithmic spacing is supported")

    def nodes(self) -> NDArray[np.float64]:
        i = np.arange(self.n_points, dtype=np.float64)
        return self.x_min * (self.x_max / self.x_min) ** (i / (self.n_points - 1))

    @property
    def log_step(self) -> float:
        return math.log(self.x_max / self.x_min) / (self.n_points - 1)

    def trap_weights(self) -> NDArray[np.float64]:
        """Weights w with  integral f dx  ~=  sum w_i f(x_i)  (trapezoid in log x)."""
        h = self.log_step
        w = np.full(self.n_points, h)
        w[0] = w[-1] = 0.5 * h
        return w * self.nodes()

    def scaled(self, c: float) -> "GridSpec":
        return GridSpec(self.x_min / c, self.x_max / c, self.n_points, self.spacing)


@dataclass(frozen=True)
class GridMeasure:
    """Density on a GridSpec plus a point mass at the origin."""

    grid: GridSpec
    density: NDArray[np.float64] = field(repr=False)
    atom_at_zero: float = 0.0

    def __post_init__(self):
        d = np.ascontiguousarray(self.density, dtype=np.float64)
        if d.shape != (self.grid.n_points,):
            raise ParameterError("density length must match the grid")
        if not np.all(np.isfinite(d)):
            raise ParameterError("density must be finite")
        if np.any(d < 0.0):
            raise ParameterError("density must be nonnegative")
        if not (self.atom_at_zero >= 0.0 and math.isfinite(self.atom_at_zero)):
            raise ParameterError("atom_at_zero must be finite and nonnegative")
        object.__setattr__(self, "density", d)

    @classmethod
    def zero(cls, grid: GridSpec) -> "GridMeasure":
        return cls(grid, np.zeros(grid.n_points), 0.0)

    @classmethod
    def from_function(cls, grid: GridSpec, f, atom_at_zero: float = 0.0) -> "GridMeasure":
        return cls(grid, np.asarray(f(grid.nodes()), dtype=np.float64), atom_at_zero)

    def mass(self) -> float:
        return self.atom_at_zero + tree_sum(self.grid.trap_weights() * self.density)

    def with_density(self, d: NDArray[np.float64]) -> "GridMeasure":
        return GridMeasure(self.grid, d, self.atom_at_zero)


@dataclass(frozen=True)
class RhoNormResult:
    value: float
    argmax_R: float


def r_candidates(grid: GridSpec, pad_decades: float = 1.0, per_decade: int = 4) -> NDArray[np.float64]:
    """Log grid of R-candidates spanning pad_decades beyond the support each way.

    Built multiplicatively from the grid endpoints so that rescaling the
    grid by c rescales the candidate set by exactly 1/c, which keeps the
    scaling covariance of the norm exact on the discrete level.
    """
    lo = math.log10(grid.x_min) - pad_decades
    hi = math.log10(grid.x_max) + pad_decades
    n = int(round((hi - lo) * per_decade)) + 1
    return np.power(10.0, lo + (hi - lo) * np.arange(n) / (n - 1))


def quadrature(mu: GridMeasure, weight) -> float:
    """Integral of the weight against mu.

    weight is a scalar function evaluated at the grid nodes (vectorized
    call first, scalar fallback); a non-finite value is an error naming
    the offending node. The atom contributes atom * weight(0).
    """
    x = mu.grid.nodes()
    try:
        wv = np.asarray(weight(x), dtype=np.float64)
        if wv.shape != x.shape:
            raise TypeError
    except Exception:
        wv = np.array([float(weight(xi)) for xi in x])
    bad = ~np.isfinite(wv)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise EvaluationError(f"weight is not finite at node {i} (x = {x[i]:g})")
    total = tree_sum(mu.grid.trap_weights() * mu.density * wv)
    if mu.atom_at_zero > 0.0:
        w0 = float(weight(0.0))
        if not math.isfinite(w0):
            raise EvaluationError("weight is not finite at x = 0 where the atom sits")
        total += mu.atom_at_zero * w0
    return total


def _check_rho(rho: float, allow_two: bool = True) -> None:
    hi_ok = (rho <= 2.0) if allow_two else (rho < 2.0)
    if not (1.0 < rho and hi_ok):
        rng = "(1, 2]" if allow_two else "(1, 2)"
        raise ParameterError(f"rho must lie in {rng}, got {rho}")


def _capped_weight_sums(mu: GridMeasure, R: NDArray[np.float64]) -> NDArray[np.float64]:
    """integral of (1 ^ R/x) dmu for each candidate R (density part plus atom)."""
    x = mu.grid.nodes()
    base = mu.grid.trap_weights() * mu.density
    out = np.empty(R.size)
    for k in range(R.size):
        out[k] = tree_sum(base * np.minimum(1.0, R[k] / x))
    return out + mu.atom_at_zero


def rho_norm(mu: GridMeasure, rho: float) -> RhoNormResult:
    """sup_R R^(rho-2) * integral (1 ^ R/x) dmu over the candidate grid.

    For rho = 2 this is the total mass once R clears the support, so the
    result agrees with mass() to roundoff. For rho < 2 an atom at zero
    would make the supremum infinite; that input is rejected.
    """
    _check_rho(rho)
    if rho < 2.0 and mu.atom_at_zero > 0.0:
        raise DomainError("a measure with an atom at 0 has infinite rho-norm for rho < 2")
    R = r_candidates(mu.grid)
    vals = R ** (rho - 2.0) * _capped_weight_sums(mu, R)
    k = int(np.argmax(vals))
    return RhoNormResult(value=float(vals[k]), argmax_R=float(R[k]))


def lambda_profile(rho: float, x: NDArray[np.float64]) -> NDArray[np.float64]:
    """The lower-bound shape (1 - |x|^(-(2-rho)/2))_+ ."""
    with np.errstate(divide="ignore"):
        return np.maximum(0.0, 1.0 - np.abs(x) ** (-(2.0 - rho) / 2.0))


def lambda_lower_bound_margin(mu: GridMeasure, rho: float, R0: float) -> float:
    """Worst-case slack of the lower-bound constraint at grid resolution.

    Returns min over R-candidates of
        integral (1 ^ R/x) dmu  -  R^(2-rho) * lambda(R/R0).
    A nonnegative value certifies the constraint on the candidate set.
    Candidates are restricted to the measure's support [x_min, x_max]:
    a truncated representation cannot honor the bound for R beyond the
    support, where the missing tail would carry it, so candidates out
    there would report a vacuous failure.
    """
    _check_rho(rho, allow_two=False)
    if not R0 > 0.0:
        raise ParameterError("R0 must be positive")
    R_all = r_candidates(mu.grid)
    R = R_all[(R_all >= mu.grid.x_min) & (R_all <= mu.grid.x_max)]
    lhs = _capped_weight_sums(mu, R)
    rhs = R ** (2.0 - rho) * lambda_profile(rho, R / R0)
    return float(np.min(lhs - rhs))


def moment(mu: GridMeasure, gamma: float, r_cut: float = math.inf,
           include_atom: bool = False) -> float:
    """integral of x^gamma dmu over (0, r_cut).

    The open interval excludes the atom; with include_atom=True and
    gamma = 0 the atom is counted as well. A partial last cell is closed
    by linear interpolation of the integrand.
    """
    if gamma < 0.0:
        raise ParameterError("gamma must be nonnegative")
    x = mu.grid.nodes()
    g = x ** gamma * mu.density
    if r_cut >= mu.grid.x_max:
        val = tree_sum(mu.grid.trap_weights() * np.where(x <= r_cut, 1.0, 0.0) * g)
    elif r_cut < mu.grid.x_min:
        val = 0.0
    else:
        k = int(np.searchsorted(x, r_cut, side="right")) - 1
        h = mu.grid.log_step
        w = np.full(k + 1, h)
        w[0] = 0.5 * h
        if k >= 1:
            w[k] = 0.5 * h
        val = tree_sum(w * x[: k + 1] * g[: k + 1])
        if k + 1 < x.size and r_cut > x[k]:
            t = (r_cut - x[k]) / (x[k + 1] - x[k])
            g_cut = g[k] + t * (g[k + 1] - g[k])
            val += 0.5 * (g[k] + g_cut) * (r_cut - x[k])
    if include_atom and gamma == 0.0:
        val += mu.atom_at_zero
    return val


def rescale(mu: GridMeasure, c: float) -> GridMeasure:
    """The measure with density x -> density(c x), carried on the grid
    scaled by 1/c. Node values are reused verbatim; only the grid moves,
    so rescale(rescale(mu, c), 1/c) is exact.
    """
    if not c > 0.0:
        raise ParameterError("scale factor must be positive")
    return GridMeasure(mu.grid.scaled(c), mu.density.copy(), mu.atom_at_zero)


# -- serialization ----------------------------------------------------------

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_measure_csv(mu: GridMeasure, path) -> None:
    lines = []
    if mu.atom_at_zero > 0.0:
        lines.append(f"# atom_at_zero={_fmt(mu.atom_at_zero)}")
    lines.append("x,density")
    x = mu.grid.nodes()
    for xi, di in zip(x, mu.density):
        lines.append(f"{_fmt(xi)},{_fmt(di)}")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def read_measure_csv(path) -> GridMeasure:
    atom = 0.0
    xs: list[float] = []
    ds: list[float] = []
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise FormatError(f"cannot read {path}: {e}") from e
    header_seen = False
    for ln in lines:
        if not ln.strip():
            continue
        if ln.startswith("#"):
            body = ln[1:].strip()
            if body.startswith("atom_at_zero="):
                try:
                    atom = float(body.split("=", 1)[1])
                except ValueError as e:
                    raise FormatError(f"bad atom_at_zero line in {path}") from e
            continue
        if not header_seen:
            if ln.strip() != "x,density":
                raise FormatError(f"{path}: expected header 'x,density', got {ln!r}")
            header_seen = True
            continue
        parts = ln.split(",")
        if len(parts) != 2:
            raise FormatError(f"{path}: malformed row {ln!r}")
        try:
            xs.append(float(parts[0]))
            ds.append(float(parts[1]))
        except ValueError as e:
            raise FormatError(f"{path}: non-numeric row {ln!r}") from e
    if not header_seen or len(xs) < 16:
        raise FormatError(f"{path}: not a measure file (need header and >= 16 rows)")
    x = np.array(xs)
    if np.any(np.diff(x) <= 0.0):
        raise FormatError(f"{path}: x column must be strictly increasing")
    grid = GridSpec(x_min=x[0], x_max=x[-1], n_points=x.size)
    rel = np.abs(grid.nodes() - x) / x
    if np.max(rel) > 1e-9:
        raise FormatError(f"{path}: x column is not a logarithmic grid")
    try:
        return GridMeasure(grid, np.array(ds), atom)
    except ParameterError as e:
        raise FormatError(f"{path}: {e}") from e
