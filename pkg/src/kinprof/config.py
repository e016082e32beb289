"""Run configuration: flat `section.key = value` text files.

One deliberately rigid rule: every key must be registered below. A
misspelled tolerance key must fail the run, never silently fall back to
a default. Values stay strings until a typed getter is asked for them,
so the registry doubles as the complete inventory of accepted keys.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ParameterError

__all__ = ["RunConfig", "parse_config", "load_config", "KNOWN_KEYS"]

# key -> short description (the help text is the registry)
KNOWN_KEYS: dict[str, str] = {
    "run.format_version": "output format tag written into every manifest",
    "run.seed": "reserved; runs are deterministic",
    "grid.x_min": "left end of the log grid",
    "grid.x_max": "right end of the log grid",
    "grid.n_points": "number of grid nodes",
    "stable.alphas": "comma list of stable orders in (0,2)",
    "stable.z_max": "right end of the tabulated window",
    "stable.n_points": "table resolution",
    "evolve.rho": "self-similar exponent in (1,2)",
    "evolve.epsilon": "kernel regularization",
    "evolve.a": "mollifier width, < epsilon/2",
    "evolve.dt": "macro-step, or `auto` for the contraction cap",
    "evolve.steps": "number of macro-steps",
    "evolve.snapshot_every": "state snapshot interval in steps, 0 = none",
    "evolve.r0": "scale for the lower-bound margin report",
    "profile.rho": "self-similar exponent in (1,2]",
    "profile.method": "direct | relax | both",
    "profile.with_family": "also build and check the weak solution family",
    "solver.damping": "blend weight of the damped iteration",
    "solver.max_iter": "iteration cap for the damped iteration",
    "solver.tol": "sup-relative change declaring the iteration converged",
    "solver.ladder": "comma list of coarse resolutions for the stationary solve",
    "solver.fine_target": "defect target of the lagged-Jacobian polish",
    "solver.norm_weight": "weight of the normalization row in the solve",
    "relax.epsilons": "comma list, decreasing",
    "relax.a_values": "comma list, same length, each < epsilon/2",
    "relax.dt_factor": "fraction of the contraction horizon used as dt",
    "relax.max_steps": "step cap per continuation stage",
    "relax.stage_tol": "stationarity residual ending a stage",
    "diagnostics.fit_lo": "tail fit window start, 0 = auto",
    "diagnostics.fit_hi": "tail fit window end, 0 = auto",
    "diagnostics.flux_radii": "number of flux-identity radii",
    "bands.residual_strong": "acceptance band for the strong residual",
    "bands.residual_weak": "acceptance band for the weak residual",
    "bands.tail_exponent_frac": "relative error band for the tail exponent",
    "bands.tail_ratio_lo": "lower edge of the tail constant ratio band",
    "bands.tail_ratio_hi": "upper edge of the tail constant ratio band",
    "bands.flux_pointwise": "band for the pointwise flux identity residual",
    "bands.flux_integrated": "band for the integrated flux identity mismatch",
    "bands.limits_frac": "band for the norm limit estimates",
    "bands.r2_pointwise": "minimum r-squared of the log-linear tail fit",
    "bands.r2_interval": "minimum r-squared of the interval-integral fit",
    "bands.interval_rate_frac": "band for interval vs pointwise rate",
}

_TRUE = {"true", "yes", "1", "on"}
_FALSE = {"false", "no", "0", "off"}


@dataclass
class RunConfig:
    """Parsed key-value store with typed access.

    Reads record which keys were consumed so a command can flag values
    that cannot take effect (a `stable.*` key in an evolve run is legal
    in a shared file, but asking for strictness is cheap).
    """

    values: dict[str, str] = field(default_factory=dict)
    source: str = "<memory>"

    def has(self, key: str) -> bool:
        return key in self.values

    def _raw(self, key: str, default):
        if key not in KNOWN_KEYS:
            raise ParameterError(f"unregistered config key requested: {key}")
        if key in self.values:
            return self.values[key]
        if default is None:
            raise ParameterError(f"missing required config key {key}")
        return default

    def get_str(self, key: str, default: str | None = None) -> str:
        return str(self._raw(key, default))

    def get_float(self, key: str, default: float | None = None) -> float:
        raw = self._raw(key, default)
        try:
            return float(raw)
        except (TypeError, ValueError):
            raise ParameterError(f"config key {key}: expected a number, got {raw!r}")

    def get_int(self, key: str, default: int | None = None) -> int:
        raw = self._raw(key, default)
        try:
            return int(str(raw))
        except (TypeError, ValueError):
            raise ParameterError(f"config key {key}: expected an integer, got {raw!r}")

    def get_bool(self, key: str, default: bool | None = None) -> bool:
        raw = self._raw(key, default)
        if isinstance(raw, bool):
            return raw
        low = str(raw).strip().lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ParameterError(f"config key {key}: expected a boolean, got {raw!r}")

    def get_floats(self, key: str, default: list | None = None) -> list:
        raw = self._raw(key, default)
        if isinstance(raw, list):
            return list(raw)
        parts = [p.strip() for p in str(raw).split(",") if p.strip()]
        try:
            return [float(p) for p in parts]
        except ValueError:
            raise ParameterError(f"config key {key}: expected comma-separated numbers, got {raw!r}")

    def get_ints(self, key: str, default: list | None = None) -> list:
        return [int(v) for v in self.get_floats(key, default)]


def parse_config(text: str, source: str = "<memory>") -> RunConfig:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ParameterError(
                f"{source}:{lineno}: expected `section.key = value`, got {line!r}"
            )
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in KNOWN_KEYS:
            raise ParameterError(f"{source}:{lineno}: unknown config key {key!r}")
        if key in values:
            raise ParameterError(f"{source}:{lineno}: duplicate config key {key!r}")
        values[key] = value
    return RunConfig(values=values, source=source)


def load_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read(), source=path)
