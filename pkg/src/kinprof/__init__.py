"""kinprof: self-similar profiles of a quadratic wave-kinetic equation.

Numerical construction and verification of the one-parameter family of
self-similar profiles of an isotropic quadratic kinetic equation, with a
symmetric stable-density engine, a regularized mollified evolution, two
independent stationary solvers, and a diagnostics suite that checks the
quantitative predictions (tail laws, flux identities, moment bounds) on
every computed profile.
"""

__version__ = "0.1.0"

from .measures import GridMeasure, GridSpec, quadrature, rho_norm

__all__ = ["GridMeasure", "GridSpec", "quadrature", "rho_norm", "__version__"]


def __getattr__(name):
    # the heavy modules stay unimported until first touched, so the
    # measure primitives remain importable in a few milliseconds
    import importlib

    for mod in ("profiles", "diagnostics", "evolution", "selfsimilar", "stable"):
        module = importlib.import_module(f".{mod}", __name__)
        if name == mod:
            return module
        if hasattr(module, name):
            return getattr(module, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
