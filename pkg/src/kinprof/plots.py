"""Figure rendering for the report paths.

Figures are auxiliary artifacts: every number they show is also written
to a delimited file, and byte-level determinism is promised only for
those. Rendering goes through the Agg backend so report runs work
headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .measures import GridMeasure

__all__ = [
    "save_profile_figure",
    "save_trajectory_figure",
    "save_stable_figure",
]

_LINE = "#35618f"
_ACCENT = "#b3482b"
_BAND = "#c9d7e8"


def save_profile_figure(path: str, phi: GridMeasure, rho: float,
                        fit=None, window=None) -> None:
    """Two-panel summary: the density on log-log axes with the fitted
    tail law, and the compensated tail ratio against its tolerance band.
    For rho = 2 the second panel shows the exponential decay line
    instead, since there is no power tail to compensate.

    fit carries only the decay rate, so the drawn line is anchored
    through the density at the window midpoint."""
    x = phi.grid.nodes()
    d = phi.density
    fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(6.0, 6.4), constrained_layout=True)

    pos = d > 0.0
    ax0.loglog(x[pos], d[pos], color=_LINE, lw=1.4, label="density")
    if fit is not None and window is not None and rho < 2.0:
        mid = float(np.sqrt(window[0] * window[1]))
        anchor = float(np.interp(np.log(mid), np.log(x[pos]), d[pos]))
        xf = np.geomspace(window[0], window[1], 64)
        ax0.loglog(xf, anchor * (xf / mid) ** (-fit.rate), "--",
                   color=_ACCENT, lw=1.1, label=f"fit slope {-fit.rate:.3f}")
        ax0.axvspan(window[0], window[1], color=_BAND, alpha=0.4, lw=0)
    ax0.set_xlabel("r")
    ax0.set_ylabel("profile density")
    ax0.legend(frameon=False, fontsize=9)
    ax0.grid(alpha=0.3, which="both")

    if rho < 2.0:
        const = (2.0 - rho) * (rho - 1.0)
        ratio = d * x**rho / const
        ax1.semilogx(x, ratio, color=_LINE, lw=1.4)
        ax1.axhline(1.0, color="0.4", lw=0.8)
        ax1.axhspan(0.85, 1.15, color=_BAND, alpha=0.4, lw=0)
        ax1.set_ylabel("tail ratio  r^rho phi / ((2-rho)(rho-1))")
        ax1.set_ylim(0.0, 2.0)
    else:
        with np.errstate(divide="ignore"):
            line = np.where(d > 0.0, np.log(d) + 0.5 * np.log(x), np.nan)
        ax1.plot(x, line, color=_LINE, lw=1.4)
        if fit is not None and window is not None:
            mid = 0.5 * (window[0] + window[1])
            anchor = float(np.interp(mid, x, np.nan_to_num(line)))
            ax1.plot(x, anchor - fit.rate * (x - mid), "--",
                     color=_ACCENT, lw=1.1, label=f"rate {fit.rate:.3f}")
            ax1.legend(frameon=False, fontsize=9)
        ax1.set_ylabel("log phi + (1/2) log r")
    ax1.set_xlabel("r")
    ax1.grid(alpha=0.3, which="both")

    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_trajectory_figure(path: str, rows: np.ndarray) -> None:
    """Trajectory of the evolution: the contraction norm and the lower
    bound margin on one panel, relative mass drift on the other.

    rows: array with columns t, rho_norm, lower_bound_margin, mass."""
    t = rows[:, 0]
    fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(6.0, 5.6), sharex=True,
                                   constrained_layout=True)
    ax0.plot(t, rows[:, 1], color=_LINE, lw=1.4, label="contraction norm")
    ax0.set_ylabel("norm")
    ax0b = ax0.twinx()
    ax0b.plot(t, rows[:, 2], color=_ACCENT, lw=1.1, label="lower bound margin")
    ax0b.axhline(0.0, color=_ACCENT, lw=0.6, ls=":")
    ax0b.set_ylabel("margin", color=_ACCENT)
    ax0.grid(alpha=0.3)
    lines = ax0.get_lines() + ax0b.get_lines()[:1]
    ax0.legend(lines, [ln.get_label() for ln in lines], frameon=False, fontsize=9)

    m0 = rows[0, 3] if rows[0, 3] != 0.0 else 1.0
    ax1.plot(t, rows[:, 3] / m0 - 1.0, color=_LINE, lw=1.4)
    ax1.set_xlabel("t")
    ax1.set_ylabel("relative mass drift")
    ax1.grid(alpha=0.3)

    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_stable_figure(path: str, curves: dict) -> None:
    """curves: alpha -> (z, v) arrays, drawn on a shared log scale so
    the heavier tails fan out to the right."""
    fig, ax = plt.subplots(figsize=(6.0, 4.2), constrained_layout=True)
    for i, alpha in enumerate(sorted(curves)):
        z, v = curves[alpha]
        pos = v > 0.0
        ax.semilogy(z[pos], v[pos], lw=1.4,
                    color=plt.cm.viridis(0.15 + 0.7 * i / max(1, len(curves) - 1)),
                    label=f"alpha = {alpha:g}")
    ax.set_xlabel("z")
    ax.set_ylabel("density")
    ax.legend(frameon=False, fontsize=9)
    ax.grid(alpha=0.3, which="both")
    fig.savefig(path, dpi=150)
    plt.close(fig)
