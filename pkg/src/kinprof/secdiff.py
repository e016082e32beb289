"""Second-difference operators underlying the collision kernels.

delta2 is the plain three-point second difference. D2 is its kinetic
variant on [0, infinity)^2,

    D2[phi](x, y) = phi(x+y) + phi(|x-y|) - 2 phi(x v y),

which vanishes on phi(z) = z; that cancellation is the energy-conservation
mechanism of the collision operator. D2star applies D2 to z*theta(z), and
for the capped weight theta_R(z) = 1 ^ R/z it collapses to the closed form

    D2star[theta_R](x, y) = -[(x+y-R)_+ ^ (R-|x-y|)_+],

which is nonpositive; that sign is what makes the scale-weighted norm a
Lyapunov functional of the evolution. delta2_kernel_identity_check
verifies the representation of delta2 as an integral of f'' against the
tent kernel (|y| - |w-x|)_+, which is the identity the regularity
estimates run on.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import quad

_TINY = 1e-300


def delta2(f, x: float, y: float) -> float:
    """f(x+y) + f(x-y) - 2 f(x)."""
    return f(x + y) + f(x - y) - 2.0 * f(x)


def D2(phi, x: float, y: float) -> float:
    """phi(x+y) + phi(|x-y|) - 2 phi(max(x, y)); symmetric in (x, y)."""
    d = abs(x - y)
    if d < _TINY:
        d = 0.0
    return phi(x + y) + phi(d) - 2.0 * phi(max(x, y))


def D2star(theta, x: float, y: float) -> float:
    """D2 applied to z -> z*theta(z). The z=0 factor kills the |x-y| term
    when the arguments coincide, so theta never gets evaluated at 0."""
    s = x + y
    d = abs(x - y)
    m = max(x, y)
    out = s * theta(s) - 2.0 * (m * theta(m) if m > 0.0 else 0.0)
    if d >= _TINY:
        out += d * theta(d)
    return out


def D2star_capped_closed_form(R: float, x, y):
    """-[(x+y-R)_+ ^ (R-|x-y|)_+] for theta_R(z) = 1 ^ R/z. Vectorized."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    a = np.maximum(x + y - R, 0.0)
    b = np.maximum(R - np.abs(x - y), 0.0)
    return -np.minimum(a, b)


def delta2_kernel_identity_check(f, d2f, x: float, y: float) -> float:
    """|delta2(f) - integral of (|y| - |w-x|)_+ * f''(w) dw|.

    The kernel is a tent of half-width |y| centered at x; the integral is
    done adaptively with the apex as an interior break. Doubles as a check
    of the differentiated identity, d/dy delta2 = integral of f'' over
    (x-y, x+y), since both follow from the same representation.
    """
    ay = abs(y)
    lhs = delta2(f, x, ay)
    if ay == 0.0:
        return abs(lhs)
    kern = lambda w: max(ay - abs(w - x), 0.0) * d2f(w)
    left, _ = quad(kern, x - ay, x, limit=200)
    right, _ = quad(kern, x, x + ay, limit=200)
    return abs(lhs - (left + right))
