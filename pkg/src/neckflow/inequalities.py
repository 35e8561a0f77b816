"""Classical vector inequalities for the p-Laplace flux map xi -> |xi|^(p-2) xi.

These are the two estimates the package uses as randomized property-test
oracles:

  * monotonicity of the flux map,
        <|a|^(p-2) a - |b|^(p-2) b, a - b>
            >= (p-1) * 2^((p-2)/2) * (|a|^2+|b|^2)^((p-2)/2) |a-b|^2   (1<p<2)
            >= (1/2) * (|a|^(p-2)+|b|^(p-2)) |a-b|^2                   (p>=2)

  * two-sided comparison of the general power map, for sigma > -1,
        c_lo(sigma) <= ||a|^s a - |b|^s b| / (|a-b| (|a|^2+|b|^2)^(s/2))
                    <= c_hi(sigma).

All checks return margins; callers decide how much rounding slack to allow.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError


def power_ratio_bounds(sigma: float) -> tuple:
    """The constants (c_lo, c_hi) framing the power-map difference ratio."""
    if sigma <= -1.0:
        raise ParameterError("sigma must be > -1")
    if sigma <= 0.0:
        lo = 1.0 + sigma
    else:
        lo = 5.0 ** (-(1.0 + sigma / 2.0))
    if sigma < 0.0:
        hi = max(2.0, 10.0 ** (abs(sigma) / 2.0))
    else:
        hi = (1.0 + sigma) * 2.0 ** (sigma / 2.0)
    return lo, hi


def power_difference_ratio(xi1: np.ndarray, xi2: np.ndarray, sigma: float) -> np.ndarray:
    """Ratio ||a|^s a - |b|^s b| / (|a-b| (|a|^2+|b|^2)^(s/2)), rowwise.

    xi1, xi2: arrays of shape (n, dim) with xi1 != xi2 rowwise.
    """
    if sigma <= -1.0:
        raise ParameterError("sigma must be > -1")
    a = np.asarray(xi1, dtype=float)
    b = np.asarray(xi2, dtype=float)
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    num = np.linalg.norm(na[..., None] ** sigma * a - nb[..., None] ** sigma * b, axis=-1)
    den = np.linalg.norm(a - b, axis=-1) * (na**2 + nb**2) ** (sigma / 2.0)
    return num / den


def monotonicity_pair(xi1: np.ndarray, xi2: np.ndarray, p: float) -> tuple:
    """(lhs, rhs) of the flux-map monotonicity inequality, rowwise.

    lhs = <|a|^(p-2) a - |b|^(p-2) b, a - b>; rhs is the p-dependent lower
    bound, so the inequality holds iff lhs >= rhs.
    """
    if p <= 1.0:
        raise ParameterError("p must be > 1")
    a = np.asarray(xi1, dtype=float)
    b = np.asarray(xi2, dtype=float)
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    diff = a - b
    nd2 = np.sum(diff * diff, axis=-1)
    lhs = np.sum((na[..., None] ** (p - 2.0) * a - nb[..., None] ** (p - 2.0) * b) * diff, axis=-1)
    if p < 2.0:
        rhs = (p - 1.0) / 2.0 ** ((2.0 - p) / 2.0) * (na**2 + nb**2) ** ((p - 2.0) / 2.0) * nd2
    else:
        rhs = 0.5 * (na ** (p - 2.0) + nb ** (p - 2.0)) * nd2
    return lhs, rhs
