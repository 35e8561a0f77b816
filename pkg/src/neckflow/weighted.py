"""Weighted reduction for higher-dimensional rates (d = 3, p = 2).

The thin-gap problem in d = 3 reduces to a weighted planar equation

    div( a(x') |x'|^2 grad v ) = 0        on the unit disk,

with a bounded weight kappa^-1 <= a <= kappa whose trace on the unit
circle is orthogonal to both coordinate functions.  The local behavior of
v at the origin is v(0) + O(|x'|^alpha) where

    alpha = ( -(d-1) + sqrt((d-1)^2 + 4*lambda1) ) / 2

and lambda1 is the first nonzero eigenvalue of the weighted operator
-(a u')' = lambda a u on the circle (lambda1 = d-2 for constant weights).
alpha in turn predicts the gradient blow-up exponent in dimension d, so
this module provides: the weight validity check, the circle eigensolver,
the alpha formula, and a polar-grid solve of the disk equation that
measures the decay slope directly.

The circle discretization is a conservative flux-gradient scheme,
A = h G^T diag(a_faces) G with a fourth-order face-gradient stencil G, so
the constant-weight eigenvalue is resolved to ~1e-10 at n = 512; the
generalized problem uses the weight itself as the mass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NumericError, ParameterError, WeightError

_ORTHO_TOL = 1e-10
_ZERO_EV_TOL = 1e-8


@dataclass(frozen=True)
class WeightFunction:
    """Angular weight a(theta) with its uniform bound kappa and the
    bookkeeping sup bound M for disk solutions."""

    a: Callable[[np.ndarray], np.ndarray]
    kappa: float
    M: float = 1.0
    descriptor: str = ""

    def __post_init__(self):
        if self.kappa < 1.0:
            raise ParameterError("kappa must be >= 1 (bounds kappa^-1 <= a <= kappa)")

    @staticmethod
    def constant(c: float = 1.0) -> "WeightFunction":
        if c <= 0.0:
            raise ParameterError("constant weight must be positive")
        kappa = max(c, 1.0 / c)
        return WeightFunction(a=lambda t: np.full_like(np.asarray(t, dtype=float), c),
                              kappa=kappa, descriptor=f"constant {c}")

    @staticmethod
    def cosine(amplitude: float, harmonic: int = 2) -> "WeightFunction":
        """a(theta) = 1 + amplitude * cos(harmonic * theta)."""
        if not (abs(amplitude) < 1.0):
            raise ParameterError("|amplitude| must be < 1 to keep the weight positive")
        kappa = 1.0 / (1.0 - abs(amplitude))
        return WeightFunction(
            a=lambda t: 1.0 + amplitude * np.cos(harmonic * np.asarray(t, dtype=float)),
            kappa=kappa,
            descriptor=f"1 + {amplitude}*cos({harmonic} theta)",
        )


def check_weight(w: WeightFunction, quad_n: int = 256) -> dict:
    """Verify the bounds and the circle orthogonality by quadrature.

    Trapezoidal quadrature on the periodic circle is spectrally accurate,
    so the absolute tolerance 1e-10 on the first-harmonic integrals only
    fails genuinely non-orthogonal weights.
    """
    if quad_n < 64:
        raise ParameterError("quad_n must be >= 64")
    theta = 2.0 * math.pi * np.arange(quad_n) / quad_n
    av = np.asarray(w.a(theta), dtype=float)
    h = 2.0 * math.pi / quad_n
    int_cos = float(np.sum(av * np.cos(theta)) * h)
    int_sin = float(np.sum(av * np.sin(theta)) * h)
    amin, amax = float(av.min()), float(av.max())
    report = {
        "amin": amin, "amax": amax,
        "int_a_cos": int_cos, "int_a_sin": int_sin,
        "kappa": w.kappa, "quad_n": quad_n,
    }
    if amin < 1.0 / w.kappa - 1e-12 or amax > w.kappa + 1e-12 or amin <= 0.0:
        raise WeightError(f"weight violates kappa bounds: {report}")
    if abs(int_cos) > _ORTHO_TOL or abs(int_sin) > _ORTHO_TOL:
        raise WeightError(f"weight not orthogonal to coordinates: {report}")
    report["valid"] = True
    return report


@dataclass(frozen=True)
class SphereEigenResult:
    """First nonzero eigenvalue of the weighted circle operator and the
    derived decay exponent; lambda0 is the (near-zero) constant-mode
    eigenvalue kept for diagnostics."""

    lambda1: float
    eigenvector: np.ndarray
    alpha: float
    lambda0: float
    n: int


def alpha_from_lambda(lambda1: float, d: int) -> float:
    """Decay exponent: the positive root of alpha^2 + (d-1) alpha = lambda1."""
    if lambda1 <= 0.0:
        raise ParameterError("lambda1 must be > 0")
    if d < 3:
        raise ParameterError("the reduction needs d >= 3")
    dm1 = float(d - 1)
    return 0.5 * (-dm1 + math.sqrt(dm1 * dm1 + 4.0 * lambda1))


def _face_gradient(n: int, h: float) -> sp.csr_matrix:
    """Fourth-order periodic midpoint gradient: nodes -> faces."""
    idx = np.arange(n)
    rows = np.concatenate([idx] * 4)
    cols = np.concatenate([(idx - 1) % n, idx, (idx + 1) % n, (idx + 2) % n])
    vals = np.concatenate([
        np.full(n, 1.0 / (24.0 * h)),
        np.full(n, -27.0 / (24.0 * h)),
        np.full(n, 27.0 / (24.0 * h)),
        np.full(n, -1.0 / (24.0 * h)),
    ])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def sphere_lambda1(w: WeightFunction, n: int = 512, d: int = 3) -> SphereEigenResult:
    """Smallest nonzero eigenvalue of -(a u')' = lambda a u on the circle.

    The zero eigenvalue of constants is deflated; its computed value is
    returned for inspection.  Raises for d != 3 (higher spheres are out of
    scope) and on eigensolver breakdown.
    """
    if d != 3:
        raise ParameterError("sphere eigenproblem implemented for d = 3 (the circle)")
    if n < 8:
        raise ParameterError("need n >= 8 circle points")
    h = 2.0 * math.pi / n
    theta = h * np.arange(n)
    theta_f = theta + 0.5 * h
    a_node = np.asarray(w.a(theta), dtype=float)
    a_face = np.asarray(w.a(theta_f), dtype=float)
    if np.any(a_node <= 0.0) or np.any(a_face <= 0.0):
        raise WeightError("weight must be positive on the circle")

    G = _face_gradient(n, h)
    A = (h * (G.T @ sp.diags(a_face) @ G)).toarray()
    A = 0.5 * (A + A.T)
    M = np.diag(h * a_node)
    try:
        evals, evecs = scipy.linalg.eigh(A, M)
    except scipy.linalg.LinAlgError as exc:  # pragma: no cover
        raise NumericError(f"circle eigensolve failed: {exc}") from exc

    scale = max(abs(float(evals[-1])), 1.0)
    lam0 = float(evals[0])
    if abs(lam0) > _ZERO_EV_TOL * scale:
        raise NumericError("constant mode eigenvalue not numerically zero")
    lam1 = float(evals[1])
    if lam1 <= _ZERO_EV_TOL * scale:
        raise NumericError("first nonzero eigenvalue not separated from zero")
    return SphereEigenResult(
        lambda1=lam1,
        eigenvector=np.asarray(evecs[:, 1]),
        alpha=alpha_from_lambda(lam1, d),
        lambda0=lam0,
        n=n,
    )


@dataclass(frozen=True)
class WeightedSolveResult:
    """Disk solve output: field on the polar grid plus the measured decay."""

    v: np.ndarray            # (n_r, n_theta)
    r_centers: np.ndarray
    theta: np.ndarray
    v_origin: float
    decay_r: np.ndarray
    decay_osc: np.ndarray
    alpha_emp: Optional[float]
    degenerate: bool

    def to_dict(self) -> dict:
        return {
            "v_origin": self.v_origin,
            "alpha_emp": self.alpha_emp,
            "degenerate": self.degenerate,
            "grid": [int(self.v.shape[0]), int(self.v.shape[1])],
        }


def solve_weighted_disk(
    w: WeightFunction,
    g: Callable[[np.ndarray], np.ndarray],
    n_r: int = 160,
    n_theta: int = 64,
    r_inner: float = 1e-4,
    fit_window: tuple = (1e-3, 1e-1),
) -> WeightedSolveResult:
    """Finite-volume solve of div(a(theta) r^2 grad v) = 0 on the unit disk.

    The degenerate origin is excised at r_inner with a zero-flux inner
    face (the r^2 weight kills the flux through the origin); the decay
    slope of sup_theta |v - v(0)| is fitted over the given radius window,
    which stays well away from the cut.  v(0) is estimated by the
    a-weighted mean over the innermost ring; the weighted mean is exactly
    blind to every decaying eigenmode, so the estimate converges like the
    solve itself.
    """
    if not (0.0 < r_inner < fit_window[0] < fit_window[1] < 1.0):
        raise ParameterError("need 0 < r_inner < fit window < 1")
    if n_r < 8 or n_theta < 8:
        raise ParameterError("polar grid too coarse")

    rf = np.geomspace(r_inner, 1.0, n_r + 1)
    rc = np.sqrt(rf[:-1] * rf[1:])
    dth = 2.0 * math.pi / n_theta
    theta_c = dth * (np.arange(n_theta) + 0.5)
    theta_f = dth * np.arange(n_theta)
    a_c = np.asarray(w.a(theta_c), dtype=float)
    a_f = np.asarray(w.a(theta_f), dtype=float)
    g_c = np.asarray(g(theta_c), dtype=float)

    nc = n_r * n_theta
    K = np.arange(nc).reshape(n_r, n_theta)
    rows, cols, vals = [], [], []
    rhs = np.zeros(nc)

    # radial faces between rings k and k+1: flux = a(theta) rf^3 dv/dr dtheta
    for k in range(n_r - 1):
        coef = a_c * rf[k + 1] ** 3 * dth / (rc[k + 1] - rc[k])
        lo, hi = K[k], K[k + 1]
        rows += [lo, lo, hi, hi]
        cols += [lo, hi, hi, lo]
        vals += [coef, -coef, coef, -coef]
    # outer Dirichlet ring: half-cell distance to r = 1
    coef = a_c * dth / (1.0 - rc[-1])
    rows += [K[-1]]
    cols += [K[-1]]
    vals += [coef]
    rhs[K[-1]] += coef * g_c
    # angular faces: flux = a(theta_f) * (dv/dtheta) * (rf_out^2 - rf_in^2)/2
    ring_w = 0.5 * (rf[1:] ** 2 - rf[:-1] ** 2)
    for k in range(n_r):
        jm = np.arange(n_theta)
        jp = (jm + 1) % n_theta
        coef = a_f[jp] * ring_w[k] / dth
        cm, cp = K[k, jm], K[k, jp]
        rows += [cm, cm, cp, cp]
        cols += [cm, cp, cp, cm]
        vals += [coef, -coef, coef, -coef]

    A = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nc, nc),
    ).tocsc()
    v = spla.spsolve(A, rhs)
    resid = np.linalg.norm(A @ v - rhs) / max(np.linalg.norm(rhs), 1e-300)
    if resid > 1e-8:
        raise NumericError(f"disk solve residual {resid:.3e} too large")
    V = v.reshape(n_r, n_theta)

    v0 = float(np.sum(a_c * V[0, :]) / np.sum(a_c))
    sup_osc = np.max(np.abs(V - v0), axis=1)
    sel = (rc >= fit_window[0]) & (rc <= fit_window[1])
    decay_r, decay_osc = rc[sel], sup_osc[sel]

    osc_scale = float(np.max(np.abs(g_c - v0))) if np.max(np.abs(g_c - v0)) > 0 else 1.0
    degenerate = bool(np.max(sup_osc) <= 1e-12 * max(osc_scale, 1.0))
    alpha_emp = None
    if not degenerate and np.all(decay_osc > 0.0) and decay_r.size >= 4:
        x, y = np.log(decay_r), np.log(decay_osc)
        Afit = np.vstack([x, np.ones_like(x)]).T
        coefs, *_ = np.linalg.lstsq(Afit, y, rcond=None)
        alpha_emp = float(coefs[0])

    return WeightedSolveResult(
        v=V, r_centers=rc, theta=theta_c, v_origin=v0,
        decay_r=decay_r, decay_osc=decay_osc,
        alpha_emp=alpha_emp, degenerate=degenerate,
    )
