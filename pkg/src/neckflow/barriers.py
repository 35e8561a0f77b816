"""Explicit super/subsolution barriers for the insulated thin-gap problem.

Both barriers are powers of the same anisotropic distance-like quantity

    Q(x)^m = |x'|^m + coeff * |x'|^(m-2) * x_d^2,

with w = Q^gamma (supersolution, coeff = m(m+tau)/2) and
w_low = [Q^gamma - level]_+ (subsolution, coeff = m(m-tau)/2, level the
gap-dependent threshold (2 m eps / (m-2-tau))^(gamma/m)).

A supersolution must have negative p-Laplacian inside the verification
window and positive outward flux on both gap walls; a subsolution the
opposite signs.  The module evaluates value/gradient/Hessian from
hand-derived closed forms -- sign verification near the singular axis
x' = 0 is too delicate for differentiation noise -- and checks the sign
conditions by dense sampling with an empirical largest passing radius
found by bisection.

Verdicts aggregate deterministically (ordered reduction over the sample
grid), so parallel evaluation of samples cannot change a verdict.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainError, ParameterError
from .geometry import GapGeometry

# "Strictly negative/positive" is accepted beyond -1e-14 * (local scale) to
# absorb rounding; margins are reported, never clamped.
ROUNDING_TOL = 1e-14

_MAX_STORED_VIOLATIONS = 100
_BISECTION_STEPS = 20


@dataclass(frozen=True)
class BarrierSpec:
    """Parameters of one auxiliary barrier function.

    Supersolutions require p > d + m - 1 with tau in (0, p-d-m+1) and
    gamma in (0, (p-d-m+1-tau)/(p-1)); subsolutions live in d = 2 with
    tau in (0, m-2) and gamma > max(0, (p-m-1+tau)/(p-1)).  Both ranges
    are open; hitting an endpoint is a parameter error.
    """

    kind: str  # "supersolution" | "subsolution"
    d: int
    m: float
    p: float
    tau: float
    gamma: float
    coeff: float
    threshold: float

    def __post_init__(self):
        if self.kind not in ("supersolution", "subsolution"):
            raise ParameterError(f"unknown barrier kind {self.kind!r}")
        if self.m <= 2.0:
            raise ParameterError("barriers require m > 2")
        if self.p <= 1.0:
            raise ParameterError("require p > 1")
        if self.kind == "supersolution":
            lim = self.p - self.d - self.m + 1.0
            if lim <= 0.0:
                raise ParameterError("supersolution requires p > d + m - 1")
            if not (0.0 < self.tau < lim):
                raise ParameterError(f"tau must lie in (0, {lim}) for a supersolution")
            gmax = (lim - self.tau) / (self.p - 1.0)
            if not (0.0 < self.gamma < gmax):
                raise ParameterError(f"gamma must lie in (0, {gmax}) for a supersolution")
            want = self.m * (self.m + self.tau) / 2.0
        else:
            if self.d != 2:
                raise ParameterError("subsolutions are two-dimensional")
            if not (0.0 < self.tau < self.m - 2.0):
                raise ParameterError("tau must lie in (0, m-2) for a subsolution")
            gmin = max(0.0, (self.p - self.m - 1.0 + self.tau) / (self.p - 1.0))
            if self.gamma <= gmin:
                raise ParameterError(f"gamma must exceed {gmin} for a subsolution")
            want = self.m * (self.m - self.tau) / 2.0
        if not math.isclose(self.coeff, want, rel_tol=1e-12):
            raise ParameterError("coeff does not match its closed form")
        if self.threshold < 0.0:
            raise ParameterError("threshold must be >= 0")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "d": self.d, "m": self.m, "p": self.p,
            "tau": self.tau, "gamma": self.gamma, "coeff": self.coeff,
            "threshold": self.threshold,
        }


def supersolution(d: int, m: float, p: float, tau: float, gamma: float) -> BarrierSpec:
    return BarrierSpec(
        kind="supersolution", d=d, m=m, p=p, tau=tau, gamma=gamma,
        coeff=m * (m + tau) / 2.0, threshold=0.0,
    )


def subsolution(m: float, p: float, tau: float, gamma: float, eps: float) -> BarrierSpec:
    if eps <= 0.0:
        raise ParameterError("subsolution threshold needs eps > 0")
    if tau >= m - 2.0:
        raise ParameterError("tau must lie in (0, m-2) for a subsolution")
    level = (2.0 * m * eps / (m - 2.0 - tau)) ** (gamma / m)
    return BarrierSpec(
        kind="subsolution", d=2, m=m, p=p, tau=tau, gamma=gamma,
        coeff=m * (m - tau) / 2.0, threshold=level,
    )


def zero_set_radius(spec: BarrierSpec, eps: float) -> float:
    """Horizontal radius below which the truncated subsolution vanishes."""
    return (spec.m * eps / (spec.m - 2.0 - spec.tau)) ** (1.0 / spec.m)


@dataclass(frozen=True)
class PointEvaluation:
    """Closed-form value/derivatives of a barrier at one point.

    For subsolutions the value carries the positive-part truncation while
    grad/hess/p_laplace describe the untruncated branch; `truncated` flags
    points where that branch is at or below the subtraction level.
    neumann_flux is filled only by boundary evaluations.
    """

    value: float
    grad: np.ndarray
    hess: np.ndarray
    p_laplace: float
    neumann_flux: Optional[float] = None
    truncated: bool = False


def _q_derivatives(spec: BarrierSpec, x: np.ndarray):
    """Value, gradient and Hessian of w = (Q^m)^(gamma/m) at a general point."""
    d, m, c = spec.d, spec.m, spec.coeff
    xp, xd = x[:-1], x[-1]
    rho = float(np.linalg.norm(xp))
    if rho == 0.0:
        raise DomainError("barrier derivatives are singular on the axis x' = 0")
    s = spec.gamma / m

    F = rho**m + c * rho ** (m - 2.0) * xd**2
    gF = np.empty(d)
    gF[:-1] = (m * rho ** (m - 2.0) + c * (m - 2.0) * rho ** (m - 4.0) * xd**2) * xp
    gF[-1] = 2.0 * c * rho ** (m - 2.0) * xd

    H = np.empty((d, d))
    outer = np.outer(xp, xp)
    eye = np.eye(d - 1)
    H[:-1, :-1] = (
        m * ((m - 2.0) * rho ** (m - 4.0) * outer + rho ** (m - 2.0) * eye)
        + c * (m - 2.0) * xd**2 * ((m - 4.0) * rho ** (m - 6.0) * outer + rho ** (m - 4.0) * eye)
    )
    H[:-1, -1] = H[-1, :-1] = 2.0 * c * (m - 2.0) * rho ** (m - 4.0) * xd * xp
    H[-1, -1] = 2.0 * c * rho ** (m - 2.0)

    w = F**s
    grad = s * F ** (s - 1.0) * gF
    hess = s * F ** (s - 1.0) * H + s * (s - 1.0) * F ** (s - 2.0) * np.outer(gF, gF)
    return w, grad, hess


def eval_barrier(spec: BarrierSpec, x) -> PointEvaluation:
    """Evaluate a barrier and its exact derivatives at a point in R^d."""
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.d,):
        raise DomainError(f"point must have dimension {spec.d}")
    core, grad, hess = _q_derivatives(spec, x)
    truncated = False
    value = core
    if spec.kind == "subsolution":
        value = core - spec.threshold
        if value <= 0.0:
            value, truncated = 0.0, True
    gn = float(np.linalg.norm(grad))
    plap = _p_laplace_scalar(gn, grad, hess, spec.p)
    return PointEvaluation(
        value=float(value), grad=grad, hess=hess, p_laplace=plap, truncated=truncated
    )


# ---------------------------------------------------------------------------
# p-Laplace operator of closed-form fields
# ---------------------------------------------------------------------------

def _p_laplace_scalar(gn: float, grad: np.ndarray, hess: np.ndarray, p: float) -> float:
    if gn == 0.0:
        if p >= 2.0:
            return 0.0
        raise DomainError("p-Laplacian singular: |grad| = 0 with p < 2")
    quad = float(grad @ hess @ grad)
    return gn ** (p - 4.0) * (gn**2 * float(np.trace(hess)) + (p - 2.0) * quad)


def p_laplace_of(field: Callable, p: float, x) -> float:
    """div(|grad f|^(p-2) grad f) for a field with closed-form derivatives.

    `field(x)` must return (value, grad, hess).
    """
    if p <= 1.0:
        raise ParameterError("p must be > 1")
    x = np.asarray(x, dtype=float)
    _, grad, hess = field(x)
    grad = np.asarray(grad, dtype=float)
    hess = np.asarray(hess, dtype=float)
    return float(_p_laplace_scalar(float(np.linalg.norm(grad)), grad, hess, p))


def barrier_field(spec: BarrierSpec) -> Callable:
    """Adapter exposing a barrier as a (value, grad, hess) field."""

    def f(x):
        return _q_derivatives(spec, np.asarray(x, dtype=float))

    return f


def linear_field(direction: Sequence[float]) -> Callable:
    a = np.asarray(direction, dtype=float)

    def f(x):
        x = np.asarray(x, dtype=float)
        return float(a @ x), a.copy(), np.zeros((a.size, a.size))

    return f


def radial_power_field(exponent: float, center: Sequence[float]) -> Callable:
    """f = |x - x0|^c with exact derivatives (x0 outside the evaluation set)."""
    x0 = np.asarray(center, dtype=float)
    c = float(exponent)

    def f(x):
        y = np.asarray(x, dtype=float) - x0
        r = float(np.linalg.norm(y))
        if r == 0.0:
            raise DomainError("radial field singular at its center")
        val = r**c
        grad = c * r ** (c - 2.0) * y
        hess = c * r ** (c - 2.0) * np.eye(y.size) + c * (c - 2.0) * r ** (c - 4.0) * np.outer(y, y)
        return val, grad, hess

    return f


def radial_log_field(center: Sequence[float]) -> Callable:
    """f = log|x - x0|, the planar harmonic radial profile."""
    x0 = np.asarray(center, dtype=float)

    def f(x):
        y = np.asarray(x, dtype=float) - x0
        r2 = float(y @ y)
        if r2 == 0.0:
            raise DomainError("radial field singular at its center")
        val = 0.5 * math.log(r2)
        grad = y / r2
        hess = np.eye(y.size) / r2 - 2.0 * np.outer(y, y) / r2**2
        return val, grad, hess

    return f


# ---------------------------------------------------------------------------
# Vectorized evaluation on the axisymmetric slice (rho, x_d)
# ---------------------------------------------------------------------------

def _axis_eval(spec: BarrierSpec, rho: np.ndarray, xd: np.ndarray):
    """Barrier pieces at points (rho, 0, ..., 0, xd) with rho > 0.

    Returns (core, g1, gd, H11, H1d, Hdd, Ht): radial/vertical gradient and
    Hessian entries plus the tangential second derivative, enough for the
    p-Laplacian of the axisymmetric function in any dimension.
    """
    m, c = spec.m, spec.coeff
    s = spec.gamma / m
    rho = np.asarray(rho, dtype=float)
    xd = np.asarray(xd, dtype=float)

    F = rho**m + c * rho ** (m - 2.0) * xd**2
    Fr = m * rho ** (m - 1.0) + c * (m - 2.0) * rho ** (m - 3.0) * xd**2
    Fd = 2.0 * c * rho ** (m - 2.0) * xd
    Frr = m * (m - 1.0) * rho ** (m - 2.0) + c * (m - 2.0) * (m - 3.0) * rho ** (m - 4.0) * xd**2
    Frd = 2.0 * c * (m - 2.0) * rho ** (m - 3.0) * xd
    Fdd = 2.0 * c * rho ** (m - 2.0)

    A = s * F ** (s - 1.0)
    B = s * (s - 1.0) * F ** (s - 2.0)
    core = F**s
    g1, gd = A * Fr, A * Fd
    H11 = A * Frr + B * Fr * Fr
    H1d = A * Frd + B * Fr * Fd
    Hdd = A * Fdd + B * Fd * Fd
    Ht = A * Fr / rho
    return core, g1, gd, H11, H1d, Hdd, Ht


def _axis_plap(spec: BarrierSpec, g1, gd, H11, H1d, Hdd, Ht):
    """(p-Laplacian, local magnitude scale) from the slice pieces."""
    d, p = spec.d, spec.p
    lap = H11 + (d - 2) * Ht + Hdd
    g2 = g1 * g1 + gd * gd
    quad = g1 * g1 * H11 + 2.0 * g1 * gd * H1d + gd * gd * Hdd
    pref = g2 ** ((p - 4.0) / 2.0)
    val = pref * (g2 * lap + (p - 2.0) * quad)
    scale = pref * (g2 * np.abs(lap) + abs(p - 2.0) * np.abs(quad))
    return val, scale


def _wall_flux(spec: BarrierSpec, geometry: GapGeometry, rho: np.ndarray, side: int):
    """Outward flux d(barrier)/d(nu) on the gap wall at radii rho > 0."""
    prof, m = geometry.profile, geometry.m
    if side > 0:
        xd = geometry.eps / 2.0 + prof.h1(rho, m)
        slope = prof.dh1(rho, m)
    else:
        xd = -geometry.eps / 2.0 + prof.h2(rho, m)
        slope = prof.dh2(rho, m)
    _, g1, gd, *_ = _axis_eval(spec, rho, xd)
    norm = np.sqrt(1.0 + slope**2)
    if side > 0:
        return (gd - slope * g1) / norm
    return (slope * g1 - gd) / norm


def neumann_flux(spec: BarrierSpec, geometry: GapGeometry, xprime, side: int = +1) -> float:
    """Outward-normal derivative of the barrier on a gap wall.

    side = +1 evaluates on the upper wall x_d = eps/2 + h1, side = -1 on the
    lower wall; the normal is the outward normal of the gap region.
    """
    x = np.asarray(xprime, dtype=float)
    rho = float(abs(x)) if x.ndim == 0 else float(np.linalg.norm(x))
    if rho == 0.0:
        raise DomainError("flux is singular on the axis x' = 0")
    if side not in (+1, -1):
        raise ParameterError("side must be +1 or -1")
    return float(_wall_flux(spec, geometry, np.asarray([rho]), side)[0])


# ---------------------------------------------------------------------------
# Sampled verification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BarrierVerdict:
    """Outcome of a sampled sign verification.

    Margins are normalized by the local term magnitude; a sample violates
    its sign condition when the normalized margin drops below -1e-14, so
    `violations` is empty iff min_margin >= -1e-14.  empirical_r_hat is the
    largest bisection radius at which every sample passed; `degenerate`
    flags an empty or never-passing window (not a pass).
    """

    region: str
    n_samples: int
    violations: tuple
    n_violations: int
    max_margin: float
    min_margin: float
    empirical_r_hat: float
    degenerate: bool = False
    params: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return (not self.degenerate) and self.n_violations == 0

    def to_dict(self) -> dict:
        return {
            "params": dict(self.params),
            "region": self.region,
            "n_samples": int(self.n_samples),
            "min_margin": float(self.min_margin),
            "max_margin": float(self.max_margin),
            "violations": [
                {"point": list(v[0]), "quantity": v[1], "value": float(v[2])}
                for v in self.violations
            ],
            "n_violations": int(self.n_violations),
            "empirical_r_hat": float(self.empirical_r_hat),
            "degenerate": bool(self.degenerate),
            "passed": bool(self.passed),
        }


def _interior_points(geometry: GapGeometry, radii: np.ndarray, n_t: int):
    """Tensor sample of the open gap over the given radii columns."""
    m, prof = geometry.m, geometry.profile
    bottom = -geometry.eps / 2.0 + prof.h2(radii, m)
    delta = geometry.delta_r(radii)
    t = (np.arange(n_t) + 0.5) / n_t
    rho = np.repeat(radii, n_t)
    xd = (bottom[:, None] + delta[:, None] * t[None, :]).ravel()
    return rho, xd


def _collect(margins, rho, xd, quantity, violations):
    """Ordered reduction of sample margins into the violations list."""
    bad = np.flatnonzero(margins < -ROUNDING_TOL)
    for idx in bad:
        violations.append(((float(rho[idx]), float(xd[idx])), quantity, float(margins[idx])))
    return len(bad)


def _sample_window(spec, geometry, r_lo, r_hi, n_r, n_t, zero_radius=None):
    """Evaluate all sign conditions on the window r_lo <= |x'| <= r_hi.

    Returns (all_margins, violations, n_samples).  Sampling is geometric in
    radius (the inequalities degrade polynomially, so the tight end is the
    outer edge for interior terms and both ends for fluxes) and uniform in
    relative height.  The barrier and the conditions are even in x_1 and in
    x_d-reflection of symmetric geometry, so the positive quadrant of radii
    covers the region; both walls are checked explicitly.
    """
    radii = np.geomspace(r_lo, r_hi, n_r)
    rho, xd = _interior_points(geometry, radii, n_t)
    _, g1, gd, H11, H1d, Hdd, Ht = _axis_eval(spec, rho, xd)
    plap, scale = _axis_plap(spec, g1, gd, H11, H1d, Hdd, Ht)
    scale = np.maximum(scale, 1e-300)
    if spec.kind == "supersolution":
        interior_margin = -plap / scale
    else:
        interior_margin = plap / scale

    flux_margins, flux_pts = [], []
    for side in (+1, -1):
        fl = _wall_flux(spec, geometry, radii, side)
        gsc = np.maximum(np.abs(fl) + _gradient_scale(spec, geometry, radii, side), 1e-300)
        if side > 0:
            wall_xd = geometry.eps / 2.0 + geometry.profile.h1(radii, geometry.m)
        else:
            wall_xd = -geometry.eps / 2.0 + geometry.profile.h2(radii, geometry.m)
        if spec.kind == "supersolution":
            margin = fl / gsc
        else:
            # The truncated barrier vanishes on the wall until its core
            # exceeds the subtraction level; its flux is exactly zero there,
            # so only active wall points carry a sign condition.
            margin = -fl / gsc
            wall_core = _axis_eval(spec, radii, wall_xd)[0]
            margin = np.where(wall_core > spec.threshold, margin, 0.0)
        flux_margins.append(margin)
        flux_pts.append((radii, wall_xd))

    violations: list = []
    n = 0
    n += _collect(interior_margin, rho, xd, "p_laplace_sign", violations)
    for (margin, (rr, ww)), side in zip(zip(flux_margins, flux_pts), ("+", "-")):
        n += _collect(margin, rr, ww, f"wall_flux_{side}", violations)
    all_margins = [interior_margin, *flux_margins]
    n_samples = rho.size + 2 * radii.size

    if zero_radius is not None:
        zr = np.geomspace(max(1e-3 * zero_radius, 1e-12), zero_radius, max(8, n_r // 4))
        zrho, zxd = _interior_points(geometry, zr, max(4, n_t // 4))
        core = _axis_eval(spec, zrho, zxd)[0]
        zmargin = (spec.threshold - core) / max(spec.threshold, 1e-300)
        n += _collect(zmargin, zrho, zxd, "zero_set_value", violations)
        all_margins.append(zmargin)
        n_samples += zrho.size

    return np.concatenate(all_margins), violations, n_samples, n


def _gradient_scale(spec, geometry, radii, side):
    """|grad| on the wall, the natural normalization for flux margins."""
    prof, m = geometry.profile, geometry.m
    if side > 0:
        xd = geometry.eps / 2.0 + prof.h1(radii, m)
    else:
        xd = -geometry.eps / 2.0 + prof.h2(radii, m)
    _, g1, gd, *_ = _axis_eval(spec, radii, xd)
    return np.hypot(g1, gd)


def _verify(spec, geometry, grid, r_inner, zero_radius, region_fmt):
    n_r, n_t = grid
    if n_r < 4 or n_t < 2:
        raise ParameterError("verification grid too coarse")
    R0 = geometry.R0
    if not (r_inner < R0):
        raise ParameterError("verification window is empty: inner radius >= R0")

    def run(r_hat):
        return _sample_window(spec, geometry, r_inner, r_hat, n_r, n_t, zero_radius)

    def passes(result):
        return result[3] == 0

    hi = run(R0)
    if passes(hi):
        r_hat, final = R0, hi
        degenerate = False
    else:
        lo_r, hi_r = r_inner, R0
        best = None
        for _ in range(_BISECTION_STEPS):
            mid = 0.5 * (lo_r + hi_r)
            res = run(mid)
            if passes(res):
                lo_r, best = mid, res
            else:
                hi_r = mid
        if best is None:
            r_hat, final, degenerate = r_inner, run(min(2.0 * r_inner, R0)), True
        else:
            r_hat, final, degenerate = lo_r, best, False

    margins, violations, n_samples, n_viol = final
    return BarrierVerdict(
        region=region_fmt.format(r_lo=r_inner, r_hat=r_hat),
        n_samples=n_samples,
        violations=tuple(violations[:_MAX_STORED_VIOLATIONS]),
        n_violations=n_viol,
        max_margin=float(np.max(margins)),
        min_margin=float(np.min(margins)),
        empirical_r_hat=float(r_hat),
        degenerate=degenerate,
        params=spec.to_dict(),
    )


def verify_supersolution(spec: BarrierSpec, geometry: GapGeometry, grid=(200, 40)) -> BarrierVerdict:
    """Sample the supersolution sign conditions on the gap window.

    Checks div(|grad w|^(p-2) grad w) < 0 in the gap for eps^(2/m) <= |x'|
    <= r_hat and outward flux > 0 on both walls, with r_hat found by
    bisection over (eps^(2/m), R0].
    """
    if spec.kind != "supersolution":
        raise ParameterError("spec is not a supersolution")
    if geometry.eps <= 0.0:
        raise ParameterError("verification needs eps > 0")
    r_inner = geometry.eps ** (2.0 / spec.m)
    return _verify(
        spec, geometry, grid, r_inner, None,
        "gap window {r_lo:.6g} <= |x'| <= {r_hat:.6g}, both walls",
    )


def verify_subsolution(spec: BarrierSpec, geometry: GapGeometry, grid=(200, 40)) -> BarrierVerdict:
    """Sample the subsolution sign conditions on the unit curvilinear square.

    Checks div >= 0 where the truncated barrier is active, flux <= 0 on both
    walls outside the zero set, and confirms the barrier vanishes on the
    inner region |x'| <= (m eps/(m-2-tau))^(1/m).
    """
    if spec.kind != "subsolution":
        raise ParameterError("spec is not a subsolution")
    prof = geometry.profile
    if prof.kind != "curvilinear_square" or not math.isclose(prof.r_tilde0, 1.0):
        raise ParameterError("subsolution verification requires the unit curvilinear square")
    if geometry.eps <= 0.0:
        raise ParameterError("verification needs eps > 0")
    r_zero = zero_set_radius(spec, geometry.eps)
    return _verify(
        spec, geometry, grid, r_zero, r_zero,
        "active window {r_lo:.6g} <= |x'| <= {r_hat:.6g} plus zero set, both walls",
    )
