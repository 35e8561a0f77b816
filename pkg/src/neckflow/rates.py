"""Blow-up-rate sweeps: theory exponents, eps sweeps, log-log fitting.

As the gap distance eps shrinks, the maximal gradient in the neck grows
like eps^(-beta).  In two dimensions the exponent obeys a dichotomy,

    beta = 1 / max(p - 1, m),

convexity-dominated for p < m + 1, nonlinearity-dominated for p > m + 1,
with the two branches meeting at the critical point p = m + 1.  This module
evaluates the closed-form exponents (including the sharpened upper bound
(d+m-2+2*tau)/(m*(p-1)) available for p > d+m-1 and the lower-bound
exponents (1-tau)/m resp. (m-2*tau)/(m*(p-1))), runs eps sweeps of the
neck solver, fits the measured exponent by least squares in log-log
coordinates, and evaluates the bounded-ratio diagnostic

    |grad u(x)| * (eps + |x1|^m)^(1/m) / osc over the slab of half-width
    (c_tilde0/3) * delta(x1)^(1/m),

whose eps-uniform boundedness is what the pointwise gradient estimate
asserts.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, DomainError, ParameterError, SolverError, SweepError
from .geometry import (
    ConvexityBounds,
    GapGeometry,
    ProfileSpec,
    check_admissibility,
    compute_constants,
)
from .neck_solver import (
    DiscreteField,
    SolverConfig,
    build_grid,
    grad_max,
    harnack_ratio,
    oscillation,
    solve,
)

_OSC_FLOOR = 1e-12   # slabs with less oscillation than this x osc(u) are skipped


@dataclass(frozen=True)
class TheoryRates:
    """Closed-form blow-up exponents for one (d, m, p, tau) tuple.

    upper_thm13 is None when its validity condition p > d+m-1 (with
    tau < (p+1-d-m)/2) fails; it is flagged unavailable rather than
    extrapolated.
    """

    d: int
    m: float
    p: float
    tau: float
    rate_2d: float
    upper_thm11: float
    upper_thm13: Optional[float]
    lower_thm15: float
    regime: str

    def to_dict(self) -> dict:
        return {
            "d": self.d, "m": self.m, "p": self.p, "tau": self.tau,
            "rate_2d": self.rate_2d, "upper_thm11": self.upper_thm11,
            "upper_thm13": self.upper_thm13, "lower_thm15": self.lower_thm15,
            "regime": self.regime,
        }


def theory_exponents(d: int, m: float, p: float, tau: float) -> TheoryRates:
    """Evaluate every closed-form exponent; invalid combinations are None."""
    if d < 2:
        raise ParameterError("d must be >= 2")
    if m <= 2.0:
        raise ParameterError("m must be > 2")
    if p <= 1.0:
        raise ParameterError("p must be > 1")
    if not (0.0 < tau < m - 2.0):
        raise ParameterError("tau must lie in (0, m-2)")

    rate_2d = 1.0 / max(p - 1.0, m)
    upper_thm11 = 1.0 / m
    upper_thm13 = None
    if p > d + m - 1.0 and tau < 0.5 * (p + 1.0 - d - m):
        upper_thm13 = (d + m - 2.0 + 2.0 * tau) / (m * (p - 1.0))
    if p <= m + 1.0:
        lower_thm15 = (1.0 - tau) / m
    else:
        lower_thm15 = (m - 2.0 * tau) / (m * (p - 1.0))
    if p == m + 1.0:
        regime = "critical"
    elif p < m + 1.0:
        regime = "convexity-dominated"
    else:
        regime = "nonlinearity-dominated"
    return TheoryRates(
        d=d, m=m, p=p, tau=tau, rate_2d=rate_2d, upper_thm11=upper_thm11,
        upper_thm13=upper_thm13, lower_thm15=lower_thm15, regime=regime,
    )


@dataclass(frozen=True)
class RateFit:
    """Least-squares power-law fit of gmax against eps."""

    eps: tuple
    gmax: tuple
    fitted_exponent: float
    r_squared: float
    theory: Optional[TheoryRates] = None

    @property
    def abs_gap(self) -> Optional[float]:
        if self.theory is None:
            return None
        return abs(self.fitted_exponent - self.theory.rate_2d)

    def to_dict(self) -> dict:
        return {
            "eps": list(self.eps),
            "gmax": list(self.gmax),
            "fitted_exponent": self.fitted_exponent,
            "r2": self.r_squared,
            "theory_rate": None if self.theory is None else self.theory.rate_2d,
            "regime": None if self.theory is None else self.theory.regime,
            "abs_gap": self.abs_gap,
        }


def fit_exponent(eps: Sequence[float], gmax: Sequence[float],
                 theory: Optional[TheoryRates] = None) -> RateFit:
    """Slope of log(gmax) against -log(eps), with r^2.

    Exactly recovers pure power laws and is invariant under rescaling gmax
    by a constant (only the intercept moves).
    """
    e = np.asarray(eps, dtype=float)
    g = np.asarray(gmax, dtype=float)
    if e.size < 4:
        raise DataError("need at least 4 sweep points to fit an exponent")
    if np.any(e <= 0.0) or np.any(g <= 0.0):
        raise DataError("eps and gmax must be positive for a log-log fit")
    x = -np.log(e)
    y = np.log(g)
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss_res = float(resid @ resid)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot < 1e-300 else 1.0 - ss_res / ss_tot
    return RateFit(
        eps=tuple(float(v) for v in e),
        gmax=tuple(float(v) for v in g),
        fitted_exponent=float(coef[0]),
        r_squared=float(r2),
        theory=theory,
    )


def thm1_ratio(field: DiscreteField, geometry: GapGeometry,
               c_tilde0: Optional[float] = None) -> float:
    """Max over cells of |grad u| (eps+|x1|^m)^(1/m) / local oscillation.

    The oscillation slab has half-width (c_tilde0/3) * delta(x1)^(1/m);
    cells whose slab leaves the sampled domain or whose oscillation falls
    below 1e-12 x osc(u) are skipped (and counted); if everything is
    skipped the data is degenerate.
    """
    if not field.converged:
        raise ParameterError("thm1_ratio needs a converged field")
    if c_tilde0 is None:
        c_tilde0 = _auto_c_tilde0(geometry, field.p)
    grid = field.grid
    y = grid.y1_centers
    eps, m = geometry.eps, geometry.m
    gnorm = np.hypot(field.grad_phys[..., 0], field.grad_phys[..., 1])
    col_g = gnorm.max(axis=1)
    osc_total = float(field.u.max() - field.u.min())

    best = -math.inf
    n_skipped = 0
    for i in range(y.size):
        rho = (c_tilde0 / 3.0) * grid.delta_c[i] ** (1.0 / m)
        lo, hi = y[i] - rho, y[i] + rho
        if lo < y[0] or hi > y[-1]:
            n_skipped += 1
            continue
        osc_i = oscillation(field, float(y[i]), rho)
        if osc_i <= _OSC_FLOOR * osc_total:
            n_skipped += 1
            continue
        ratio = col_g[i] * (eps + abs(y[i]) ** m) ** (1.0 / m) / osc_i
        best = max(best, ratio)
    if not math.isfinite(best):
        raise DataError("all cells degenerate: no usable oscillation slabs")
    return float(best)


def _auto_c_tilde0(geometry: GapGeometry, p: float) -> float:
    geom = geometry
    if geom.kappa is None:
        est = check_admissibility(geom).estimated_kappas
        geom = GapGeometry(
            d=geom.d, m=geom.m, eps=geom.eps, profile=geom.profile, R0=geom.R0,
            kappa=ConvexityBounds(est["kappa1"], est["kappa2"], est["kappa3"], est["kappa4"]),
        )
    return compute_constants(geom, p=p, beta=0.5).c_tilde0


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepPlan:
    """An eps sweep: geometry template, solver settings, measurement rules.

    The gradient measurement region defaults to |x1| <= (4 m eps /
    (m - 2 - measure_tau))^(1/m) with measure_tau = 0.5, clipped to the
    grid; harnack_r fixes the annulus radius for the Harnack diagnostic.
    """

    profile: ProfileSpec
    m: float
    eps_list: tuple
    p: float
    solver: SolverConfig
    R0: float
    L: float
    d: int = 2
    measure_tau: float = 0.5
    harnack_r: Optional[float] = None

    def __post_init__(self):
        eps = np.asarray(self.eps_list, dtype=float)
        if eps.size < 4:
            raise ParameterError("eps list must have >= 4 entries")
        if np.any(eps <= 0.0) or np.any(np.diff(eps) >= 0.0):
            raise ParameterError("eps list must be positive and strictly decreasing")
        if self.profile.kind != "flat" and not (0.0 < self.measure_tau < self.m - 2.0):
            raise ParameterError("measure_tau must lie in (0, m-2)")
        if self.L > self.R0:
            raise ParameterError("L must not exceed R0")

    def geometry_for(self, eps: float) -> GapGeometry:
        return GapGeometry(d=self.d, m=self.m, eps=eps, profile=self.profile, R0=self.R0)

    def measure_radius(self, eps: float) -> float:
        return (4.0 * self.m * eps / (self.m - 2.0 - self.measure_tau)) ** (1.0 / self.m)


@dataclass
class SweepResult:
    plan: SweepPlan
    eps: list
    gmax: list
    harnack: list
    thm1: list
    osc_center: list
    converged: list
    outer_iters: list
    failures: list
    c_tilde0: float


def _sweep_point(args):
    plan, eps, c_tilde0 = args
    geometry = plan.geometry_for(eps)
    grid = build_grid(geometry, plan.solver, plan.L)
    fld = solve(grid, plan.solver)
    if plan.profile.kind == "flat":
        r_meas = float(grid.y1_centers[-1])
    else:
        r_meas = min(plan.measure_radius(eps), float(grid.y1_centers[-1]))
    gm = grad_max(fld, r_meas)
    if plan.harnack_r is not None:
        hr = harnack_ratio(fld, plan.harnack_r).ratio
    else:
        hr = float("nan")
    if plan.profile.kind == "flat":
        t1 = float("nan")
        osc_c = oscillation(fld, 0.0, min(0.1 * plan.L, float(grid.y1_centers[-1])))
    else:
        t1 = thm1_ratio(fld, geometry, c_tilde0)
        rho = (c_tilde0 / 3.0) * eps ** (1.0 / plan.m)
        osc_c = oscillation(fld, 0.0, rho)
    return gm, hr, t1, osc_c, fld.converged, fld.trace.outer_iterations


def run_sweep(plan: SweepPlan, jobs: int = 1) -> SweepResult:
    """One converged solve per eps; failures are recorded and the sweep
    continues unless more than half the points fail."""
    if plan.profile.kind == "flat":
        ct0 = float("nan")
    else:
        ct0 = _auto_c_tilde0(plan.geometry_for(plan.eps_list[0]), plan.p)
    args = [(plan, eps, ct0) for eps in plan.eps_list]

    results = [None] * len(args)
    failures = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            futs = list(ex.map(_sweep_point_safe, args))
        for k, out in enumerate(futs):
            results[k] = out
    else:
        for k, a in enumerate(args):
            results[k] = _sweep_point_safe(a)

    out = SweepResult(
        plan=plan, eps=[], gmax=[], harnack=[], thm1=[], osc_center=[],
        converged=[], outer_iters=[], failures=failures, c_tilde0=ct0,
    )
    for eps, res in zip(plan.eps_list, results):
        out.eps.append(float(eps))
        if isinstance(res, str):
            failures.append((float(eps), res))
            out.gmax.append(float("nan"))
            out.harnack.append(float("nan"))
            out.thm1.append(float("nan"))
            out.osc_center.append(float("nan"))
            out.converged.append(False)
            out.outer_iters.append(0)
        else:
            gm, hr, t1, osc_c, conv, iters = res
            out.gmax.append(float(gm))
            out.harnack.append(float(hr))
            out.thm1.append(float(t1))
            out.osc_center.append(float(osc_c))
            out.converged.append(bool(conv))
            out.outer_iters.append(int(iters))
    if len(failures) * 2 > len(args):
        raise SweepError(f"{len(failures)}/{len(args)} sweep solves failed")
    return out


def _sweep_point_safe(args):
    try:
        return _sweep_point(args)
    except (SolverError, DomainError, DataError, ParameterError) as exc:
        return f"{type(exc).__name__}: {exc}"


def sweep_fit(result: SweepResult, tau: float = 0.5) -> RateFit:
    """Fit the measured exponent of a sweep against the 2D theory rate."""
    ok = [k for k, c in enumerate(result.converged) if c]
    if len(ok) < 4:
        raise DataError("fewer than 4 converged sweep points")
    eps = [result.eps[k] for k in ok]
    gmax = [result.gmax[k] for k in ok]
    theory = None
    if result.plan.profile.kind != "flat":
        theory = theory_exponents(result.plan.d, result.plan.m, result.plan.p, tau)
    return fit_exponent(eps, gmax, theory)


def osc_decay_slope(result: SweepResult) -> Optional[float]:
    """Empirical slope of log(center oscillation) vs log(eps); reported
    without any theoretical comparison."""
    ok = [
        k for k, c in enumerate(result.converged)
        if c and np.isfinite(result.osc_center[k]) and result.osc_center[k] > 0
    ]
    if len(ok) < 2:
        return None
    x = np.log([result.eps[k] for k in ok])
    y = np.log([result.osc_center[k] for k in ok])
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(coef[0])
