"""Thin-gap geometry between two nearly touching inclusions.

The inclusion boundaries near the closest point are graphs
x_d = eps/2 + h1(x') (top) and x_d = -eps/2 + h2(x') (bottom), so the gap
width is

    delta(x') = eps + h1(x') - h2(x').

Admissible profiles vanish to order m at the planar point:

    (H1)  kappa1 |x'|^m <= h1 - h2 <= kappa2 |x'|^m     on |x'| <= 2*R0,
    (H2)  |grad h_i|    <= kappa3 |x'|^(m-1)            on |x'| <= 2*R0,
    (H3)  ||h1||_Cm + ||h2||_Cm <= kappa4.

Profiles are analytic rules with exact first and second derivatives; no
numerical differentiation happens here, so downstream sign checks on
barrier fluxes are exact to rounding.  The module also evaluates the
closed-form scale constants (gap-equivalence radii c0, c_tilde0 and the
admissible-length caps R0i / r0i) that calibrate measurement radii used
elsewhere in the package.

All objects are immutable after construction and every operation is a pure
function, so geometries can be shared freely across parallel workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError, GeometryError, ParameterError

PROFILE_KINDS = ("curvilinear_square", "power", "flat")

# Minimum sampling radius: the profiles are not smooth at the origin itself,
# and (H1)-(H2) are tightest near it, so samples cluster just above zero.
_R_SAMPLE_MIN = 1e-12

# Rounding guard for exact-equality margins (e.g. power profiles where the
# estimated kappa reproduces the profile identically).
_MARGIN_RTOL = 1e-12


@dataclass(frozen=True)
class ProfileSpec:
    """Analytic profile pair (h1, h2) with exact derivatives.

    kind is one of:
      * "curvilinear_square": h1 = r_tilde0 * (1 - (1 - (r/r_tilde0)^m)^(1/m)),
        h2 = -h1, defined for r < r_tilde0 (axisymmetric ellipsoid boundary).
      * "power": h1 = lam * r^m, h2 = -lam * r^m (symmetric) or
        h1 = 2*lam*r^m, h2 = 0 (one-sided); same gap either way.
      * "flat": h1 = h2 = 0.
    """

    kind: str
    r_tilde0: Optional[float] = None
    lam: Optional[float] = None
    symmetric: bool = True

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS:
            raise ParameterError(f"unknown profile kind {self.kind!r}")
        if self.kind == "curvilinear_square":
            if self.r_tilde0 is None or self.r_tilde0 <= 0:
                raise ParameterError("curvilinear_square requires r_tilde0 > 0")
        if self.kind == "power":
            if self.lam is None or self.lam <= 0:
                raise ParameterError("power profile requires lam > 0")

    # -- constructors ------------------------------------------------------
    @staticmethod
    def curvilinear_square(r_tilde0: float = 1.0) -> "ProfileSpec":
        return ProfileSpec(kind="curvilinear_square", r_tilde0=r_tilde0)

    @staticmethod
    def power(lam: float, symmetric: bool = True) -> "ProfileSpec":
        return ProfileSpec(kind="power", lam=lam, symmetric=symmetric)

    @staticmethod
    def flat() -> "ProfileSpec":
        return ProfileSpec(kind="flat")

    # -- evaluation --------------------------------------------------------
    @property
    def domain_radius(self) -> float:
        if self.kind == "curvilinear_square":
            return float(self.r_tilde0)
        return math.inf

    def _check_domain(self, r):
        if np.any(np.asarray(r) >= self.domain_radius):
            raise DomainError(
                f"radius beyond profile domain (|x'| < {self.domain_radius})"
            )

    def _curv(self, r, m, order):
        rt = self.r_tilde0
        r = np.asarray(r, dtype=float)
        t = (r / rt) ** m
        rest = rt**m - r**m
        if order == 0:
            # stable for t near 0: 1 - (1-t)^(1/m) = -expm1(log1p(-t)/m)
            return rt * (-np.expm1(np.log1p(-t) / m))
        if order == 1:
            return r ** (m - 1.0) * rest ** (1.0 / m - 1.0)
        return (m - 1.0) * rt**m * r ** (m - 2.0) * rest ** (1.0 / m - 2.0)

    def h1(self, r, m):
        self._check_domain(r)
        r = np.abs(np.asarray(r, dtype=float))
        if self.kind == "flat":
            return np.zeros_like(r)
        if self.kind == "power":
            scale = self.lam if self.symmetric else 2.0 * self.lam
            return scale * r**m
        return self._curv(r, m, 0)

    def h2(self, r, m):
        self._check_domain(r)
        r = np.abs(np.asarray(r, dtype=float))
        if self.kind == "flat":
            return np.zeros_like(r)
        if self.kind == "power":
            return -self.lam * r**m if self.symmetric else np.zeros_like(r)
        return -self._curv(r, m, 0)

    def dh1(self, r, m):
        """Radial derivative of h1 at radius |r| (signed by sign of r)."""
        self._check_domain(r)
        r = np.asarray(r, dtype=float)
        s, a = np.sign(r), np.abs(r)
        if self.kind == "flat":
            return np.zeros_like(a)
        if self.kind == "power":
            scale = self.lam if self.symmetric else 2.0 * self.lam
            return s * m * scale * a ** (m - 1.0)
        return s * self._curv(a, m, 1)

    def dh2(self, r, m):
        self._check_domain(r)
        r = np.asarray(r, dtype=float)
        s, a = np.sign(r), np.abs(r)
        if self.kind == "flat":
            return np.zeros_like(a)
        if self.kind == "power":
            return -s * m * self.lam * a ** (m - 1.0) if self.symmetric else np.zeros_like(a)
        return -s * self._curv(a, m, 1)

    def d2h1(self, r, m):
        self._check_domain(r)
        a = np.abs(np.asarray(r, dtype=float))
        if self.kind == "flat":
            return np.zeros_like(a)
        if self.kind == "power":
            scale = self.lam if self.symmetric else 2.0 * self.lam
            return m * (m - 1.0) * scale * a ** (m - 2.0)
        return self._curv(a, m, 2)

    def d2h2(self, r, m):
        self._check_domain(r)
        a = np.abs(np.asarray(r, dtype=float))
        if self.kind == "flat":
            return np.zeros_like(a)
        if self.kind == "power":
            return -m * (m - 1.0) * self.lam * a ** (m - 2.0) if self.symmetric else np.zeros_like(a)
        return -self._curv(a, m, 2)


@dataclass(frozen=True)
class ConvexityBounds:
    """Positive, eps-independent curvature-scale constants kappa1..kappa4."""

    kappa1: float
    kappa2: float
    kappa3: float
    kappa4: float

    def __post_init__(self):
        if not (0.0 < self.kappa1 <= self.kappa2):
            raise ParameterError("require 0 < kappa1 <= kappa2")
        if self.kappa3 <= 0 or self.kappa4 <= 0:
            raise ParameterError("require kappa3, kappa4 > 0")


@dataclass(frozen=True)
class GapGeometry:
    """The inclusion pair: dimension, convexity exponent, gap and profiles.

    eps = 0 is accepted so that the gap-width rule can be evaluated for
    touching inclusions; operations that need a genuine gap (solver grids,
    barrier windows) insist on eps > 0 themselves.
    """

    d: int
    m: float
    eps: float
    profile: ProfileSpec
    R0: float
    kappa: Optional[ConvexityBounds] = None

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ParameterError("dimension d must be 2 or 3")
        if self.m < 2.0:
            raise ParameterError("convexity exponent m must be >= 2")
        if self.eps < 0.0:
            raise ParameterError("gap distance eps must be >= 0")
        if self.R0 <= 0.0:
            raise ParameterError("neck half-length R0 must be > 0")
        if 2.0 * self.R0 >= self.profile.domain_radius:
            raise GeometryError(
                "admissibility window 2*R0 exceeds the profile domain"
            )

    @property
    def r_tilde0(self) -> Optional[float]:
        return self.profile.r_tilde0

    def _radius(self, xprime) -> float:
        x = np.asarray(xprime, dtype=float)
        if x.ndim == 0:
            return float(abs(x))
        if x.shape == (self.d - 1,):
            return float(np.linalg.norm(x))
        raise DomainError(f"xprime must be scalar or length-{self.d - 1} vector")

    def delta_r(self, r):
        """Gap width at radius r (vectorized; r may be signed)."""
        a = np.abs(np.asarray(r, dtype=float))
        return self.eps + self.profile.h1(a, self.m) - self.profile.h2(a, self.m)

    def delta(self, xprime) -> float:
        return float(self.delta_r(self._radius(xprime)))


def eval_delta(geometry: GapGeometry, xprime) -> float:
    """Gap width eps + h1(x') - h2(x') at a horizontal point."""
    return geometry.delta(xprime)


@dataclass(frozen=True)
class AdmissibilityReport:
    """Sampled (H1)-(H3) margins, tightest kappas, and the verdict.

    Margins are nonnegative where the hypothesis holds; `passed` applies a
    relative rounding guard of 1e-12 so that exact-equality profiles (power)
    are not failed by the last bit of a division.  The C^m norm in (H3) is
    sampled through second derivatives, which is what the analytic profile
    rules expose; `estimation_method` records per constant whether a closed
    form or a sampled supremum was used.
    """

    radii: np.ndarray
    h1_check: dict
    h2_check: dict
    gap_lower_margin: np.ndarray
    gap_upper_margin: np.ndarray
    h3_margin: float
    estimated_kappas: dict
    estimation_method: dict
    passed: bool
    failures: tuple

    def to_dict(self) -> dict:
        return {
            "passed": bool(self.passed),
            "failures": list(self.failures),
            "estimated_kappas": dict(self.estimated_kappas),
            "estimation_method": dict(self.estimation_method),
            "n_samples": int(self.radii.size),
            "min_margins": {
                "H1_lower": float(np.min(self.gap_lower_margin)),
                "H1_upper": float(np.min(self.gap_upper_margin)),
                "H2_h1": float(np.min(self.h1_check["H2"])),
                "H2_h2": float(np.min(self.h2_check["H2"])),
                "H3": float(self.h3_margin),
            },
        }


def check_admissibility(geometry: GapGeometry, samples: int = 64) -> AdmissibilityReport:
    """Evaluate (H1)-(H3) on a log-spaced radial sample of B'_{2R0}.

    Reports the tightest kappas fitting the sampled profile and pass/fail
    against the geometry's ConvexityBounds (against the estimates when no
    bounds were provided).
    """
    if samples < 16:
        raise ParameterError("samples must be >= 16")
    prof, m = geometry.profile, geometry.m
    r = np.geomspace(_R_SAMPLE_MIN, 2.0 * geometry.R0, samples)

    h1, h2 = prof.h1(r, m), prof.h2(r, m)
    dh1, dh2 = prof.dh1(r, m), prof.dh2(r, m)
    d2h1, d2h2 = prof.d2h1(r, m), prof.d2h2(r, m)
    if not (np.all(np.isfinite(dh1)) and np.all(np.isfinite(dh2))):
        raise DomainError("profile not differentiable at a sampled radius")

    gap = h1 - h2
    rm, rm1 = r**m, r ** (m - 1.0)

    method = {"kappa1": "sampled", "kappa2": "sampled", "kappa3": "sampled", "kappa4": "sampled"}
    if prof.kind == "power":
        scale = 2.0 * prof.lam
        k1_est = k2_est = scale
        k3_est = m * prof.lam * (1.0 if prof.symmetric else 2.0)
        method.update(kappa1="exact", kappa2="exact", kappa3="exact")
    elif prof.kind == "flat":
        k1_est = k2_est = 0.0
        k3_est = 0.0
    else:
        ratio = gap / rm
        k1_est, k2_est = float(np.min(ratio)), float(np.max(ratio))
        k3_est = float(np.max(np.maximum(np.abs(dh1), np.abs(dh2)) / rm1))
    # C^m norm proxy through the exposed derivative orders.
    k4_est = float(
        np.max(np.maximum.reduce([np.abs(h1), np.abs(dh1), np.abs(d2h1)]))
        + np.max(np.maximum.reduce([np.abs(h2), np.abs(dh2), np.abs(d2h2)]))
    )
    estimated = {"kappa1": k1_est, "kappa2": k2_est, "kappa3": k3_est, "kappa4": k4_est}

    kb = geometry.kappa
    if kb is not None:
        k1, k2, k3, k4 = kb.kappa1, kb.kappa2, kb.kappa3, kb.kappa4
    else:
        k1, k2, k3, k4 = k1_est, k2_est, k3_est, k4_est

    gap_lower = gap - k1 * rm
    gap_upper = k2 * rm - gap
    h1_h2m = k3 * rm1 - np.abs(dh1)
    h2_h2m = k3 * rm1 - np.abs(dh2)
    h3_margin = k4 - k4_est

    failures = []
    guard = lambda margin, scale: np.all(margin >= -_MARGIN_RTOL * np.maximum(scale, 1e-300))
    if k1 <= 0.0 or not guard(gap_lower, np.maximum(k1 * rm, gap)):
        failures.append("H1 lower bound")
    if not guard(gap_upper, np.maximum(k2 * rm, gap)):
        failures.append("H1 upper bound")
    if k3 <= 0.0 or not guard(h1_h2m, k3 * rm1) or not guard(h2_h2m, k3 * rm1):
        failures.append("H2 gradient bound")
    if h3_margin < -_MARGIN_RTOL * max(k4, 1e-300):
        failures.append("H3 norm bound")

    return AdmissibilityReport(
        radii=r,
        h1_check={"H2": h1_h2m, "H3": float(np.max(np.abs(d2h1)))},
        h2_check={"H2": h2_h2m, "H3": float(np.max(np.abs(d2h2)))},
        gap_lower_margin=gap_lower,
        gap_upper_margin=gap_upper,
        h3_margin=float(h3_margin),
        estimated_kappas=estimated,
        estimation_method=method,
        passed=not failures,
        failures=tuple(failures),
    )


def estimated_bounds(geometry: GapGeometry, samples: int = 64) -> ConvexityBounds:
    """Tightest ConvexityBounds fitting the sampled profile."""
    est = check_admissibility(geometry, samples).estimated_kappas
    return ConvexityBounds(est["kappa1"], est["kappa2"], est["kappa3"], est["kappa4"])


@dataclass(frozen=True)
class GeometryConstants:
    """Closed-form gap-equivalence radii and admissible-length caps.

    R03 depends on the iteration factor mu0 whose value is not pinned down
    by any closed form; it stays None unless the caller supplies mu0, in
    which case no correctness of the supplied value is claimed.
    """

    c0: float
    c_tilde0: float
    R01: float
    R02: float
    j0: int
    r01: float
    r02: float
    r03: float
    r04: float
    R03: Optional[float] = None

    def to_dict(self) -> dict:
        out = {
            "c0": self.c0,
            "c_tilde0": self.c_tilde0,
            "R01": self.R01,
            "R02": self.R02,
            "R03": self.R03,
            "j0": self.j0,
            "r01": self.r01,
            "r02": self.r02,
            "r03": self.r03,
            "r04": self.r04,
        }
        return out


def compute_constants(
    geometry: GapGeometry,
    p: float,
    beta: float,
    mu0: Optional[float] = None,
) -> GeometryConstants:
    """Evaluate every closed-form constant from the convexity bounds.

    R03 is returned only when the caller supplies the iteration factor mu0;
    otherwise it is flagged unavailable (None).
    """
    if p <= 1.0:
        raise ParameterError("nonlinearity exponent p must be > 1")
    if not (0.0 < beta < 1.0):
        raise ParameterError("beta must lie in (0, 1)")
    if geometry.kappa is None:
        raise GeometryError("compute_constants needs ConvexityBounds on the geometry")
    kb = geometry.kappa
    k1, k2, k3, k4 = kb.kappa1, kb.kappa2, kb.kappa3, kb.kappa4
    m, d = geometry.m, geometry.d

    c0 = k1 ** (-1.0 / m) * min(1.0, 2.0 ** (-(m + 1.0)) * k1 / k3)
    c_t0 = k1 ** (-1.0 / m) * min(1.0, (k1 / k3) * (51840.0 + 4.0 ** (m + 1.0)) ** (-0.5))

    e2 = 1.0 / (2.0 * m - 2.0)
    R01 = (
        2.0 ** (-m / (m - 1.0))
        * (k2 * k3) ** (-e2)
        * min(
            1.0,
            (k1 ** (1.0 / m) * c0) ** e2 / 2.0 ** (1.0 / (m - 1.0)),
            (k1 / k3) ** e2 / 2.0 ** ((2.0 * m - 1.0) * e2),
        )
    )
    R02 = min(
        2.0 ** (-(2.0 * m + 1.0) / (2.0 * m - 1.0)) * k3 ** (-1.0 / (m - 1.0)),
        (math.sqrt(2.0) * k2 * k4 * (d - 1) ** 2) ** (-1.0 / m),
    )
    j0 = int(math.floor(6.0 * d / min(p, 2.0))) + 1
    R03 = None
    if mu0 is not None:
        if not (0.0 < mu0 < 1.0):
            raise ParameterError("mu0 must lie in (0, 1)")
        R03 = ((12.0 / 13.0) * c_t0 * mu0**j0) ** (1.0 / (m - 1.0)) * k2 ** (-1.0 / m)

    R0 = geometry.R0
    r01 = min(2.0 ** (1.0 / m), (2.0 / 3.0) * R0)
    base = (min(1.0, 4.0 ** (-(m + 1.0)) * k1) / (k2 * (k3 + k4) + k3 * (k3 + 1.0))) ** (
        1.0 / (m - 1.0)
    )
    if m < 3.0:
        r02 = base * 6.0 ** (-(m + 2.0) / (m - 1.0)) / (d - 1) ** (2.0 / (m - 1.0))
    else:
        r02 = base * 4.0 ** (-m / (m - 1.0))
    r03 = 2.0 ** (-3.0 * (m + 1.0) / (m - 1.0)) * (k1 / k3) ** (1.0 / (m - 1.0))
    r04 = min(R0 ** (1.0 / (1.0 - beta)), 2.0 ** (-1.0 / beta)) / (c_t0 * (2.0 * k2) ** (1.0 / m))

    return GeometryConstants(
        c0=c0, c_tilde0=c_t0, R01=R01, R02=R02, R03=R03, j0=j0,
        r01=r01, r02=r02, r03=r03, r04=r04,
    )
