"""Regularized p-Laplace solver on the 2D neck in flattened coordinates.

The thin gap {|x1| < L, -eps/2 + h2(x1) < x2 < eps/2 + h1(x1)} is mapped
onto the rectangle [-L, L] x [0, 1] by the vertical scaling

    x1 = y1,   x2 = -eps/2 + h2(y1) + y2 * delta(y1),

whose Jacobian determinant is the gap width delta(y1) > 0.  Writing
b = h2' + y2 * delta', the pulled-back weak form of

    div( (sigma + |grad u|^2)^((p-2)/2) grad u ) = 0

uses the symmetric tensor M = [[delta, -b], [-b, (b^2+1)/delta]], so the
flux through a face with normal n is k(q) * (M g) . n with g the flattened
gradient, q = |grad_x u|^2 = (g1 - (b/delta) g2)^2 + (g2/delta)^2 and
k(q) = (sigma + q)^((p-2)/2).

Discretization is cell-centered finite volumes on the graded tensor grid
(y1 graded toward the neck by y1 = sign(s) L |s|^q): conservation is exact
by construction and no mesh library is required.  Face-normal gradients
are two-point differences; face-tangential gradients average the adjacent
cell-center differences.  Lateral boundaries carry Dirichlet data
(+/- lateral_value, or a manufactured field in override mode); the walls
carry the zero-conormal-flux condition exactly (no wall flux is ever
assembled) unless overridden.

Nonlinear strategy: frozen-coefficient (Kacanov) iteration for p <= 2 with
a Newton polish, damped Newton with residual backtracking plus continuation
in p for p > 2.  Every accepted step strictly decreases the nonlinear
residual norm.  Linear systems are solved by an equilibrated sparse direct
method with iterative refinement to relative residual 1e-10 (or the
float64 backward-error floor of the anisotropic tensor, whichever is
larger; see _linsolve).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    DomainError,
    GeometryError,
    NumericError,
    ParameterError,
    SolverError,
)
from .geometry import GapGeometry

_LIN_RTOL = 1e-10          # contractual linear-solve relative residual
_ARMIJO = 1e-4
_MIN_STEP = 1e-9


@dataclass(frozen=True)
class SolverConfig:
    """Numerical parameters of one neck solve.

    sigma = None resolves to the reported default 1e-12 * (lateral_value/L)^2
    at solve time; the resolved value is stored on the returned field.
    """

    p: float
    sigma: Optional[float] = None
    tol_nonlinear: float = 1e-10
    max_outer: int = 80
    damping: float = 0.5
    n1: int = 256
    n2: int = 32
    grading_q: float = 2.0
    lateral_value: float = 1.0

    def __post_init__(self):
        if self.p <= 1.0:
            raise ParameterError("p must be > 1")
        if self.sigma is not None and self.sigma <= 0.0:
            raise ParameterError("regularization sigma must be > 0")
        if not (0.0 < self.tol_nonlinear <= 1e-2):
            raise ParameterError("tol_nonlinear must lie in (0, 1e-2]")
        if self.n1 < 8 or self.n2 < 8:
            raise ParameterError("need n1, n2 >= 8")
        if self.n1 % 2:
            raise ParameterError("n1 must be even (grid symmetric about y1 = 0)")
        if not (0.0 < self.damping < 1.0):
            raise ParameterError("damping must lie in (0, 1)")
        if self.grading_q < 1.0:
            raise ParameterError("grading exponent must be >= 1")
        if self.max_outer < 1:
            raise ParameterError("max_outer must be >= 1")


@dataclass(frozen=True)
class TransformedGrid:
    """Tensor grid on [-L, L] x [0, 1] with per-node geometric data."""

    geometry: GapGeometry
    L: float
    n1: int
    n2: int
    y1_faces: np.ndarray
    y1_centers: np.ndarray
    dy1: np.ndarray
    y2_faces: np.ndarray
    y2_centers: np.ndarray
    dy2: float
    delta_c: np.ndarray
    h2_c: np.ndarray
    dh1_c: np.ndarray
    dh2_c: np.ndarray
    ddelta_c: np.ndarray
    delta_xf: np.ndarray
    h2_xf: np.ndarray
    dh2_xf: np.ndarray
    ddelta_xf: np.ndarray

    def x2(self, i, j):
        """Physical height of cell center (i, j)."""
        return (
            -self.geometry.eps / 2.0
            + self.h2_c[i]
            + self.y2_centers[j] * self.delta_c[i]
        )

    def x2_grid(self) -> np.ndarray:
        return (
            -self.geometry.eps / 2.0
            + self.h2_c[:, None]
            + self.y2_centers[None, :] * self.delta_c[:, None]
        )


def build_grid(geometry: GapGeometry, config: SolverConfig, L: float) -> TransformedGrid:
    """Graded tensor grid over the neck |y1| <= L with exact coefficients."""
    if L <= 0.0:
        raise ParameterError("L must be > 0")
    if L > geometry.R0:
        raise ParameterError("neck half-length L exceeds R0")
    prof, m = geometry.profile, geometry.m
    if L >= prof.domain_radius:
        raise DomainError("L reaches beyond the profile domain")

    n1, n2 = config.n1, config.n2
    s = np.linspace(-1.0, 1.0, n1 + 1)
    y1f = L * np.sign(s) * np.abs(s) ** config.grading_q
    y1c = 0.5 * (y1f[:-1] + y1f[1:])
    dy1 = np.diff(y1f)
    y2f = np.linspace(0.0, 1.0, n2 + 1)
    y2c = 0.5 * (y2f[:-1] + y2f[1:])
    dy2 = 1.0 / n2

    delta_c = geometry.delta_r(y1c)
    delta_xf = geometry.delta_r(y1f)
    if np.any(delta_c <= 0.0) or np.any(delta_xf <= 0.0):
        raise GeometryError("inclusions overlap: delta <= 0 inside the neck")

    return TransformedGrid(
        geometry=geometry, L=L, n1=n1, n2=n2,
        y1_faces=y1f, y1_centers=y1c, dy1=dy1,
        y2_faces=y2f, y2_centers=y2c, dy2=dy2,
        delta_c=delta_c,
        h2_c=np.asarray(prof.h2(y1c, m)),
        dh1_c=np.asarray(prof.dh1(y1c, m)),
        dh2_c=np.asarray(prof.dh2(y1c, m)),
        ddelta_c=np.asarray(prof.dh1(y1c, m) - prof.dh2(y1c, m)),
        delta_xf=delta_xf,
        h2_xf=np.asarray(prof.h2(y1f, m)),
        dh2_xf=np.asarray(prof.dh2(y1f, m)),
        ddelta_xf=np.asarray(prof.dh1(y1f, m) - prof.dh2(y1f, m)),
    )


@dataclass
class IterationTrace:
    """Bookkeeping of the nonlinear iteration (energies are a surrogate
    quadrature of (sigma + |grad u|^2)^(p/2) / p over the physical cells)."""

    outer_iterations: int = 0
    linear_iterations: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)
    stages: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "outer_iterations": self.outer_iterations,
            "linear_iterations": list(self.linear_iterations),
            "energies": list(self.energies),
            "step_sizes": list(self.step_sizes),
            "stages": list(self.stages),
        }


@dataclass
class DiscreteField:
    """Solved nodal field with reconstructed physical gradient."""

    u: np.ndarray                 # (n1, n2) cell-center values
    grad_phys: np.ndarray         # (n1, n2, 2) physical gradient
    residual_history: list        # relative residuals of the final stage
    converged: bool
    grid: TransformedGrid
    p: float
    sigma_used: float
    lateral_value: float
    trace: IterationTrace
    boundary_flux: tuple          # (through y1=-L, through y1=+L)

    @property
    def flux_imbalance(self) -> float:
        lo, hi = self.boundary_flux
        return abs(hi - lo) / max(abs(hi), abs(lo), 1e-300)


# ---------------------------------------------------------------------------
# Operator assembly
# ---------------------------------------------------------------------------

def _deriv3(x0, x1, x2, xt):
    """Weights (w0, w1, w2) with f'(xt) ~ w0 f(x0) + w1 f(x1) + w2 f(x2)."""
    w0 = (2.0 * xt - x1 - x2) / ((x0 - x1) * (x0 - x2))
    w1 = (2.0 * xt - x0 - x2) / ((x1 - x0) * (x1 - x2))
    w2 = (2.0 * xt - x0 - x1) / ((x2 - x0) * (x2 - x1))
    return w0, w1, w2


class _BoundaryData(NamedTuple):
    left_u: np.ndarray
    right_u: np.ndarray
    left_t: np.ndarray            # tangential (y2) data derivative on x = -L
    right_t: np.ndarray
    wall_dirichlet: bool
    bottom_u: Optional[np.ndarray] = None
    top_u: Optional[np.ndarray] = None
    bottom_t: Optional[np.ndarray] = None   # tangential (y1) derivative along walls
    top_t: Optional[np.ndarray] = None


def _lateral_data(grid: TransformedGrid, lateral_value: float) -> _BoundaryData:
    n2 = grid.n2
    return _BoundaryData(
        left_u=np.full(n2, -lateral_value),
        right_u=np.full(n2, +lateral_value),
        left_t=np.zeros(n2),
        right_t=np.zeros(n2),
        wall_dirichlet=False,
    )


def _override_data(grid: TransformedGrid, fn: Callable) -> _BoundaryData:
    """Dirichlet data on all four sides from a manufactured field."""
    eps = grid.geometry.eps
    prof, m = grid.geometry.profile, grid.geometry.m

    def vg(x1, x2):
        out = fn(np.array([x1, x2]))
        return float(out[0]), np.asarray(out[1], dtype=float)

    n1, n2 = grid.n1, grid.n2
    left_u, right_u = np.empty(n2), np.empty(n2)
    left_t, right_t = np.empty(n2), np.empty(n2)
    for jj in range(n2):
        for sgn, uarr, tarr in ((-1, left_u, left_t), (+1, right_u, right_t)):
            x1 = sgn * grid.L
            x2 = -eps / 2.0 + float(prof.h2(x1, m)) + grid.y2_centers[jj] * float(
                grid.geometry.delta_r(x1)
            )
            val, grad = vg(x1, x2)
            uarr[jj] = val
            tarr[jj] = float(grid.geometry.delta_r(x1)) * grad[1]

    bottom_u, top_u = np.empty(n1), np.empty(n1)
    bottom_t, top_t = np.empty(n1), np.empty(n1)
    for ii in range(n1):
        x1 = grid.y1_centers[ii]
        xb = -eps / 2.0 + grid.h2_c[ii]
        xt = xb + grid.delta_c[ii]
        val, grad = vg(x1, xb)
        bottom_u[ii] = val
        bottom_t[ii] = grad[0] + grid.dh2_c[ii] * grad[1]
        val, grad = vg(x1, xt)
        top_u[ii] = val
        top_t[ii] = grad[0] + (grid.dh2_c[ii] + grid.ddelta_c[ii]) * grad[1]

    return _BoundaryData(
        left_u=left_u, right_u=right_u, left_t=left_t, right_t=right_t,
        wall_dirichlet=True,
        bottom_u=bottom_u, top_u=top_u, bottom_t=bottom_t, top_t=top_t,
    )


class _Ops(NamedTuple):
    nc: int
    G1X: sp.csr_matrix
    c1x: np.ndarray
    G2X: sp.csr_matrix
    c2x: np.ndarray
    G1Y: sp.csr_matrix
    c1y: np.ndarray
    G2Y: sp.csr_matrix
    c2y: np.ndarray
    DIVX: sp.csr_matrix
    DIVY: sp.csr_matrix
    m11x: np.ndarray
    m12x: np.ndarray
    bx: np.ndarray
    deltax: np.ndarray
    areax: np.ndarray
    m21y: np.ndarray
    m22y: np.ndarray
    by: np.ndarray
    deltay: np.ndarray
    areay: np.ndarray
    D1C: sp.csr_matrix
    d1c_const: np.ndarray
    D2C: sp.csr_matrix
    d2c_const: np.ndarray
    b_c: np.ndarray
    cell_measure: np.ndarray


def _assemble_ops(grid: TransformedGrid, data: _BoundaryData) -> _Ops:
    n1, n2 = grid.n1, grid.n2
    nc = n1 * n2
    K = np.arange(nc).reshape(n1, n2)
    y1c, L, dy2 = grid.y1_centers, grid.L, grid.dy2

    # -- cell-center d/dy1 (Dirichlet ends enter through the data const) ----
    rows, cols, vals = [], [], []
    d1c_const = np.zeros(nc)
    wf, w0, w1 = _deriv3(-L, y1c[0], y1c[1], y1c[0])
    rows += [K[0, :], K[0, :]]
    cols += [K[0, :], K[1, :]]
    vals += [np.full(n2, w0), np.full(n2, w1)]
    d1c_const[K[0, :]] = wf * data.left_u
    for i in range(1, n1 - 1):
        a, b, c = _deriv3(y1c[i - 1], y1c[i], y1c[i + 1], y1c[i])
        rows += [K[i, :], K[i, :], K[i, :]]
        cols += [K[i - 1, :], K[i, :], K[i + 1, :]]
        vals += [np.full(n2, a), np.full(n2, b), np.full(n2, c)]
    w0, w1, wf = _deriv3(y1c[-2], y1c[-1], L, y1c[-1])
    rows += [K[-1, :], K[-1, :]]
    cols += [K[-2, :], K[-1, :]]
    vals += [np.full(n2, w0), np.full(n2, w1)]
    d1c_const[K[-1, :]] = wf * data.right_u
    D1C = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nc, nc)
    )

    # -- cell-center d/dy2 --------------------------------------------------
    rows, cols, vals = [], [], []
    d2c_const = np.zeros(nc)
    y2c = grid.y2_centers
    if data.wall_dirichlet:
        wfb, w0, w1 = _deriv3(0.0, y2c[0], y2c[1], y2c[0])
        rows += [K[:, 0], K[:, 0]]
        cols += [K[:, 0], K[:, 1]]
        vals += [np.full(n1, w0), np.full(n1, w1)]
        d2c_const[K[:, 0]] = wfb * data.bottom_u
        w0, w1, wft = _deriv3(y2c[-2], y2c[-1], 1.0, y2c[-1])
        rows += [K[:, -1], K[:, -1]]
        cols += [K[:, -2], K[:, -1]]
        vals += [np.full(n1, w0), np.full(n1, w1)]
        d2c_const[K[:, -1]] = wft * data.top_u
    else:
        a, b, c = _deriv3(y2c[0], y2c[1], y2c[2], y2c[0])
        rows += [K[:, 0]] * 3
        cols += [K[:, 0], K[:, 1], K[:, 2]]
        vals += [np.full(n1, a), np.full(n1, b), np.full(n1, c)]
        a, b, c = _deriv3(y2c[-3], y2c[-2], y2c[-1], y2c[-1])
        rows += [K[:, -1]] * 3
        cols += [K[:, -3], K[:, -2], K[:, -1]]
        vals += [np.full(n1, a), np.full(n1, b), np.full(n1, c)]
    for j in range(1, n2 - 1):
        w = 0.5 / dy2
        rows += [K[:, j], K[:, j]]
        cols += [K[:, j - 1], K[:, j + 1]]
        vals += [np.full(n1, -w), np.full(n1, w)]
    D2C = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nc, nc)
    )

    # -- x-face operators ----------------------------------------------------
    # Boundary faces use the second-order one-sided stencil through the
    # Dirichlet value; the half-cell two-point gradient leaves an O(h)
    # flux defect trapped in the boundary column.
    nxf = (n1 + 1) * n2
    FXI = np.arange(nxf).reshape(n1 + 1, n2)
    rows, cols, vals = [], [], []
    c1x = np.zeros(nxf)
    wf, w0, w1 = _deriv3(-L, y1c[0], y1c[1], -L)
    rows += [FXI[0, :], FXI[0, :]]
    cols += [K[0, :], K[1, :]]
    vals += [np.full(n2, w0), np.full(n2, w1)]
    c1x[FXI[0, :]] = wf * data.left_u
    for i in range(1, n1):
        h = y1c[i] - y1c[i - 1]
        rows += [FXI[i, :], FXI[i, :]]
        cols += [K[i - 1, :], K[i, :]]
        vals += [np.full(n2, -1.0 / h), np.full(n2, 1.0 / h)]
    w0, w1, wf = _deriv3(y1c[-2], y1c[-1], L, L)
    rows += [FXI[-1, :], FXI[-1, :]]
    cols += [K[-2, :], K[-1, :]]
    vals += [np.full(n2, w0), np.full(n2, w1)]
    c1x[FXI[-1, :]] = wf * data.right_u
    G1X = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nxf, nc)
    )

    rows, cols, vals = [], [], []
    c2x_b = np.zeros(nxf)
    for i in range(1, n1):
        rows += [FXI[i, :], FXI[i, :]]
        cols += [K[i - 1, :], K[i, :]]
        vals += [np.full(n2, 0.5), np.full(n2, 0.5)]
    c2x_b[FXI[0, :]] = data.left_t
    c2x_b[FXI[-1, :]] = data.right_t
    AVGX = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nxf, nc)
    )
    G2X = (AVGX @ D2C).tocsr()
    c2x = AVGX @ d2c_const + c2x_b

    # -- y-face operators ----------------------------------------------------
    if data.wall_dirichlet:
        nyf = n1 * (n2 + 1)
        FYI = np.arange(nyf).reshape(n1, n2 + 1)
        jlist = range(0, n2 + 1)
    else:
        nyf = n1 * (n2 - 1)
        FYI = np.full((n1, n2 + 1), -1, dtype=int)
        FYI[:, 1:n2] = np.arange(nyf).reshape(n1, n2 - 1)
        jlist = range(1, n2)

    rows, cols, vals = [], [], []
    c2y = np.zeros(nyf)
    arows, acols, avals = [], [], []
    c1y_b = np.zeros(nyf)
    for jf in jlist:
        idx = FYI[:, jf]
        if 1 <= jf <= n2 - 1:
            rows += [idx, idx]
            cols += [K[:, jf - 1], K[:, jf]]
            vals += [np.full(n1, -1.0 / dy2), np.full(n1, 1.0 / dy2)]
            arows += [idx, idx]
            acols += [K[:, jf - 1], K[:, jf]]
            avals += [np.full(n1, 0.5), np.full(n1, 0.5)]
        elif jf == 0:
            wfb, w0b, w1b = _deriv3(0.0, grid.y2_centers[0], grid.y2_centers[1], 0.0)
            rows += [idx, idx]
            cols += [K[:, 0], K[:, 1]]
            vals += [np.full(n1, w0b), np.full(n1, w1b)]
            c2y[idx] = wfb * data.bottom_u
            c1y_b[idx] = data.bottom_t
        else:
            w0t, w1t, wft = _deriv3(grid.y2_centers[-2], grid.y2_centers[-1], 1.0, 1.0)
            rows += [idx, idx]
            cols += [K[:, -2], K[:, -1]]
            vals += [np.full(n1, w0t), np.full(n1, w1t)]
            c2y[idx] = wft * data.top_u
            c1y_b[idx] = data.top_t
    G2Y = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nyf, nc)
    )
    AVGY = sp.csr_matrix(
        (np.concatenate(avals), (np.concatenate(arows), np.concatenate(acols))), shape=(nyf, nc)
    )
    G1Y = (AVGY @ D1C).tocsr()
    c1y = AVGY @ d1c_const + c1y_b

    # -- divergence ----------------------------------------------------------
    I, J = np.meshgrid(np.arange(n1), np.arange(n2), indexing="ij")
    kk = K.ravel()
    DIVX = sp.csr_matrix(
        (
            np.concatenate([np.full(nc, -1.0), np.full(nc, 1.0)]),
            (
                np.concatenate([kk, kk]),
                np.concatenate([FXI[I, J].ravel(), FXI[I + 1, J].ravel()]),
            ),
        ),
        shape=(nc, nxf),
    )
    drows, dcols, dvals = [], [], []
    for j in range(n2):
        if FYI[0, j] >= 0:
            drows.append(K[:, j])
            dcols.append(FYI[:, j])
            dvals.append(np.full(n1, -1.0))
        if FYI[0, j + 1] >= 0:
            drows.append(K[:, j])
            dcols.append(FYI[:, j + 1])
            dvals.append(np.full(n1, 1.0))
    DIVY = sp.csr_matrix(
        (np.concatenate(dvals), (np.concatenate(drows), np.concatenate(dcols))), shape=(nc, nyf)
    )

    # -- face geometry --------------------------------------------------------
    y2c_b = np.broadcast_to(grid.y2_centers, (n1 + 1, n2))
    bx = (grid.dh2_xf[:, None] + y2c_b * grid.ddelta_xf[:, None]).ravel()
    deltax = np.repeat(grid.delta_xf, n2)
    m11x = deltax
    m12x = -bx
    areax = np.full(nxf, dy2)

    by = np.zeros(nyf)
    deltay = np.zeros(nyf)
    areay = np.zeros(nyf)
    for jf in jlist:
        idx = FYI[:, jf]
        by[idx] = grid.dh2_c + grid.y2_faces[jf] * grid.ddelta_c
        deltay[idx] = grid.delta_c
        areay[idx] = grid.dy1
    m21y = -by
    m22y = (by**2 + 1.0) / deltay

    b_c = (grid.dh2_c[:, None] + grid.y2_centers[None, :] * grid.ddelta_c[:, None]).ravel()
    cell_measure = np.repeat(grid.dy1 * dy2 * grid.delta_c, n2)

    return _Ops(
        nc=nc,
        G1X=G1X, c1x=c1x, G2X=G2X, c2x=c2x,
        G1Y=G1Y, c1y=c1y, G2Y=G2Y, c2y=c2y,
        DIVX=DIVX, DIVY=DIVY,
        m11x=m11x, m12x=m12x, bx=bx, deltax=deltax, areax=areax,
        m21y=m21y, m22y=m22y, by=by, deltay=deltay, areay=areay,
        D1C=D1C, d1c_const=d1c_const, D2C=D2C, d2c_const=d2c_const,
        b_c=b_c, cell_measure=cell_measure,
    )


# ---------------------------------------------------------------------------
# Nonlinear machinery
# ---------------------------------------------------------------------------

def _kfun(q, p, sigma):
    return (sigma + q) ** ((p - 2.0) / 2.0)


def _pack(ops: _Ops, u: np.ndarray, p: float, sigma: float) -> dict:
    g1x = ops.G1X @ u + ops.c1x
    g2x = ops.G2X @ u + ops.c2x
    uxx = g1x - (ops.bx / ops.deltax) * g2x
    uyx = g2x / ops.deltax
    qx = uxx * uxx + uyx * uyx
    kx = _kfun(qx, p, sigma)
    FX = kx * (ops.m11x * g1x + ops.m12x * g2x) * ops.areax

    g1y = ops.G1Y @ u + ops.c1y
    g2y = ops.G2Y @ u + ops.c2y
    uxy = g1y - (ops.by / ops.deltay) * g2y
    uyy = g2y / ops.deltay
    qy = uxy * uxy + uyy * uyy
    ky = _kfun(qy, p, sigma)
    FY = ky * (ops.m21y * g1y + ops.m22y * g2y) * ops.areay

    return {
        "g1x": g1x, "g2x": g2x, "qx": qx, "kx": kx, "FX": FX,
        "g1y": g1y, "g2y": g2y, "qy": qy, "ky": ky, "FY": FY,
    }


def _residual(ops: _Ops, u, p, sigma):
    pk = _pack(ops, u, p, sigma)
    return ops.DIVX @ pk["FX"] + ops.DIVY @ pk["FY"], pk


def _row_scale(G, w):
    return G.multiply(w[:, None]).tocsr()


def _kacanov_system(ops: _Ops, pk: dict):
    wx = pk["kx"] * ops.areax
    wy = pk["ky"] * ops.areay
    A = (
        ops.DIVX @ (_row_scale(ops.G1X, wx * ops.m11x) + _row_scale(ops.G2X, wx * ops.m12x))
        + ops.DIVY @ (_row_scale(ops.G1Y, wy * ops.m21y) + _row_scale(ops.G2Y, wy * ops.m22y))
    ).tocsc()
    b = -(
        ops.DIVX @ (wx * (ops.m11x * ops.c1x + ops.m12x * ops.c2x))
        + ops.DIVY @ (wy * (ops.m21y * ops.c1y + ops.m22y * ops.c2y))
    )
    return A, b


def _newton_matrix(ops: _Ops, pk: dict, p: float, sigma: float):
    dkx = 0.5 * (p - 2.0) * (sigma + pk["qx"]) ** ((p - 4.0) / 2.0)
    c12x = -ops.bx / ops.deltax
    c22x = (ops.bx**2 + 1.0) / ops.deltax**2
    mgx = ops.m11x * pk["g1x"] + ops.m12x * pk["g2x"]
    cg1x = pk["g1x"] + c12x * pk["g2x"]
    cg2x = c12x * pk["g1x"] + c22x * pk["g2x"]
    w1x = ops.areax * (2.0 * dkx * mgx * cg1x + pk["kx"] * ops.m11x)
    w2x = ops.areax * (2.0 * dkx * mgx * cg2x + pk["kx"] * ops.m12x)

    dky = 0.5 * (p - 2.0) * (sigma + pk["qy"]) ** ((p - 4.0) / 2.0)
    c12y = -ops.by / ops.deltay
    c22y = (ops.by**2 + 1.0) / ops.deltay**2
    mgy = ops.m21y * pk["g1y"] + ops.m22y * pk["g2y"]
    cg1y = pk["g1y"] + c12y * pk["g2y"]
    cg2y = c12y * pk["g1y"] + c22y * pk["g2y"]
    w1y = ops.areay * (2.0 * dky * mgy * cg1y + pk["ky"] * ops.m21y)
    w2y = ops.areay * (2.0 * dky * mgy * cg2y + pk["ky"] * ops.m22y)

    return (
        ops.DIVX @ (_row_scale(ops.G1X, w1x) + _row_scale(ops.G2X, w2x))
        + ops.DIVY @ (_row_scale(ops.G1Y, w1y) + _row_scale(ops.G2Y, w2y))
    ).tocsc()


def _linsolve(A, rhs):
    """Direct sparse solve meeting the contractual relative residual 1e-10.

    Symmetric diagonal equilibration plus iterative refinement.  In the
    strongly anisotropic flattened metric the terms of A @ x cancel by up
    to 1/delta^2, so the measurable residual bottoms out at the float64
    evaluation floor eps_mach * || |A| |x| ||; the contract is enforced
    against max of the right-hand-side scale and that floor (the normwise
    backward-error criterion).
    """
    d = np.abs(A.diagonal())
    s = 1.0 / np.sqrt(np.maximum(d, 1e-30 * max(float(d.max()), 1e-300)))
    S = sp.diags(s)
    lu = spla.splu((S @ A @ S).tocsc())
    absA = A.copy()
    absA.data = np.abs(absA.data)
    bnorm = max(float(np.linalg.norm(rhs)), 1e-300)
    eps_mach = np.finfo(float).eps

    x = s * lu.solve(s * rhs)
    for _ in range(8):
        floor = 50.0 * eps_mach * float(np.linalg.norm(absA @ np.abs(x)))
        resid = rhs - A @ x
        if float(np.linalg.norm(resid)) <= max(_LIN_RTOL * bnorm, floor):
            return x
        x = x + s * lu.solve(s * resid)
    floor = 50.0 * eps_mach * float(np.linalg.norm(absA @ np.abs(x)))
    if float(np.linalg.norm(A @ x - rhs)) > max(_LIN_RTOL * bnorm, floor):
        raise NumericError("sparse linear solve failed its residual contract")
    return x


def _stage(ops, u, p, sigma, tol, max_outer, damping, allow_kacanov, trace, cell_geo):
    """Drive one fixed-p solve; returns (u, history). Raises SolverError."""
    R, pk = _residual(ops, u, p, sigma)
    _, b0 = _kacanov_system(ops, pk)
    scale = max(float(np.linalg.norm(b0)), 1e-300)
    rel = float(np.linalg.norm(R)) / scale
    hist = [rel]
    mode = "kacanov" if (allow_kacanov and p != 2.0) else ("linear" if p == 2.0 else "newton")
    stage_info = {"p": p, "mode0": mode}
    swapped = False

    for outer in range(max_outer):
        if rel <= tol:
            trace.stages.append({**stage_info, "iterations": outer, "final_rel": rel})
            return u, hist, True
        if mode in ("kacanov", "linear"):
            A, b = _kacanov_system(ops, pk)
            d = _linsolve(A, b) - u
        else:
            J = _newton_matrix(ops, pk, p, sigma)
            d = _linsolve(J, -R)
        trace.linear_iterations.append(1)

        lam = 1.0
        rnorm = float(np.linalg.norm(R))
        accepted = False
        while lam >= _MIN_STEP:
            u_try = u + lam * d
            R_try, pk_try = _residual(ops, u_try, p, sigma)
            if float(np.linalg.norm(R_try)) < (1.0 - _ARMIJO * lam) * rnorm:
                accepted = True
                break
            lam *= damping
        if not accepted:
            # One direction swap per iterate: Newton rescues a stalled
            # frozen-coefficient step and vice versa (an ill-conditioned
            # Newton matrix near convergence can yield a non-descent
            # direction that the better-conditioned frozen system avoids).
            if mode in ("kacanov", "linear"):
                mode = "newton"
                continue
            if not swapped:
                mode, swapped = "kacanov", True
                continue
            raise SolverError(
                f"no descent step found at p={p} (rel={rel:.3e})", hist
            )
        swapped = False

        u, R, pk = u_try, R_try, pk_try
        rel = float(np.linalg.norm(R)) / scale
        hist.append(rel)
        trace.outer_iterations += 1
        trace.step_sizes.append(lam)
        trace.energies.append(_cell_energy(ops, cell_geo, u, p, sigma))
        if mode == "kacanov" and (rel < 1e-2 or outer >= 25):
            mode = "newton"

    if rel <= tol:
        trace.stages.append({**stage_info, "iterations": max_outer, "final_rel": rel})
        return u, hist, True
    raise SolverError(f"nonlinear solve did not reach tol at p={p} (rel={rel:.3e})", hist)


def _cell_gradients(ops: _Ops, cell_geo, u):
    g1 = ops.D1C @ u + ops.d1c_const
    g2 = ops.D2C @ u + ops.d2c_const
    delta_c, b_c = cell_geo
    ux = g1 - (b_c / delta_c) * g2
    uy = g2 / delta_c
    return ux, uy


def _cell_energy(ops: _Ops, cell_geo, u, p, sigma):
    ux, uy = _cell_gradients(ops, cell_geo, u)
    q = ux * ux + uy * uy
    return float(np.sum(ops.cell_measure * (sigma + q) ** (p / 2.0) / p))


def solve(
    grid: TransformedGrid,
    config: SolverConfig,
    dirichlet_override: Optional[Callable] = None,
) -> DiscreteField:
    """Solve the flattened divergence-form problem on the neck.

    Default boundary conditions: u = -lateral_value at y1 = -L,
    +lateral_value at y1 = +L, zero conormal flux on the walls.  With
    `dirichlet_override` (a callable x -> (value, grad[, ...])) all four
    sides carry that field's trace instead; used for manufactured-solution
    verification.

    Non-convergence raises SolverError carrying the residual history;
    there is never a silent partial result.
    """
    if dirichlet_override is None:
        data = _lateral_data(grid, config.lateral_value)
    else:
        data = _override_data(grid, dirichlet_override)
    ops = _assemble_ops(grid, data)
    sigma = config.sigma
    if sigma is None:
        sigma = 1e-12 * (config.lateral_value / grid.L) ** 2

    delta_flat = np.repeat(grid.delta_c, grid.n2)
    cell_geo = (delta_flat, ops.b_c)

    if dirichlet_override is None:
        u = np.repeat(config.lateral_value * grid.y1_centers / grid.L, grid.n2)
    else:
        x2g = grid.x2_grid()
        u = np.array(
            [
                float(dirichlet_override(np.array([x1, x2]))[0])
                for x1, x2 in zip(
                    np.repeat(grid.y1_centers, grid.n2), x2g.ravel()
                )
            ]
        )

    trace = IterationTrace()
    p_final = config.p
    if p_final <= 2.0:
        u, hist, conv = _stage(
            ops, u, p_final, sigma, config.tol_nonlinear, config.max_outer,
            config.damping, True, trace, cell_geo,
        )
    else:
        dp = 1.0
        u_start = u.copy()
        for attempt in range(3):
            try:
                u = u_start.copy()
                nstep = max(1, int(math.ceil((p_final - 2.0) / dp)))
                ps = [2.0 + (p_final - 2.0) * k / nstep for k in range(nstep + 1)]
                for k, pstage in enumerate(ps):
                    last = k == len(ps) - 1
                    tol_k = config.tol_nonlinear if last else max(
                        1e-8, config.tol_nonlinear
                    )
                    u, hist, conv = _stage(
                        ops, u, pstage, sigma, tol_k, config.max_outer,
                        config.damping, pstage <= 2.0, trace, cell_geo,
                    )
                break
            except SolverError:
                if attempt == 2:
                    raise
                dp *= 0.5

    ux, uy = _cell_gradients(ops, cell_geo, u)
    grad = np.stack(
        [ux.reshape(grid.n1, grid.n2), uy.reshape(grid.n1, grid.n2)], axis=-1
    )
    pk = _pack(ops, u, p_final, sigma)
    FX = pk["FX"].reshape(grid.n1 + 1, grid.n2)
    flux = (float(FX[0, :].sum()), float(FX[-1, :].sum()))

    return DiscreteField(
        u=u.reshape(grid.n1, grid.n2),
        grad_phys=grad,
        residual_history=hist,
        converged=bool(conv),
        grid=grid,
        p=p_final,
        sigma_used=float(sigma),
        lateral_value=config.lateral_value,
        trace=trace,
        boundary_flux=flux,
    )


def normalized_coefficients(field: DiscreteField) -> np.ndarray:
    """Frozen coefficients of the non-divergence normalized form,
    a_ij = delta_ij + (p-2) (sigma + |g|^2)^(-1) g_i g_j, at cell centers."""
    g = field.grad_phys
    q = g[..., 0] ** 2 + g[..., 1] ** 2
    fac = (field.p - 2.0) / (field.sigma_used + q)
    a = np.zeros(g.shape[:2] + (2, 2))
    a[..., 0, 0] = 1.0 + fac * g[..., 0] ** 2
    a[..., 1, 1] = 1.0 + fac * g[..., 1] ** 2
    a[..., 0, 1] = a[..., 1, 0] = fac * g[..., 0] * g[..., 1]
    return a


# ---------------------------------------------------------------------------
# Field measurements (slab extrema use the piecewise-linear interpolant in
# y1 including the slab endpoints; cell-center sampling alone quantizes the
# extrema by half a cell, which the ratio diagnostics cannot afford)
# ---------------------------------------------------------------------------

def _slab_extrema(field: DiscreteField, lo: float, hi: float):
    y = field.grid.y1_centers
    if lo < y[0] or hi > y[-1] or lo > hi:
        raise DomainError("slab outside the sampled domain")
    inside = (y >= lo) & (y <= hi)
    u = field.u
    vmax, vmin = -np.inf, np.inf
    if np.any(inside):
        block = u[inside, :]
        vmax, vmin = float(block.max()), float(block.min())
    for j in range(field.grid.n2):
        col = u[:, j]
        for point in (lo, hi):
            v = float(np.interp(point, y, col))
            vmax = max(vmax, v)
            vmin = min(vmin, v)
    return vmin, vmax


def grad_max(field: DiscreteField, r: float) -> float:
    """Maximum physical gradient magnitude over cells with |x1| <= r."""
    if not field.converged:
        raise ParameterError("grad_max needs a converged field")
    sel = np.abs(field.grid.y1_centers) <= r
    if not np.any(sel):
        raise DomainError("measurement region |x1| <= r contains no cells")
    g = field.grad_phys[sel, :, :]
    return float(np.max(np.hypot(g[..., 0], g[..., 1])))


def oscillation(field: DiscreteField, center: float, radius: float) -> float:
    """max - min of u over the slab |x1 - center| < radius."""
    if not field.converged:
        raise ParameterError("oscillation needs a converged field")
    vmin, vmax = _slab_extrema(field, center - radius, center + radius)
    return vmax - vmin


class HarnackResult(NamedTuple):
    ratio: float
    degenerate: bool


def harnack_ratio(field: DiscreteField, r: float) -> HarnackResult:
    """sup/inf over the annulus r/2 <= |x1| <= r of w = sup_{|x1|<2r} u - u.

    Returns ratio 1 with the degeneracy flag when w is below 1e-12 times
    the field's total oscillation.
    """
    if not field.converged:
        raise ParameterError("harnack_ratio needs a converged field")
    y = field.grid.y1_centers
    if 2.0 * r > y[-1] or -2.0 * r < y[0]:
        raise DomainError("annulus outside the sampled domain")
    _, S = _slab_extrema(field, -2.0 * r, 2.0 * r)
    lo_min, lo_max = _slab_extrema(field, -r, -r / 2.0)
    hi_min, hi_max = _slab_extrema(field, r / 2.0, r)
    ann_min, ann_max = min(lo_min, hi_min), max(lo_max, hi_max)
    osc_total = float(field.u.max() - field.u.min())
    w_sup = S - ann_min
    if w_sup <= 1e-12 * osc_total:
        return HarnackResult(1.0, True)
    w_inf = S - ann_max
    if w_inf <= 0.0:
        return HarnackResult(math.inf, False)
    return HarnackResult(w_sup / w_inf, False)
