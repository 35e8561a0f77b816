import numpy as np
import pytest

import neckflow as nf
from neckflow import DomainError, GeometryError, ParameterError
from neckflow.neck_solver import DiscreteField, IterationTrace, normalized_coefficients


def flat_geo(eps=0.1, R0=1.5):
    return nf.GapGeometry(d=2, m=2.0, eps=eps, profile=nf.ProfileSpec.flat(), R0=R0)


def curv_geo(eps=1e-3):
    return nf.GapGeometry(
        d=2, m=4.0, eps=eps, profile=nf.ProfileSpec.curvilinear_square(1.0), R0=0.45
    )


# ---------------------------------------------------------------------------
# config and grid
# ---------------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ParameterError):
        nf.SolverConfig(p=1.0)
    with pytest.raises(ParameterError):
        nf.SolverConfig(p=2.0, tol_nonlinear=0.1)
    with pytest.raises(ParameterError):
        nf.SolverConfig(p=2.0, n1=4)
    with pytest.raises(ParameterError):
        nf.SolverConfig(p=2.0, n1=15)      # odd
    with pytest.raises(ParameterError):
        nf.SolverConfig(p=2.0, damping=1.0)
    with pytest.raises(ParameterError):
        nf.SolverConfig(p=2.0, grading_q=0.5)


def test_flat_grid_is_uniform_with_constant_jacobian():
    cfg = nf.SolverConfig(p=2.0, n1=8, n2=8, grading_q=1.0)
    grid = nf.build_grid(flat_geo(eps=0.1), cfg, L=1.0)
    assert np.allclose(np.diff(grid.y1_faces), 2.0 / 8.0, rtol=0, atol=1e-15)
    assert np.allclose(grid.delta_c, 0.1, rtol=0, atol=0)      # Jacobian det = delta
    assert np.allclose(grid.delta_xf, 0.1, rtol=0, atol=0)


def test_graded_grid_min_width_and_monotonicity():
    cfg = nf.SolverConfig(p=2.0, n1=64, n2=8, grading_q=2.0)
    grid = nf.build_grid(curv_geo(), cfg, L=0.45)
    assert grid.dy1.min() == pytest.approx(0.45 / (64 / 2) ** 2, rel=1e-12)
    half = grid.dy1[32:]
    assert np.all(np.diff(half) > 0)        # widths grow away from the neck
    assert np.allclose(grid.dy1, grid.dy1[::-1], rtol=1e-14)


def test_grid_preconditions():
    cfg = nf.SolverConfig(p=2.0, n1=8, n2=8)
    with pytest.raises(ParameterError):
        nf.build_grid(curv_geo(), cfg, L=0.5)       # L > R0
    touching = nf.GapGeometry(
        d=2, m=4.0, eps=0.0, profile=nf.ProfileSpec.curvilinear_square(1.0), R0=0.45
    )
    with pytest.raises(GeometryError):
        nf.build_grid(touching, cfg, L=0.45)        # delta(0) = 0


def test_grid_map_bijection_onto_neck():
    cfg = nf.SolverConfig(p=2.0, n1=16, n2=8)
    geo = curv_geo()
    grid = nf.build_grid(geo, cfg, L=0.45)
    x2 = grid.x2_grid()
    top = geo.eps / 2 + geo.profile.h1(grid.y1_centers, geo.m)
    bot = -geo.eps / 2 + geo.profile.h2(grid.y1_centers, geo.m)
    assert np.all(x2 < top[:, None]) and np.all(x2 > bot[:, None])
    assert np.all(np.diff(x2, axis=1) > 0)


# ---------------------------------------------------------------------------
# solve: exactness, symmetry, conservation
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_flat_channel_linear_solution_exact(p):
    cfg = nf.SolverConfig(p=p, n1=16, n2=8, grading_q=1.0)
    grid = nf.build_grid(flat_geo(), cfg, L=1.0)
    fld = nf.solve(grid, cfg)
    exact = grid.y1_centers[:, None] / 1.0
    assert np.max(np.abs(fld.u - exact)) <= 1e-10
    assert fld.trace.outer_iterations <= 2
    assert nf.grad_max(fld, 0.9) == pytest.approx(1.0, abs=1e-10)


def test_odd_symmetry(curvilinear_field):
    fld, _ = curvilinear_field
    defect = np.max(np.abs(fld.u + fld.u[::-1, :]))
    assert defect <= 1e-8 * fld.lateral_value


def test_flux_conservation(curvilinear_field):
    fld, _ = curvilinear_field
    assert fld.flux_imbalance <= 1e-8


def test_discrete_maximum_principle(curvilinear_field):
    fld, _ = curvilinear_field
    tol = 1e-8 * fld.lateral_value
    assert fld.u.min() >= -fld.lateral_value - tol
    assert fld.u.max() <= fld.lateral_value + tol


def test_residual_history_monotone():
    cfg = nf.SolverConfig(p=3.0, n1=32, n2=8)
    grid = nf.build_grid(curv_geo(), cfg, L=0.45)
    fld = nf.solve(grid, cfg)
    assert fld.converged
    assert fld.residual_history[-1] <= cfg.tol_nonlinear
    assert np.all(np.diff(fld.residual_history) < 0)


def test_nonconvergence_raises_with_history():
    cfg = nf.SolverConfig(p=6.0, n1=32, n2=8, max_outer=1)
    grid = nf.build_grid(curv_geo(), cfg, L=0.45)
    with pytest.raises(nf.SolverError) as err:
        nf.solve(grid, cfg)
    assert len(err.value.residual_history) >= 1


def test_coefficient_ellipticity_of_normalized_form(curvilinear_field):
    # min(1, p-1) |xi|^2 <= a_ij xi_i xi_j <= max(1, p-1) |xi|^2
    fld, _ = curvilinear_field
    for p in (1.5, 2.0, 3.0):
        probe = DiscreteField(
            u=fld.u, grad_phys=fld.grad_phys, residual_history=[0.0], converged=True,
            grid=fld.grid, p=p, sigma_used=fld.sigma_used,
            lateral_value=1.0, trace=IterationTrace(), boundary_flux=(0.0, 0.0),
        )
        a = normalized_coefficients(probe).reshape(-1, 2, 2)
        rng = np.random.default_rng(3)
        xi = rng.standard_normal((1000, 2))
        sub = a[rng.integers(0, a.shape[0], 1000)]
        quad = np.einsum("ki,kij,kj->k", xi, sub, xi)
        nrm2 = np.sum(xi * xi, axis=1)
        assert np.all(quad >= min(1.0, p - 1.0) * nrm2 * (1 - 1e-12))
        assert np.all(quad <= max(1.0, p - 1.0) * nrm2 * (1 + 1e-12))


# ---------------------------------------------------------------------------
# manufactured solutions
# ---------------------------------------------------------------------------

def manufactured_errors(geo, L, p, field, grids):
    errs = []
    for n1, n2 in grids:
        cfg = nf.SolverConfig(p=p, n1=n1, n2=n2, grading_q=1.0)
        grid = nf.build_grid(geo, cfg, L=L)
        fld = nf.solve(grid, cfg, dirichlet_override=field)
        x2g = grid.x2_grid()
        exact = np.array(
            [
                [field(np.array([grid.y1_centers[i], x2g[i, j]]))[0] for j in range(n2)]
                for i in range(n1)
            ]
        )
        errs.append(float(np.max(np.abs(fld.u - exact))))
    return errs


def test_manufactured_radial_p3_first_order_or_better():
    geo = nf.GapGeometry(
        d=2, m=4.0, eps=0.3, profile=nf.ProfileSpec.curvilinear_square(1.0), R0=0.45
    )
    field = nf.radial_power_field(0.5, [0.0, 1.0])     # p-harmonic for p = 3
    errs = manufactured_errors(geo, 0.45, 3.0, field, ((16, 8), (32, 16), (64, 32)))
    orders = [np.log2(errs[k] / errs[k + 1]) for k in range(2)]
    assert min(orders) >= 1.0, (errs, orders)


# ---------------------------------------------------------------------------
# measurements
# ---------------------------------------------------------------------------

def test_grad_max_flat(flat_channel):
    fld, _ = flat_channel
    assert nf.grad_max(fld, 0.5) == pytest.approx(1.0, abs=1e-12)


def test_grad_max_synthetic_monotone_field(flat_channel):
    fld, _ = flat_channel
    grid = fld.grid
    g = np.minimum(1.0 / np.abs(grid.y1_centers), 50.0)
    grad = np.zeros((grid.n1, grid.n2, 2))
    grad[..., 0] = g[:, None]
    synthetic = DiscreteField(
        u=fld.u, grad_phys=grad, residual_history=[0.0], converged=True,
        grid=grid, p=2.0, sigma_used=1e-12, lateral_value=1.0,
        trace=IterationTrace(), boundary_flux=(0.0, 0.0),
    )
    inner = np.abs(grid.y1_centers).min()
    assert nf.grad_max(synthetic, 0.5) == pytest.approx(min(1.0 / inner, 50.0))


def test_grad_max_empty_region(flat_channel):
    fld, _ = flat_channel
    with pytest.raises(DomainError):
        nf.grad_max(fld, 1e-6)


def test_oscillation_linear_and_constant(flat_channel):
    fld, _ = flat_channel
    assert nf.oscillation(fld, 0.0, 0.05) == pytest.approx(0.1, abs=1e-12)
    const = DiscreteField(
        u=np.zeros_like(fld.u), grad_phys=np.zeros_like(fld.grad_phys),
        residual_history=[0.0], converged=True, grid=fld.grid, p=2.0,
        sigma_used=1e-12, lateral_value=1.0, trace=IterationTrace(),
        boundary_flux=(0.0, 0.0),
    )
    assert nf.oscillation(const, 0.0, 0.05) == 0.0
    with pytest.raises(DomainError):
        nf.oscillation(fld, 0.99, 0.5)


def test_harnack_ratio_linear_exact(flat_channel):
    fld, _ = flat_channel
    res = nf.harnack_ratio(fld, 0.3)
    assert not res.degenerate
    assert res.ratio == pytest.approx(3.0, abs=1e-8)


def test_harnack_ratio_constant_degenerate(flat_channel):
    fld, _ = flat_channel
    const = DiscreteField(
        u=np.ones_like(fld.u), grad_phys=np.zeros_like(fld.grad_phys),
        residual_history=[0.0], converged=True, grid=fld.grid, p=2.0,
        sigma_used=1e-12, lateral_value=1.0, trace=IterationTrace(),
        boundary_flux=(0.0, 0.0),
    )
    res = nf.harnack_ratio(const, 0.3)
    assert res.degenerate and res.ratio == 1.0
    with pytest.raises(DomainError):
        nf.harnack_ratio(fld, 0.6)


def test_sigma_is_reported(curvilinear_field):
    fld, _ = curvilinear_field
    assert fld.sigma_used == pytest.approx(1e-12 * (1.0 / 0.45) ** 2, rel=1e-12)
    cfg = nf.SolverConfig(p=2.0, n1=16, n2=8, sigma=1e-9)
    grid = nf.build_grid(curv_geo(), cfg, L=0.45)
    assert nf.solve(grid, cfg).sigma_used == 1e-9


def test_trace_bookkeeping():
    cfg = nf.SolverConfig(p=3.0, n1=32, n2=8)
    grid = nf.build_grid(curv_geo(), cfg, L=0.45)
    fld = nf.solve(grid, cfg)
    tr = fld.trace
    assert tr.outer_iterations == len(tr.step_sizes) == len(tr.energies)
    assert len(tr.linear_iterations) >= tr.outer_iterations
    assert all(np.isfinite(e) and e > 0 for e in tr.energies)
    assert all(0 < lam <= 1 for lam in tr.step_sizes)
    assert tr.stages and tr.stages[-1]["p"] == 3.0


def test_newton_matrix_matches_directional_derivatives():
    from neckflow import neck_solver as ns

    geo = curv_geo()
    cfg = nf.SolverConfig(p=3.0, n1=16, n2=8)
    grid = nf.build_grid(geo, cfg, L=0.45)
    ops = ns._assemble_ops(grid, ns._lateral_data(grid, 1.0))
    rng = np.random.default_rng(5)
    u = np.repeat(grid.y1_centers / 0.45, 8) + 0.01 * rng.standard_normal(128)
    h = 1e-7
    for p in (1.5, 3.0, 6.0):
        R, pk = ns._residual(ops, u, p, 1e-10)
        J = ns._newton_matrix(ops, pk, p, 1e-10)
        for _ in range(3):
            v = rng.standard_normal(u.size)
            Rp, _ = ns._residual(ops, u + h * v, p, 1e-10)
            Rm, _ = ns._residual(ops, u - h * v, p, 1e-10)
            fd = (Rp - Rm) / (2 * h)
            assert np.linalg.norm(fd - J @ v) / np.linalg.norm(J @ v) < 1e-6
