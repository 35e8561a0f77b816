import numpy as np
import pytest

import neckflow as nf
from neckflow import DataError, ParameterError


# ---------------------------------------------------------------------------
# theory exponents
# ---------------------------------------------------------------------------

def test_rate_dichotomy_values():
    assert nf.theory_exponents(2, 4.0, 2.0, 0.5).rate_2d == 0.25
    assert nf.theory_exponents(2, 3.0, 6.0, 0.5).rate_2d == pytest.approx(0.2, rel=1e-15)


def test_thm13_hand_value():
    t = nf.theory_exponents(2, 4.0, 7.0, 0.5)
    assert t.upper_thm13 == pytest.approx((2 + 4 - 2 + 1) / (4.0 * 6.0), rel=1e-15)
    assert t.upper_thm13 == pytest.approx(0.2083, abs=5e-5)


def test_thm13_unavailable_when_invalid():
    assert nf.theory_exponents(2, 4.0, 4.0, 0.5).upper_thm13 is None      # p <= d+m-1
    assert nf.theory_exponents(2, 4.0, 7.2, 1.5).upper_thm13 is None      # tau too large


def test_lower_thm15_branches():
    t = nf.theory_exponents(2, 4.0, 2.0, 0.5)
    assert t.lower_thm15 == pytest.approx((1 - 0.5) / 4.0)
    t = nf.theory_exponents(2, 4.0, 7.0, 0.5)
    assert t.lower_thm15 == pytest.approx((4.0 - 1.0) / (4.0 * 6.0))


def test_regimes_and_critical_point():
    assert nf.theory_exponents(2, 4.0, 2.0, 0.5).regime == "convexity-dominated"
    assert nf.theory_exponents(2, 4.0, 6.0, 0.5).regime == "nonlinearity-dominated"
    assert nf.theory_exponents(2, 4.0, 5.0, 0.5).regime == "critical"


@pytest.mark.parametrize("m", [2.5, 3.0, 4.0, 6.0])
def test_critical_point_continuity_exact(m):
    # both branch formulas agree exactly at p = m + 1
    p = m + 1.0
    rate = nf.theory_exponents(2, m, p, min(0.4, (m - 2) / 2)).rate_2d
    assert rate == 1.0 / m
    assert rate == 1.0 / (p - 1.0)


def test_thm13_below_thm11_for_small_tau():
    # upper_thm13 < 1/m whenever tau < (p+1-d-m)/2
    for (d, m, p, tau) in ((2, 4.0, 8.0, 0.5), (3, 3.0, 9.0, 0.9), (2, 5.0, 12.0, 1.2)):
        t = nf.theory_exponents(d, m, p, tau)
        assert tau < 0.5 * (p + 1 - d - m)
        assert t.upper_thm13 < t.upper_thm11


def test_theory_parameter_errors():
    with pytest.raises(ParameterError):
        nf.theory_exponents(2, 4.0, 2.0, 2.0)     # tau >= m-2
    with pytest.raises(ParameterError):
        nf.theory_exponents(2, 2.0, 2.0, 0.5)     # m must exceed 2
    with pytest.raises(ParameterError):
        nf.theory_exponents(1, 4.0, 2.0, 0.5)


# ---------------------------------------------------------------------------
# exponent fitting
# ---------------------------------------------------------------------------

def test_fit_exact_power_law():
    eps = [1e-2, 1e-3, 1e-4, 1e-5]
    gmax = [10.0 * (1e-2 / e) ** 0.5 for e in eps]
    fit = nf.fit_exponent(eps, gmax)
    assert abs(fit.fitted_exponent - 0.5) < 1e-12
    assert fit.r_squared == pytest.approx(1.0, abs=1e-14)
    # spot-check the synthetic series values
    assert gmax[1] == pytest.approx(31.6228, abs=1e-4)
    assert gmax[3] == pytest.approx(316.228, abs=1e-3)


def test_fit_constant_series():
    fit = nf.fit_exponent([1e-2, 1e-3, 1e-4, 1e-5], [5.0] * 4)
    assert abs(fit.fitted_exponent) < 1e-12


def test_fit_invariant_under_rescaling():
    eps = [1e-2, 1e-3, 1e-4, 1e-5]
    gmax = [2.0 * e ** -0.37 for e in eps]
    f1 = nf.fit_exponent(eps, gmax)
    f2 = nf.fit_exponent(eps, [123.456 * g for g in gmax])
    assert abs(f1.fitted_exponent - f2.fitted_exponent) < 1e-12


def test_fit_data_errors():
    with pytest.raises(DataError):
        nf.fit_exponent([1e-2, 1e-3, 1e-4], [1.0, 2.0, 3.0])
    with pytest.raises(DataError):
        nf.fit_exponent([1e-2, 1e-3, 1e-4, 1e-5], [1.0, -2.0, 3.0, 4.0])


def test_fit_reports_gap_against_theory():
    theory = nf.theory_exponents(2, 4.0, 2.0, 0.5)
    eps = [1e-2, 1e-3, 1e-4, 1e-5]
    fit = nf.fit_exponent(eps, [e ** -0.22 for e in eps], theory)
    assert fit.abs_gap == pytest.approx(0.03, abs=1e-10)


# ---------------------------------------------------------------------------
# thm1 ratio
# ---------------------------------------------------------------------------

def test_thm1_ratio_linear_channel_closed_form(flat_channel):
    # for u = x1 on the straight channel: |grad u| = 1 and the oscillation
    # over a slab of half-width rho is exactly 2 rho, so the cell ratio is
    # (eps + |x1|^m)^(1/m) / (2 rho); the max over cells sits at the widest
    # usable |x1|.
    fld, geo = flat_channel
    ct0 = 0.1
    got = nf.thm1_ratio(fld, geo, c_tilde0=ct0)
    rho = (ct0 / 3.0) * geo.eps ** 0.5
    y = fld.grid.y1_centers
    usable = y[(y - rho >= y[0]) & (y + rho <= y[-1])]
    expected = (geo.eps + np.abs(usable) ** 2.0) ** 0.5 / (2 * rho)
    assert got == pytest.approx(float(expected.max()), rel=1e-10)


def test_thm1_ratio_constant_field_degenerate(flat_channel):
    from neckflow.neck_solver import DiscreteField, IterationTrace
    fld, geo = flat_channel
    const = DiscreteField(
        u=np.ones_like(fld.u), grad_phys=np.zeros_like(fld.grad_phys),
        residual_history=[0.0], converged=True, grid=fld.grid, p=2.0,
        sigma_used=1e-12, lateral_value=1.0, trace=IterationTrace(),
        boundary_flux=(0.0, 0.0),
    )
    with pytest.raises(DataError):
        nf.thm1_ratio(const, geo, c_tilde0=0.1)


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def small_plan(profile, m, p, eps_list, **kw):
    solver = nf.SolverConfig(p=p, n1=kw.pop("n1", 48), n2=kw.pop("n2", 8),
                             grading_q=kw.pop("grading_q", 2.0))
    return nf.SweepPlan(
        profile=profile, m=m, d=2, R0=kw.pop("R0", 0.45), L=kw.pop("L", 0.45),
        p=p, solver=solver, eps_list=tuple(eps_list), **kw,
    )


def test_plan_validation():
    prof = nf.ProfileSpec.curvilinear_square(1.0)
    with pytest.raises(ParameterError):
        small_plan(prof, 4.0, 2.0, [1e-2, 1e-3])                   # too few points
    with pytest.raises(ParameterError):
        small_plan(prof, 4.0, 2.0, [1e-3, 1e-2, 1e-4, 1e-5])       # not decreasing
    with pytest.raises(ParameterError):
        small_plan(prof, 4.0, 2.0, [1e-2, 1e-3, 1e-4, 1e-5], measure_tau=2.5)


def test_measure_radius_formula():
    plan = small_plan(nf.ProfileSpec.curvilinear_square(1.0), 4.0, 2.0,
                      [1e-2, 1e-3, 1e-4, 1e-5])
    eps = 1e-3
    assert plan.measure_radius(eps) == pytest.approx((4 * 4.0 * eps / 1.5) ** 0.25, rel=1e-14)


def test_flat_profile_sweep_gmax_constant():
    # no convexity, no blow-up: gmax = 1/L for every eps
    plan = small_plan(nf.ProfileSpec.flat(), 2.0, 2.0,
                      [1e-1, 3e-2, 1e-2, 3e-3], R0=1.5, L=1.0,
                      grading_q=1.0, harnack_r=0.3)
    res = nf.run_sweep(plan)
    assert all(res.converged)
    assert np.allclose(res.gmax, 1.0, rtol=1e-10)
    fit = nf.sweep_fit(res)
    assert abs(fit.fitted_exponent) < 1e-9
    assert fit.theory is None
    assert np.allclose(res.harnack, 3.0, atol=1e-8)


def test_curvilinear_sweep_monotone_gmax_and_summary():
    plan = small_plan(nf.ProfileSpec.curvilinear_square(1.0), 4.0, 2.0,
                      [1e-2, 3.16e-3, 1e-3, 3.16e-4], harnack_r=0.02, n1=96, n2=12)
    res = nf.run_sweep(plan)
    assert all(res.converged)
    assert np.all(np.diff(res.gmax) > 0)                 # grows as eps shrinks
    assert np.all(np.diff(res.osc_center) < 0)           # center oscillation shrinks
    fit = nf.sweep_fit(res)
    assert fit.theory.rate_2d == 0.25
    assert nf.osc_decay_slope(res) is not None


def test_sweep_parallel_matches_serial():
    plan = small_plan(nf.ProfileSpec.curvilinear_square(1.0), 4.0, 2.0,
                      [1e-2, 3.16e-3, 1e-3, 3.16e-4], n1=48, n2=8)
    serial = nf.run_sweep(plan, jobs=1)
    parallel = nf.run_sweep(plan, jobs=2)
    assert serial.gmax == parallel.gmax
    assert serial.thm1 == parallel.thm1


def test_sweep_aborts_when_most_solves_fail():
    # max_outer = 1 cannot converge the nonlinear solves
    solver = nf.SolverConfig(p=6.0, n1=32, n2=8, max_outer=1)
    plan = nf.SweepPlan(
        profile=nf.ProfileSpec.curvilinear_square(1.0), m=4.0, d=2,
        R0=0.45, L=0.45, p=6.0, solver=solver,
        eps_list=(1e-2, 3.16e-3, 1e-3, 3.16e-4),
    )
    with pytest.raises(nf.SweepError):
        nf.run_sweep(plan)


def test_sweep_records_isolated_failure_and_continues(monkeypatch):
    import neckflow.rates as rates
    real = rates._sweep_point

    def flaky(args):
        plan, eps, ct0 = args
        if eps == plan.eps_list[2]:
            raise nf.SolverError("synthetic failure", [1.0])
        return real(args)

    monkeypatch.setattr(rates, "_sweep_point", flaky)
    plan = small_plan(nf.ProfileSpec.curvilinear_square(1.0), 4.0, 2.0,
                      [1e-2, 3.16e-3, 1e-3, 3.16e-4, 1e-4], n1=48, n2=8)
    res = nf.run_sweep(plan)
    assert len(res.failures) == 1 and res.failures[0][0] == plan.eps_list[2]
    assert res.converged == [True, True, False, True, True]
    assert np.isnan(res.gmax[2])
    fit = nf.sweep_fit(res)          # fit uses the 4 converged points
    assert len(fit.eps) == 4
