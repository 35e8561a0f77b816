"""Acceptance gate: every criterion at its stated tolerance.

Run with `pytest tests/test_acceptance.py -v -s` to see one pass/fail line
per criterion.  Criterion 2 states a target the solved physics measurably
does not reach in the prescribed eps window; it is asserted at its stated
tolerance regardless (see the assertion message for the measured numbers).
"""

import math
import time

import numpy as np
import pytest

import neckflow as nf

EPS_LIST = tuple(10.0 ** np.array([-2.0, -2.5, -3.0, -3.5, -4.0]))
BUDGET_SECONDS = 600.0


def _plan(m, p, sigma=None):
    return nf.SweepPlan(
        profile=nf.ProfileSpec.curvilinear_square(1.0),
        m=m, d=2, R0=0.45, L=0.45, p=p,
        eps_list=EPS_LIST,
        solver=nf.SolverConfig(p=p, n1=256, n2=32, grading_q=2.0, sigma=sigma),
        measure_tau=0.5,
        harnack_r=0.02,   # annulus inside the neck scale for every sweep eps
    )


@pytest.fixture(scope="module")
def sweep1():
    t0 = time.time()
    result = nf.run_sweep(_plan(4.0, 2.0))
    return result, nf.sweep_fit(result), time.time() - t0


def _report(num, ok, text):
    status = "PASS" if ok else "FAIL"
    print(f"[acceptance {num:2d}] {status}: {text}")


def test_criterion_1_convexity_rate(sweep1):
    result, fit, elapsed = sweep1
    gap, r2 = fit.abs_gap, fit.r_squared
    ok = gap <= 0.08 and r2 >= 0.98 and elapsed <= BUDGET_SECONDS
    _report(1, ok, f"m=4 p=2 exponent {fit.fitted_exponent:.4f} vs 0.25 "
                   f"(gap {gap:.4f}, tol 0.08; r2={r2:.4f}, floor 0.98; {elapsed:.1f}s)")
    assert gap <= 0.08, f"fitted exponent {fit.fitted_exponent} vs theory 0.25"
    assert r2 >= 0.98
    assert elapsed <= BUDGET_SECONDS


def test_criterion_2_nonlinearity_rate():
    t0 = time.time()
    result = nf.run_sweep(_plan(4.0, 6.0))
    fit = nf.sweep_fit(result)
    elapsed = time.time() - t0
    gap = fit.abs_gap
    ok = gap <= 0.08 and elapsed <= BUDGET_SECONDS
    _report(2, ok, f"m=4 p=6 exponent {fit.fitted_exponent:.4f} vs 0.20 "
                   f"(gap {gap:.4f}, tol 0.08; {elapsed:.1f}s)")
    assert elapsed <= BUDGET_SECONDS
    assert gap <= 0.08, (
        f"measured exponent {fit.fitted_exponent:.4f} (r2={fit.r_squared:.4f}) vs "
        f"target 0.20 +/- 0.08. The flux through the neck is still equilibrating "
        f"over eps in [1e-4, 1e-2]: the regime crossover decays like "
        f"eps^(1/m - 1/(p-1)) = eps^0.05 (~0.63 at eps=1e-4), so the window "
        f"exponent sits near 0.08 for any admissible channel length; an "
        f"independent one-dimensional flux computation reproduces the same "
        f"value to three digits."
    )


def test_criterion_3_second_convexity_rate():
    t0 = time.time()
    fit = nf.sweep_fit(nf.run_sweep(_plan(3.0, 2.0)))
    gap = fit.abs_gap
    ok = gap <= 0.08
    _report(3, ok, f"m=3 p=2 exponent {fit.fitted_exponent:.4f} vs 1/3 "
                   f"(gap {gap:.4f}, tol 0.08; r2={fit.r_squared:.4f}; {time.time()-t0:.1f}s)")
    assert gap <= 0.08


def test_criterion_4_critical_point_continuity():
    exact = True
    for m in (2.5, 3.0, 4.0, 5.0, 6.0):
        p = m + 1.0
        rate = nf.theory_exponents(2, m, p, min(0.4, (m - 2.0) / 2.0)).rate_2d
        exact &= (rate == 1.0 / m) and (rate == 1.0 / (p - 1.0))
    _report(4, exact, "rate_2d branches agree exactly at p = m + 1 for m in {2.5..6}")
    assert exact


def test_criterion_5_barrier_verification():
    geo = nf.GapGeometry(
        d=2, m=4.0, eps=1e-4, profile=nf.ProfileSpec.curvilinear_square(1.0), R0=0.45
    )
    sup = nf.supersolution(d=2, m=4.0, p=7.0, tau=0.5, gamma=1.0 / 6.0)
    v_sup = nf.verify_supersolution(sup, geo, grid=(200, 40))
    sub = nf.subsolution(m=4.0, p=2.0, tau=0.5, gamma=0.5, eps=1e-4)
    v_sub = nf.verify_subsolution(sub, geo, grid=(200, 40))

    from test_barriers import fd_gradient, fd_hessian

    fd_ok = True
    for spec in (sup, sub):
        f = nf.barrier_field(spec)
        for x in ([0.011, 0.0], [0.05, 0.001], [0.2, -0.005], [0.44, 0.01]):
            x = np.asarray(x)
            _, grad, hess = f(x)
            fd_ok &= bool(np.max(np.abs(fd_gradient(f, x) - grad)) / np.max(np.abs(grad)) <= 1e-6)
            fd_ok &= bool(np.max(np.abs(fd_hessian(f, x) - hess)) / np.max(np.abs(hess)) <= 1e-6)

    ok = (
        v_sup.passed and v_sup.n_violations == 0 and v_sup.n_samples >= 8000
        and v_sub.passed and v_sub.n_violations == 0 and v_sub.n_samples >= 8000
        and fd_ok
    )
    _report(5, ok, f"supersolution r_hat={v_sup.empirical_r_hat:.3f} "
                   f"({v_sup.n_samples} pts, {v_sup.n_violations} viol); "
                   f"subsolution r_hat={v_sub.empirical_r_hat:.3f} "
                   f"({v_sub.n_samples} pts, {v_sub.n_violations} viol); FD match 1e-6")
    assert v_sup.passed and v_sup.n_violations == 0 and v_sup.n_samples >= 8000
    assert v_sub.passed and v_sub.n_violations == 0 and v_sub.n_samples >= 8000
    assert fd_ok


def test_criterion_6_solver_verification():
    # flat channel exact for p in {1.5, 2, 3}
    flat_geo = nf.GapGeometry(d=2, m=2.0, eps=0.1, profile=nf.ProfileSpec.flat(), R0=1.5)
    flat_err, flux_imb = 0.0, 0.0
    for p in (1.5, 2.0, 3.0):
        cfg = nf.SolverConfig(p=p, n1=32, n2=8, grading_q=1.0)
        grid = nf.build_grid(flat_geo, cfg, L=1.0)
        fld = nf.solve(grid, cfg)
        flat_err = max(flat_err, float(np.max(np.abs(fld.u - grid.y1_centers[:, None]))))
        flux_imb = max(flux_imb, fld.flux_imbalance)

    # manufactured radial solutions, two grid doublings, order >= 1
    # (the left/right flux balance is an insulated-wall statement, so it is
    # not measured on these all-Dirichlet solves)
    geo = nf.GapGeometry(
        d=2, m=4.0, eps=0.3, profile=nf.ProfileSpec.curvilinear_square(1.0), R0=0.45
    )
    worst_order = np.inf
    for p, field in (
        (3.0, nf.radial_power_field(0.5, [0.0, 1.0])),
        (1.5, nf.radial_power_field(-1.0, [0.0, 1.0])),
        (2.0, nf.radial_log_field([0.0, 1.0])),
    ):
        errs = []
        for n1, n2 in ((16, 8), (32, 16), (64, 32)):
            cfg = nf.SolverConfig(p=p, n1=n1, n2=n2, grading_q=1.0)
            grid = nf.build_grid(geo, cfg, L=0.45)
            fld = nf.solve(grid, cfg, dirichlet_override=field)
            x2g = grid.x2_grid()
            exact = np.array(
                [[field(np.array([grid.y1_centers[i], x2g[i, j]]))[0]
                  for j in range(n2)] for i in range(n1)]
            )
            errs.append(float(np.max(np.abs(fld.u - exact))))
        worst_order = min(worst_order, min(np.log2(errs[k] / errs[k + 1]) for k in range(2)))

    # flux balance and odd symmetry on insulated thin-gap solves
    geo_thin = nf.GapGeometry(
        d=2, m=4.0, eps=1e-3, profile=nf.ProfileSpec.curvilinear_square(1.0), R0=0.45
    )
    odd = 0.0
    for p in (1.5, 2.0, 3.0):
        cfg = nf.SolverConfig(p=p, n1=128, n2=16)
        fld = nf.solve(nf.build_grid(geo_thin, cfg, L=0.45), cfg)
        odd = max(odd, float(np.max(np.abs(fld.u + fld.u[::-1, :]))))
        flux_imb = max(flux_imb, fld.flux_imbalance)

    ok = flat_err <= 1e-10 and worst_order >= 1.0 and flux_imb <= 1e-8 and odd <= 1e-8
    _report(6, ok, f"flat err {flat_err:.1e} <= 1e-10; manufactured order "
                   f"{worst_order:.2f} >= 1; flux imbalance {flux_imb:.1e} <= 1e-8; "
                   f"odd defect {odd:.1e} <= 1e-8")
    assert flat_err <= 1e-10
    assert worst_order >= 1.0
    assert flux_imb <= 1e-8
    assert odd <= 1e-8


def test_criterion_7_ratio_diagnostics(sweep1):
    result, _, _ = sweep1
    thm1 = np.asarray(result.thm1)
    harnack = np.asarray(result.harnack)
    thm1_ok = float(thm1.max()) <= 3.0 * float(np.median(thm1))
    harnack_ok = float(harnack.max()) <= 2.0 * float(np.median(harnack))

    flat_geo = nf.GapGeometry(d=2, m=2.0, eps=0.1, profile=nf.ProfileSpec.flat(), R0=1.5)
    cfg = nf.SolverConfig(p=2.0, n1=64, n2=8, grading_q=1.0)
    fld = nf.solve(nf.build_grid(flat_geo, cfg, L=1.0), cfg)
    hr = nf.harnack_ratio(fld, 0.3).ratio
    linear_ok = abs(hr - 3.0) <= 1e-8

    ok = thm1_ok and harnack_ok and linear_ok
    _report(7, ok, f"thm1 max/median {thm1.max()/np.median(thm1):.2f} <= 3; "
                   f"harnack max/median {harnack.max()/np.median(harnack):.3f} <= 2; "
                   f"linear channel {hr:.10f} = 3 +/- 1e-8")
    assert thm1_ok, f"thm1 ratios {thm1}"
    assert harnack_ok, f"harnack ratios {harnack}"
    assert linear_ok


def test_criterion_8_weighted_module():
    eig = nf.sphere_lambda1(nf.WeightFunction.constant(1.0), n=512)
    lambda_ok = abs(eig.lambda1 - 1.0) <= 1e-6
    alpha_ok = abs(nf.alpha_from_lambda(1.0, 3) - (math.sqrt(2.0) - 1.0)) <= 1e-12

    w = nf.WeightFunction.cosine(0.5, 2)
    eig2 = nf.sphere_lambda1(w, n=512)
    cos_ok = eig2.lambda1 <= 1.0 + 1e-8
    disk = nf.solve_weighted_disk(w, np.cos, n_r=160, n_theta=64)
    decay_ok = abs(disk.alpha_emp - eig2.alpha) <= 0.1 * eig2.alpha

    ident_ok = True
    for d in range(3, 9):
        alpha = nf.alpha_from_lambda(float(d - 2), d)
        beta = (-(d - 1) + math.sqrt((d - 1) ** 2 + 4 * (d - 2))) / 4.0
        ident_ok &= abs(alpha / 2.0 - beta) <= 1e-12

    ok = lambda_ok and alpha_ok and cos_ok and decay_ok and ident_ok
    _report(8, ok, f"lambda1(a=1)={eig.lambda1:.10f} (err {abs(eig.lambda1-1):.1e} <= 1e-6); "
                   f"alpha exact; lambda1(cos2t)={eig2.lambda1:.6f} <= 1; "
                   f"decay slope {disk.alpha_emp:.4f} vs {eig2.alpha:.4f} within 10%; "
                   f"alpha/2 identity for d=3..8")
    assert lambda_ok and alpha_ok and cos_ok and decay_ok and ident_ok


def test_criterion_9_inequality_oracles():
    rng = np.random.default_rng(2024)
    n = 10000
    failures = 0
    for p in (1.2, 2.0, 3.5):
        a = rng.standard_normal((n, 3)) * 10.0 ** rng.uniform(-3, 3, (n, 1))
        b = rng.standard_normal((n, 3)) * 10.0 ** rng.uniform(-3, 3, (n, 1))
        lhs, rhs = nf.monotonicity_pair(a, b, p)
        scale = np.maximum(np.abs(lhs), np.abs(rhs))
        failures += int(np.sum(lhs - rhs < -1e-12 * scale))
    for sigma in (-0.5, 0.0, 1.0, 2.0):
        lo, hi = nf.power_ratio_bounds(sigma)
        a = rng.standard_normal((n, 3)) * 10.0 ** rng.uniform(-3, 3, (n, 1))
        b = rng.standard_normal((n, 3)) * 10.0 ** rng.uniform(-3, 3, (n, 1))
        r = nf.power_difference_ratio(a, b, sigma)
        failures += int(np.sum((r < lo * (1 - 1e-12)) | (r > hi * (1 + 1e-12))))
    ok = failures == 0
    _report(9, ok, f"monotonicity (p in 1.2,2,3.5) and two-sided power-ratio bounds "
                   f"(sigma in -0.5,0,1,2) on 1e4 pairs each: {failures} failures")
    assert failures == 0


def test_criterion_10_regularization_robustness(sweep1):
    _, fit0, _ = sweep1
    base_sigma = 1e-12 * (1.0 / 0.45) ** 2
    shifts = []
    for sigma in (base_sigma * 100.0, base_sigma / 100.0):
        fit = nf.sweep_fit(nf.run_sweep(_plan(4.0, 2.0, sigma=sigma)))
        shifts.append(abs(fit.fitted_exponent - fit0.fitted_exponent))
    ok = max(shifts) <= 0.02
    _report(10, ok, f"exponent shift under sigma x100 / :100 = "
                    f"{max(shifts):.2e} <= 0.02")
    assert max(shifts) <= 0.02
