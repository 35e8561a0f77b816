"""Experiment orchestration: config parsing, commands, persistence.

A single versioned JSON document configures every command; all physical
quantities carry explicit keys (eps, m, p, ...), never positional slots.
Every float written to JSON or CSV is serialized with 17 significant
digits, so re-running an identical config reproduces identical numerical
outputs bit-for-bit on one platform.  File writes happen from this module
only (single aggregation point); sweep tasks may run in parallel workers.

Exit-code contract: 0 success, 1 usage error, 2 numeric failure,
3 acceptance-threshold breach (rate gap, barrier violation, failed
admissibility).
"""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .errors import (
    ConfigError,
    DataError,
    DomainError,
    GeometryError,
    NeckflowError,
    NumericError,
    ParameterError,
    SolverError,
    SweepError,
    WeightError,
)
from .barriers import subsolution, supersolution, verify_subsolution, verify_supersolution
from .geometry import (
    ConvexityBounds,
    GapGeometry,
    ProfileSpec,
    check_admissibility,
    compute_constants,
)
from .neck_solver import SolverConfig, build_grid, grad_max, solve
from .rates import SweepPlan, osc_decay_slope, run_sweep, sweep_fit
from .weighted import (
    WeightFunction,
    alpha_from_lambda,
    check_weight,
    solve_weighted_disk,
    sphere_lambda1,
)
from . import plots

CONFIG_VERSION = 1

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2
EXIT_THRESHOLD = 3


# ---------------------------------------------------------------------------
# 17-significant-digit serialization
# ---------------------------------------------------------------------------

def _fmt_float(x: float) -> str:
    if x != x:
        return "NaN"
    if x in (float("inf"), float("-inf")):
        return '"Infinity"' if x > 0 else '"-Infinity"'
    return format(float(x), ".17g")


def _json_chunks(obj, indent, level):
    pad = " " * (indent * level)
    pad_in = " " * (indent * (level + 1))
    if isinstance(obj, dict):
        if not obj:
            yield "{}"
            return
        yield "{\n"
        for k, (key, val) in enumerate(obj.items()):
            yield f"{pad_in}{json.dumps(str(key))}: "
            yield from _json_chunks(val, indent, level + 1)
            yield ",\n" if k < len(obj) - 1 else "\n"
        yield pad + "}"
    elif isinstance(obj, (list, tuple)) or isinstance(obj, np.ndarray):
        seq = list(obj.tolist() if isinstance(obj, np.ndarray) else obj)
        if not seq:
            yield "[]"
            return
        yield "[\n"
        for k, val in enumerate(seq):
            yield pad_in
            yield from _json_chunks(val, indent, level + 1)
            yield ",\n" if k < len(seq) - 1 else "\n"
        yield pad + "]"
    elif isinstance(obj, bool) or obj is None:
        yield json.dumps(obj)
    elif isinstance(obj, (int, np.integer)):
        yield str(int(obj))
    elif isinstance(obj, (float, np.floating)):
        yield _fmt_float(float(obj))
    else:
        yield json.dumps(obj)


def dump_json(obj, path: Path) -> None:
    Path(path).write_text("".join(_json_chunks(obj, 2, 0)) + "\n")


def dump_csv(path: Path, header: list, rows: list) -> None:
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for v in row:
            if isinstance(v, bool):
                cells.append("1" if v else "0")
            elif isinstance(v, (int, np.integer)):
                cells.append(str(int(v)))
            elif isinstance(v, (float, np.floating)):
                cells.append(_fmt_float(float(v)))
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------

def _need(cfg: dict, key: str, path: str):
    if key not in cfg:
        raise ConfigError(f"missing config key: {path}.{key}")
    return cfg[key]


def load_config(path) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    version = cfg.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version}")
    return cfg


def parse_profile(block: dict, path: str) -> ProfileSpec:
    kind = _need(block, "kind", path)
    try:
        if kind == "curvilinear_square":
            return ProfileSpec.curvilinear_square(float(block.get("r_tilde0", 1.0)))
        if kind == "power":
            return ProfileSpec.power(
                float(_need(block, "lam", path)), bool(block.get("symmetric", True))
            )
        if kind == "flat":
            return ProfileSpec.flat()
    except ParameterError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    raise ConfigError(f"{path}.kind: unknown profile kind {kind!r}")


def parse_geometry(cfg: dict, eps: Optional[float] = None) -> GapGeometry:
    block = _need(cfg, "geometry", "config")
    profile = parse_profile(_need(block, "profile", "geometry"), "geometry.profile")
    kappa_block = block.get("kappa", "auto")
    try:
        geom = GapGeometry(
            d=int(block.get("d", 2)),
            m=float(_need(block, "m", "geometry")),
            eps=float(eps if eps is not None else _need(block, "eps", "geometry")),
            profile=profile,
            R0=float(_need(block, "R0", "geometry")),
        )
        if kappa_block == "auto":
            if profile.kind != "flat":
                est = check_admissibility(geom).estimated_kappas
                kappa = ConvexityBounds(
                    est["kappa1"], est["kappa2"], est["kappa3"], est["kappa4"]
                )
                geom = GapGeometry(
                    d=geom.d, m=geom.m, eps=geom.eps, profile=profile,
                    R0=geom.R0, kappa=kappa,
                )
        elif kappa_block is not None:
            kappa = ConvexityBounds(
                kappa1=float(_need(kappa_block, "kappa1", "geometry.kappa")),
                kappa2=float(_need(kappa_block, "kappa2", "geometry.kappa")),
                kappa3=float(_need(kappa_block, "kappa3", "geometry.kappa")),
                kappa4=float(_need(kappa_block, "kappa4", "geometry.kappa")),
            )
            geom = GapGeometry(
                d=geom.d, m=geom.m, eps=geom.eps, profile=profile,
                R0=geom.R0, kappa=kappa,
            )
    except (ParameterError, GeometryError) as exc:
        raise ConfigError(f"geometry: {exc}") from exc
    return geom


def parse_solver(cfg: dict) -> tuple:
    block = _need(cfg, "solver", "config")
    try:
        sc = SolverConfig(
            p=float(_need(block, "p", "solver")),
            sigma=None if block.get("sigma") is None else float(block["sigma"]),
            tol_nonlinear=float(block.get("tol_nonlinear", 1e-11)),
            max_outer=int(block.get("max_outer", 80)),
            damping=float(block.get("damping", 0.5)),
            n1=int(block.get("n1", 256)),
            n2=int(block.get("n2", 32)),
            grading_q=float(block.get("grading_q", 2.0)),
            lateral_value=float(block.get("lateral_value", 1.0)),
        )
    except ParameterError as exc:
        raise ConfigError(f"solver: {exc}") from exc
    L = float(_need(block, "L", "solver"))
    return sc, L


def parse_sweep(cfg: dict) -> SweepPlan:
    block = _need(cfg, "sweep", "config")
    geom_block = _need(cfg, "geometry", "config")
    solver, L = parse_solver(cfg)
    try:
        return SweepPlan(
            profile=parse_profile(_need(geom_block, "profile", "geometry"), "geometry.profile"),
            m=float(_need(geom_block, "m", "geometry")),
            d=int(geom_block.get("d", 2)),
            R0=float(_need(geom_block, "R0", "geometry")),
            L=L,
            p=solver.p,
            solver=solver,
            eps_list=tuple(float(e) for e in _need(block, "eps_list", "sweep")),
            measure_tau=float(block.get("measure_tau", 0.5)),
            harnack_r=None if block.get("harnack_r") is None else float(block["harnack_r"]),
        )
    except ParameterError as exc:
        raise ConfigError(f"sweep: {exc}") from exc


def parse_barriers(cfg: dict) -> list:
    block = _need(cfg, "barrier", "config")
    items = block if isinstance(block, list) else [block]
    out = []
    for k, item in enumerate(items):
        path = f"barrier[{k}]"
        kind = _need(item, "kind", path)
        grid = tuple(item.get("grid", (200, 40)))
        eps = item.get("eps")
        try:
            if kind == "supersolution":
                spec = supersolution(
                    d=int(item.get("d", 2)),
                    m=float(_need(item, "m", path)),
                    p=float(_need(item, "p", path)),
                    tau=float(_need(item, "tau", path)),
                    gamma=float(_need(item, "gamma", path)),
                )
            elif kind == "subsolution":
                spec = subsolution(
                    m=float(_need(item, "m", path)),
                    p=float(_need(item, "p", path)),
                    tau=float(_need(item, "tau", path)),
                    gamma=float(_need(item, "gamma", path)),
                    eps=float(_need(item, "eps", path)),
                )
            else:
                raise ConfigError(f"{path}.kind: unknown barrier kind {kind!r}")
        except ParameterError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        out.append((spec, grid, eps))
    return out


def parse_weight(cfg: dict) -> tuple:
    block = _need(cfg, "weighted", "config")
    wblock = _need(block, "weight", "weighted")
    kind = _need(wblock, "kind", "weighted.weight")
    try:
        if kind == "constant":
            w = WeightFunction.constant(float(wblock.get("value", 1.0)))
        elif kind == "cosine":
            w = WeightFunction.cosine(
                float(_need(wblock, "amplitude", "weighted.weight")),
                int(wblock.get("harmonic", 2)),
            )
        else:
            raise ConfigError(f"weighted.weight.kind: unknown kind {kind!r}")
    except ParameterError as exc:
        raise ConfigError(f"weighted.weight: {exc}") from exc
    params = {
        "n_circle": int(block.get("n_circle", 512)),
        "quad_n": int(block.get("quad_n", 256)),
        "n_r": int(block.get("n_r", 160)),
        "n_theta": int(block.get("n_theta", 64)),
        "boundary": block.get("boundary", "cos_theta"),
    }
    return w, params


def _boundary_fn(name: str):
    if name == "cos_theta":
        return np.cos
    if name == "sin_theta":
        return np.sin
    if name == "one":
        return lambda t: np.ones_like(np.asarray(t, dtype=float))
    raise ConfigError(f"weighted.boundary: unknown boundary data {name!r}")


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

def _write_manifest(outdir: Path, cfg: dict, tasks: list, outputs: list, t0: float) -> None:
    dump_json(
        {
            "config_hash": config_hash(cfg),
            "tool_version": __version__,
            "started_at": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(t0)),
            "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
            "tasks": tasks,
            "outputs": [str(p.name) for p in outputs],
        },
        outdir / "manifest.json",
    )


def _prep_outdir(outdir) -> Path:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_check_geometry(cfg: dict, outdir) -> int:
    out = _prep_outdir(outdir)
    t0 = time.time()
    geometry = parse_geometry(cfg)
    samples = int(cfg.get("geometry", {}).get("samples", 64))
    report = check_admissibility(geometry, samples=samples)

    constants = None
    if geometry.kappa is not None:
        p = float(cfg.get("solver", {}).get("p", 2.0))
        beta = float(cfg.get("geometry", {}).get("beta", 0.5))
        mu0 = cfg.get("geometry", {}).get("mu0")
        constants = compute_constants(
            geometry, p=p, beta=beta, mu0=None if mu0 is None else float(mu0)
        ).to_dict()

    files = [out / "admissibility.json", out / "constants.json", out / "gap_profile.png"]
    dump_json(report.to_dict(), files[0])
    dump_json({"constants": constants}, files[1])
    plots.plot_gap_profile(geometry, files[2])
    status = "pass" if report.passed else "fail"
    _write_manifest(out, cfg, [{"name": "check-geometry", "status": status}], files, t0)
    return EXIT_OK if report.passed else EXIT_THRESHOLD


def cmd_verify_barriers(cfg: dict, outdir) -> int:
    out = _prep_outdir(outdir)
    t0 = time.time()
    specs = parse_barriers(cfg)
    files, tasks = [], []
    worst = EXIT_OK
    for spec, grid, eps in specs:
        eps_use = eps
        if eps_use is None:
            eps_use = cfg.get("geometry", {}).get("eps")
        if eps_use is None:
            raise ConfigError("barrier: eps required (in barrier block or geometry.eps)")
        geometry = parse_geometry(cfg, eps=float(eps_use))
        if spec.kind == "supersolution":
            verdict = verify_supersolution(spec, geometry, grid=tuple(grid))
        else:
            verdict = verify_subsolution(spec, geometry, grid=tuple(grid))
        base = f"barrier_{spec.kind}"
        jpath = out / f"{base}.json"
        ppath = out / f"{base}.png"
        dump_json(verdict.to_dict(), jpath)
        plots.plot_barrier_margins(verdict, ppath)
        files += [jpath, ppath]
        tasks.append({"name": base, "status": "pass" if verdict.passed else "fail"})
        if not verdict.passed:
            worst = EXIT_THRESHOLD
    _write_manifest(out, cfg, tasks, files, t0)
    return worst


def cmd_solve(cfg: dict, outdir, dump_field: bool = False) -> int:
    out = _prep_outdir(outdir)
    t0 = time.time()
    geometry = parse_geometry(cfg)
    solver, L = parse_solver(cfg)
    grid = build_grid(geometry, solver, L)
    fld = solve(grid, solver)

    summary = {
        "converged": fld.converged,
        "p": fld.p,
        "eps": geometry.eps,
        "sigma": fld.sigma_used,
        "outer_iterations": fld.trace.outer_iterations,
        "final_relative_residual": fld.residual_history[-1],
        "grad_max_global": grad_max(fld, float(grid.y1_centers[-1])),
        "boundary_flux": list(fld.boundary_flux),
        "flux_imbalance": fld.flux_imbalance,
        "u_min": float(fld.u.min()),
        "u_max": float(fld.u.max()),
    }
    files = [out / "solve_summary.json", out / "trace.json"]
    dump_json(summary, files[0])
    dump_json(fld.trace.to_dict(), files[1])
    if dump_field:
        files += _dump_field_files(fld, out, "field")
    _write_manifest(out, cfg, [{"name": "solve", "status": "ok"}], files, t0)
    return EXIT_OK


def _dump_field_files(fld, out: Path, stem: str) -> list:
    grid = fld.grid
    rows = []
    x2g = grid.x2_grid()
    for i in range(grid.n1):
        for j in range(grid.n2):
            rows.append(
                (
                    grid.y1_centers[i], grid.y2_centers[j],
                    grid.y1_centers[i], x2g[i, j],
                    fld.u[i, j], fld.grad_phys[i, j, 0], fld.grad_phys[i, j, 1],
                )
            )
    fpath = out / f"{stem}.csv"
    dump_csv(fpath, ["y1", "y2", "x1", "x2", "u", "gx", "gy"], rows)
    ppath = out / f"{stem}.png"
    plots.plot_field(fld, ppath)
    return [fpath, ppath]


def cmd_sweep(cfg: dict, outdir, jobs: int = 1, dump_field: bool = False) -> int:
    out = _prep_outdir(outdir)
    t0 = time.time()
    plan = parse_sweep(cfg)
    tol = float(cfg.get("sweep", {}).get("rate_tolerance", 0.08))
    result = run_sweep(plan, jobs=jobs)
    fit = sweep_fit(result, tau=plan.measure_tau)

    rows = list(
        zip(
            result.eps, result.gmax, result.harnack, result.thm1,
            result.osc_center, result.converged, result.outer_iters,
        )
    )
    files = [out / "sweep.csv", out / "fit.json", out / "rate_points.dat", out / "rate_fit.png"]
    dump_csv(
        files[0],
        ["eps", "gmax", "harnack_ratio", "thm1_ratio", "osc_center", "converged", "outer_iters"],
        rows,
    )
    summary = fit.to_dict()
    summary["osc_decay_slope"] = osc_decay_slope(result)
    summary["failures"] = [list(f) for f in result.failures]
    summary["c_tilde0"] = result.c_tilde0
    comparison_skipped = fit.theory is None
    if comparison_skipped:
        summary["note"] = "flat profile: no convexity, theory comparison skipped"
    dump_json(summary, files[1])
    lines = [
        f"{_fmt_float(np.log10(e))} {_fmt_float(np.log10(g))}"
        for e, g in zip(result.eps, result.gmax)
        if g == g and g > 0
    ]
    files[2].write_text("\n".join(lines) + "\n")
    plots.plot_rate_fit(fit, files[3])
    if dump_field:
        for k, (eps, conv) in enumerate(zip(result.eps, result.converged)):
            if not conv:
                continue
            geometry = plan.geometry_for(eps)
            fld = solve(build_grid(geometry, plan.solver, plan.L), plan.solver)
            files += _dump_field_files(fld, out, f"field_{k}")

    breach = (not comparison_skipped) and fit.abs_gap is not None and fit.abs_gap > tol
    status = "pass" if not breach else "gap-exceeds-tolerance"
    _write_manifest(out, cfg, [{"name": "sweep", "status": status}], files, t0)
    return EXIT_THRESHOLD if breach else EXIT_OK


def cmd_weighted(cfg: dict, outdir) -> int:
    out = _prep_outdir(outdir)
    t0 = time.time()
    w, params = parse_weight(cfg)
    report = check_weight(w, quad_n=params["quad_n"])
    eig = sphere_lambda1(w, n=params["n_circle"], d=3)
    gfun = _boundary_fn(params["boundary"])
    disk = solve_weighted_disk(w, gfun, n_r=params["n_r"], n_theta=params["n_theta"])

    payload = {
        "lambda1": eig.lambda1,
        "alpha": eig.alpha,
        "alpha_emp": disk.alpha_emp,
        "weight_descriptor": w.descriptor,
        "grid": {"n_circle": params["n_circle"], "n_r": params["n_r"],
                 "n_theta": params["n_theta"]},
        "weight_check": report,
        "degenerate_decay": disk.degenerate,
    }
    files = [out / "weighted.json", out / "decay.csv", out / "weighted_decay.png"]
    dump_json(payload, files[0])
    dump_csv(files[1], ["r", "sup_osc"], list(zip(disk.decay_r, disk.decay_osc)))
    plots.plot_weighted_decay(disk, eig.alpha, files[2])
    _write_manifest(out, cfg, [{"name": "weighted", "status": "ok"}], files, t0)
    return EXIT_OK


def run_command(name: str, cfg: dict, outdir, jobs: int = 1, dump_field: bool = False) -> int:
    """Dispatch one CLI command, mapping exceptions to the exit contract."""
    try:
        if name == "check-geometry":
            return cmd_check_geometry(cfg, outdir)
        if name == "verify-barriers":
            return cmd_verify_barriers(cfg, outdir)
        if name == "solve":
            return cmd_solve(cfg, outdir, dump_field=dump_field)
        if name == "sweep":
            return cmd_sweep(cfg, outdir, jobs=jobs, dump_field=dump_field)
        if name == "weighted":
            return cmd_weighted(cfg, outdir)
        raise ConfigError(f"unknown command {name!r}")
    except ConfigError:
        raise
    except (ParameterError, DomainError, GeometryError, WeightError) as exc:
        raise ConfigError(str(exc)) from exc
    except (SolverError, SweepError, NumericError, DataError) as exc:
        print(f"numeric failure: {exc}")
        return EXIT_NUMERIC
    except NeckflowError as exc:  # pragma: no cover
        print(f"error: {exc}")
        return EXIT_NUMERIC
