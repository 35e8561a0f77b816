"""Report figures rendered to files alongside the delimited outputs."""

from __future__ import annotations

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_gap_profile(geometry, path):
    """Gap width against horizontal distance, with the (H1) envelopes."""
    r = np.linspace(-2.0 * geometry.R0, 2.0 * geometry.R0, 801)
    delta = geometry.delta_r(r)
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.plot(r, delta, lw=1.5, label="delta(x1)")
    if geometry.kappa is not None:
        k1, k2 = geometry.kappa.kappa1, geometry.kappa.kappa2
        ax.plot(r, geometry.eps + k1 * np.abs(r) ** geometry.m, "--", lw=0.8,
                label="eps + kappa1 |x1|^m")
        ax.plot(r, geometry.eps + k2 * np.abs(r) ** geometry.m, "--", lw=0.8,
                label="eps + kappa2 |x1|^m")
    ax.set_xlabel("x1")
    ax.set_ylabel("gap width")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    ax.set_title(f"gap profile (m={geometry.m}, eps={geometry.eps:g})", fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_rate_fit(fit, path, title="gradient blow-up fit"):
    eps = np.asarray(fit.eps)
    gmax = np.asarray(fit.gmax)
    fig, ax = plt.subplots(figsize=(5.0, 3.8))
    ax.loglog(eps, gmax, "o", ms=5, label="measured gmax")
    line = np.exp(
        np.polyval(
            np.polyfit(-np.log(eps), np.log(gmax), 1), -np.log(eps)
        )
    )
    ax.loglog(eps, line, "-", lw=1.0,
              label=f"fit slope {fit.fitted_exponent:.4f} (r2={fit.r_squared:.4f})")
    if fit.theory is not None:
        ref = gmax[0] * (eps / eps[0]) ** (-fit.theory.rate_2d)
        ax.loglog(eps, ref, "--", lw=1.0,
                  label=f"theory slope {fit.theory.rate_2d:.4f}")
    ax.set_xlabel("eps")
    ax.set_ylabel("max |grad u|")
    ax.legend(fontsize=8)
    ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_field(field, path):
    """Heatmap of u over the physical neck."""
    grid = field.grid
    x1 = np.repeat(grid.y1_centers[:, None], grid.n2, axis=1)
    x2 = grid.x2_grid()
    fig, ax = plt.subplots(figsize=(6.0, 3.2))
    sc = ax.pcolormesh(x1, x2, field.u, shading="gouraud", cmap="RdBu_r")
    fig.colorbar(sc, ax=ax, label="u")
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    ax.set_title(f"neck solution (p={field.p}, eps={grid.geometry.eps:g})", fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_barrier_margins(verdict, path):
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    ax.axhline(0.0, color="k", lw=0.8)
    ax.bar(["min margin", "max margin"], [verdict.min_margin, verdict.max_margin],
           color=["tab:red" if verdict.min_margin < 0 else "tab:green", "tab:blue"])
    ax.set_ylabel("normalized margin")
    ax.set_title(
        f"{verdict.params.get('kind', 'barrier')}: r_hat={verdict.empirical_r_hat:.4g}, "
        f"{verdict.n_violations} violations", fontsize=9,
    )
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_weighted_decay(result, alpha_ref, path):
    fig, ax = plt.subplots(figsize=(5.0, 3.8))
    ax.loglog(result.decay_r, result.decay_osc, "o", ms=4, label="sup |v - v(0)|")
    if result.alpha_emp is not None:
        ref = result.decay_osc[-1] * (result.decay_r / result.decay_r[-1]) ** result.alpha_emp
        ax.loglog(result.decay_r, ref, "-", lw=1.0,
                  label=f"fit slope {result.alpha_emp:.4f}")
    if alpha_ref is not None:
        ref = result.decay_osc[-1] * (result.decay_r / result.decay_r[-1]) ** alpha_ref
        ax.loglog(result.decay_r, ref, "--", lw=1.0, label=f"alpha(lambda1) {alpha_ref:.4f}")
    ax.set_xlabel("r")
    ax.set_ylabel("decay of v toward the origin")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
