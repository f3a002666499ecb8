"""Report rendering: delimited summary tables plus matplotlib figures.

Everything a report emits is derived from the draw files of a finished fit,
so reports can be regenerated without rerunning the sampler.  Tables are
self-describing CSV; figures are PNG files written next to them.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .engine import psrf
from .errors import DataError
from .panel_io import FitBundle, load_fit, write_table

__all__ = ["pair_speed_draws", "write_report"]

QUANTILES = (2.5, 50.0, 97.5)


def _per_chain(bundle: FitBundle, column: np.ndarray):
    chains = bundle.scalars["chain"]
    return [column[chains == c] for c in np.unique(chains)]


def _summary_rows(bundle: FitBundle):
    rows = []
    skip = {"chain", "draw"}
    multi_chain = len(np.unique(bundle.scalars["chain"])) >= 2
    for name, column in bundle.scalars.items():
        if name in skip or name.startswith("gamma_"):
            continue
        q = np.percentile(column, QUANTILES)
        rhat = psrf(_per_chain(bundle, column)) if multi_chain else float("nan")
        rows.append([name, np.mean(column), np.std(column, ddof=1), q[0], q[1], q[2], rhat])
    return rows


def _inclusion_rows(bundle: FitBundle):
    rows = []
    for name in bundle.meta["covariates"]:
        column = bundle.scalars[f"gamma_{name}"]
        rows.append([name, float(np.mean(column))])
    return rows


def _band(draw_matrix: np.ndarray):
    return (
        draw_matrix.mean(axis=0),
        np.percentile(draw_matrix, 2.5, axis=0),
        np.percentile(draw_matrix, 97.5, axis=0),
    )


def pair_speed_draws(bundle: FitBundle, pair: str):
    """Draws of f + B + tau along one pair's years; columns follow meta['pair_years']."""
    meta = bundle.meta
    country, product = pair.split(":")
    years = meta["pair_years"][pair]
    abscissae = meta["pair_abscissae"][pair]
    tau = bundle.tau[product]
    n_draws = len(tau)
    values = np.tile(tau[:, None], (1, len(years)))
    for j, (year, t) in enumerate(zip(years, abscissae)):
        values[:, j] += bundle.b_effect[f"{country}:{year}"]
        if bundle.f_grid is not None:
            values[:, j] += bundle.f_grid[_f_column(bundle, t)]
    return np.array(years), values


def _f_column(bundle: FitBundle, t: float) -> str:
    for name in bundle.f_grid:
        if name.startswith("f@") and float(name[2:]) == float(t):
            return name
    raise DataError(f"fit output lacks a time-effect column at t={t}")


def write_report(fit_dir, out_dir) -> list:
    """Render all report tables and figures; returns the written paths."""
    bundle = load_fit(fit_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    summary_path = out_dir / "draws_summary.csv"
    write_table(
        summary_path,
        ["scalar", "mean", "sd", "q2.5", "q50", "q97.5", "rhat"],
        _summary_rows(bundle),
    )
    written.append(summary_path)

    inclusion_rows = _inclusion_rows(bundle)
    inclusion_path = out_dir / "inclusion_probabilities.csv"
    write_table(inclusion_path, ["covariate", "inclusion_probability"], inclusion_rows)
    written.append(inclusion_path)

    if bundle.dic:
        dic_path = out_dir / "dic_table.csv"
        write_table(dic_path, ["variant", "d_bar", "p_d", "dic"], bundle.dic)
        written.append(dic_path)

    if bundle.f_grid is not None:
        grid = np.array(bundle.meta["unique_abscissae"])
        f_draws = np.column_stack([bundle.f_grid[_f_column(bundle, t)] for t in grid])
        mean, lower, upper = _band(f_draws)
        f_path = out_dir / "f_band.csv"
        write_table(
            f_path,
            ["abscissa", "mean", "q2.5", "q97.5"],
            [[t, m, lo, hi] for t, m, lo, hi in zip(grid, mean, lower, upper)],
        )
        written.append(f_path)

        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(grid, mean, color="black", label="posterior mean")
        ax.plot(grid, lower, "--", color="gray", label="95% band")
        ax.plot(grid, upper, "--", color="gray")
        ax.set_xlabel("time")
        ax.set_ylabel("shared time effect")
        ax.legend(frameon=False)
        fig.tight_layout()
        f_fig = out_dir / "f_band.png"
        fig.savefig(f_fig, dpi=150)
        plt.close(fig)
        written.append(f_fig)

    traj_rows = []
    speed_rows = []
    per_product = {}
    for pair in bundle.meta["pairs"]:
        years, draws = pair_speed_draws(bundle, pair)
        mean, lower, upper = _band(draws)
        exp_mean, exp_lower, exp_upper = _band(np.exp(draws))
        country, product = pair.split(":")
        for j, year in enumerate(years):
            traj_rows.append(
                [country, product, year, mean[j], lower[j], upper[j], exp_mean[j], exp_lower[j], exp_upper[j]]
            )
        speed_rows.append([country, product, mean[-1], lower[-1], upper[-1]])
        per_product.setdefault(product, []).append((years, mean))
    traj_path = out_dir / "trajectories.csv"
    write_table(
        traj_path,
        ["country", "product", "year", "mean", "q2.5", "q97.5", "exp_mean", "exp_q2.5", "exp_q97.5"],
        traj_rows,
    )
    written.append(traj_path)

    speed_path = out_dir / "expected_speed.csv"
    write_table(speed_path, ["country", "product", "expected_speed", "q2.5", "q97.5"], speed_rows)
    written.append(speed_path)

    alpha_rows = []
    for pair in bundle.meta["pairs"]:
        column = bundle.alpha[pair]
        country, product = pair.split(":")
        q = np.percentile(column, QUANTILES)
        alpha_rows.append([country, product, np.mean(column), q[0], q[2]])
    alpha_path = out_dir / "ceiling_summary.csv"
    write_table(alpha_path, ["country", "product", "mean", "q2.5", "q97.5"], alpha_rows)
    written.append(alpha_path)

    fig, ax = plt.subplots(figsize=(7, 4))
    names = [r[0] for r in inclusion_rows]
    probs = [r[1] for r in inclusion_rows]
    ax.bar(range(len(names)), probs, color="steelblue")
    ax.axhline(0.5, color="black", linewidth=0.8, linestyle=":")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=60, ha="right", fontsize=8)
    ax.set_ylabel("posterior inclusion probability")
    ax.set_ylim(0, 1)
    fig.tight_layout()
    incl_fig = out_dir / "inclusion_probabilities.png"
    fig.savefig(incl_fig, dpi=150)
    plt.close(fig)
    written.append(incl_fig)

    products = sorted(per_product)
    fig, axes = plt.subplots(1, max(len(products), 1), figsize=(4 * max(len(products), 1), 3.5), squeeze=False)
    for ax, product in zip(axes[0], products):
        for years, mean in per_product[product]:
            ax.plot(years, mean, color="steelblue", alpha=0.35, linewidth=0.8)
        ax.set_title(product)
        ax.set_xlabel("year")
        ax.set_ylabel("expected speed")
    fig.tight_layout()
    traj_fig = out_dir / "trajectories.png"
    fig.savefig(traj_fig, dpi=150)
    plt.close(fig)
    written.append(traj_fig)

    return written
