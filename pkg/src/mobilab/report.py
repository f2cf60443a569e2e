"""Table presets and figure rendering over a finished report bundle.

Presets reshape raw analysis CSVs into the layouts used in the write-up:
per-lineage summary grids, latent-parameter summaries, regression tables,
and plot-ready density / CEF / placebo tables. The figure path renders PNGs
from the same data next to the delimited output.
"""

import json
from pathlib import Path

import matplotlib
import numpy as np
import pandas as pd

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import DependencyError  # noqa: E402

PRESETS = ("table2", "table3", "table4", "table5", "table6",
           "figure1_density", "figure3_cef", "figure6_placebo")

KDE_BANDWIDTH = 0.01
KDE_GRID_POINTS = 512

PLOT_STYLE = {
    "figure.dpi": 130,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "grid.linestyle": "--",
    "lines.linewidth": 1.8,
}

SERIES_COLORS = ("#2166ac", "#d6604d", "#4dac26", "#8e44ad")


def weighted_kde(values, weights=None, bandwidth: float = KDE_BANDWIDTH,
                 n_points: int = KDE_GRID_POINTS):
    """Gaussian kernel density on a fixed-size grid.

    The grid spans the data range padded by three bandwidths; weights need
    not be normalized.
    """
    x = np.asarray(values, dtype=float)
    x = x[np.isfinite(x)]
    if x.size == 0:
        raise DependencyError("no finite values for the density")
    w = np.ones(x.size) if weights is None else np.asarray(weights, dtype=float)
    grid = np.linspace(x.min() - 3 * bandwidth, x.max() + 3 * bandwidth, n_points)
    z = (grid[:, None] - x[None, :]) / bandwidth
    dens = (w[None, :] * np.exp(-0.5 * z * z)).sum(axis=1)
    dens /= w.sum() * bandwidth * np.sqrt(2 * np.pi)
    return grid, dens


def _need(bundle_dir: Path, filename: str, preset: str) -> Path:
    path = Path(bundle_dir) / filename
    if not path.exists():
        raise DependencyError(
            f"preset {preset!r} needs {filename}; run the producing analysis first")
    return path


def _load(bundle_dir, filename, preset):
    return pd.read_csv(_need(bundle_dir, filename, preset))


def _weighted_mean_sd(values, weights):
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    ok = np.isfinite(v) & np.isfinite(w)
    v, w = v[ok], w[ok]
    if v.size == 0:
        return np.nan, np.nan
    mean = (w * v).sum() / w.sum()
    var = (w * (v - mean) ** 2).sum() / w.sum()
    return float(mean), float(np.sqrt(var))


def preset_table2(bundle_dir) -> pd.DataFrame:
    """Across-region mean/SD per lineage pair, unweighted and weighted."""
    est = _load(bundle_dir, "estimates.csv", "table2")
    rows = []
    for (outcome, pair), sub in est[est["gender"] == "all"].groupby(
            ["outcome", "pair"], sort=False):
        u_mean, u_sd = _weighted_mean_sd(sub["beta"], np.ones(len(sub)))
        w_mean, w_sd = _weighted_mean_sd(sub["beta"], sub["n_pairs"])
        rows.append({"outcome": outcome, "pair": pair, "n_regions": len(sub),
                     "unweighted_mean": u_mean, "unweighted_sd": u_sd,
                     "weighted_mean": w_mean, "weighted_sd": w_sd})
    return pd.DataFrame(rows)


def preset_table3(bundle_dir) -> pd.DataFrame:
    """Weighted mean/SD of recovered parameters by outcome and sample."""
    lat = _load(bundle_dir, "latent.csv", "table3")
    rows = []
    for (outcome, sample), sub in lat.groupby(["outcome", "sample"], sort=False):
        ok = sub[sub["valid"].astype(bool)]
        rho_mean, rho_sd = _weighted_mean_sd(ok["rho_hat"], ok["n2"])
        lam_mean, lam_sd = _weighted_mean_sd(ok["lambda_hat"], ok["n2"])
        rows.append({"outcome": outcome, "sample": sample,
                     "n_regions": len(ok),
                     "rho_mean": rho_mean, "rho_sd": rho_sd,
                     "lambda_mean": lam_mean, "lambda_sd": lam_sd})
    return pd.DataFrame(rows)


def preset_table4(bundle_dir) -> pd.DataFrame:
    """Gatsby correlations: statistic x horizon rows, gender columns."""
    g = _load(bundle_dir, "gatsby.csv", "table4")
    raw = g[~g["size_controlled"].astype(bool)]
    wide = raw.pivot_table(index=["statistic", "horizon"], columns="gender",
                           values="correlation")
    pval = raw.pivot_table(index=["statistic", "horizon"], columns="gender",
                           values="p_value")
    ctl = g[g["size_controlled"].astype(bool)].set_index(["statistic", "horizon"])
    out = wide.rename(columns={"all": "pooled"})
    out = out.join(pval.rename(columns=lambda c: f"p_{c}".replace("p_all", "p_pooled")))
    out["pooled_size_controlled"] = ctl["correlation"]
    out["p_pooled_size_controlled"] = ctl["p_value"]
    return out.reset_index()


def _regression_table(path: Path, preset: str) -> pd.DataFrame:
    if not path.exists():
        raise DependencyError(f"preset {preset!r} needs {path.name}")
    blocks = json.loads(path.read_text())
    rows = []

    def walk(prefix, block):
        for model, stats in block.items():
            if not isinstance(stats, dict):
                continue
            row = {"outcome": prefix, "model": model}
            row.update({k: v for k, v in stats.items() if k != "warnings"})
            rows.append(row)

    if any(isinstance(v, dict) and any(isinstance(x, dict) for x in v.values())
           for v in blocks.values()):
        for outcome, block in blocks.items():
            walk(outcome, block)
    else:
        walk("all", blocks)
    return pd.DataFrame(rows)


def preset_table5(bundle_dir) -> pd.DataFrame:
    return _regression_table(Path(bundle_dir) / "latent_regressions.json", "table5")


def preset_table6(bundle_dir) -> pd.DataFrame:
    return _regression_table(Path(bundle_dir) / "gini_regressions.json", "table6")


def preset_figure1_density(bundle_dir) -> pd.DataFrame:
    """Weighted densities of regional statistics per lineage pair."""
    est = _load(bundle_dir, "estimates.csv", "figure1_density")
    est = est[est["gender"] == "all"]
    outcome = ("schooling_years" if (est["outcome"] == "schooling_years").any()
               else est["outcome"].iloc[0])
    pairs = ["father", "mother", "paternal_grandfather", "paternal_grandmother"]
    rows = []
    for pair in pairs:
        sub = est[(est["outcome"] == outcome) & (est["pair"] == pair)]
        if len(sub) < 2:
            continue
        grid, dens = weighted_kde(sub["beta"], sub["n_pairs"])
        rows.append(pd.DataFrame({"series": pair, "grid": grid, "density": dens}))
    if not rows:
        raise DependencyError("figure1_density: no estimable series present")
    return pd.concat(rows, ignore_index=True)


def preset_figure3_cef(bundle_dir) -> pd.DataFrame:
    """National CEF plus the five largest regions' decile profiles."""
    cef = _load(bundle_dir, "cef.csv", "figure3_cef")
    national = cef[cef["level"] == "national"]
    regional = cef[cef["level"] == "region"]
    keep = (regional.groupby("region_id")["n"].sum()
            .sort_values(ascending=False).head(5).index)
    return pd.concat([national, regional[regional["region_id"].isin(keep)]],
                     ignore_index=True)


def preset_figure6_placebo(bundle_dir) -> pd.DataFrame:
    """Density points for actual vs placebo estimates by size group."""
    detail = _load(bundle_dir, "placebo_detail.csv", "figure6_placebo")
    outcome = detail["outcome"].iloc[0]
    detail = detail[detail["outcome"] == outcome]
    rows = []
    for group in ("small", "large"):
        for kind, col in (("actual", "beta"), ("placebo", "beta_placebo")):
            vals = detail.loc[detail["group"] == group, col].dropna()
            if len(vals) < 2:
                continue
            grid, dens = weighted_kde(vals)
            rows.append(pd.DataFrame({"series": f"{kind}_{group}",
                                      "grid": grid, "density": dens}))
    if not rows:
        raise DependencyError("figure6_placebo: no density series available")
    return pd.concat(rows, ignore_index=True)


PRESET_BUILDERS = {
    "table2": preset_table2,
    "table3": preset_table3,
    "table4": preset_table4,
    "table5": preset_table5,
    "table6": preset_table6,
    "figure1_density": preset_figure1_density,
    "figure3_cef": preset_figure3_cef,
    "figure6_placebo": preset_figure6_placebo,
}


def emit_table_preset(bundle_dir, preset: str, out_dir=None) -> Path:
    """Build one preset CSV from a bundle directory and return its path."""
    if preset not in PRESET_BUILDERS:
        raise DependencyError(f"unknown preset {preset!r}; choose from {PRESETS}")
    out_dir = Path(out_dir) if out_dir else Path(bundle_dir)
    table = PRESET_BUILDERS[preset](bundle_dir)
    path = out_dir / f"{preset}.csv"
    table.to_csv(path, index=False)
    return path


def _render_series_lines(table: pd.DataFrame, path: Path, xlabel: str,
                         title: str) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for color, (series, sub) in zip(
            SERIES_COLORS * 4, table.groupby("series", sort=False)):
        ax.plot(sub["grid"], sub["density"], label=str(series), color=color)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("density")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def _render_cef(table: pd.DataFrame, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    national = table[table["level"] == "national"]
    if not national.empty:
        ax.scatter(national["bin_center"], national["mean_child"], s=12,
                   color="#2166ac", label="national")
    for color, (region, sub) in zip(
            SERIES_COLORS[1:] * 4,
            table[table["level"] == "region"].groupby("region_id", sort=False)):
        ax.plot(sub["bin_center"], sub["mean_child"], marker="o", ms=3,
                lw=1.0, color=color, alpha=0.8, label=str(region))
    ax.set_xlabel("parent rank bin")
    ax.set_ylabel("mean child rank")
    ax.set_title("Conditional expectation of child rank")
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


FIGURE_RENDERERS = {
    "figure1_density": lambda t, p: _render_series_lines(
        t, p, "regional statistic", "Regional mobility statistics (weighted density)"),
    "figure3_cef": _render_cef,
    "figure6_placebo": lambda t, p: _render_series_lines(
        t, p, "regional statistic", "Actual vs placebo dispersion"),
}


def render_figures(bundle_dir, presets=None, out_dir=None) -> list:
    """Render PNGs for the figure presets whose inputs exist."""
    plt.rcParams.update(PLOT_STYLE)
    out_dir = Path(out_dir) if out_dir else Path(bundle_dir)
    done = []
    for preset in (presets or FIGURE_RENDERERS):
        if preset not in FIGURE_RENDERERS:
            continue
        table = PRESET_BUILDERS[preset](bundle_dir)
        path = out_dir / f"{preset}.png"
        FIGURE_RENDERERS[preset](table, path)
        done.append(path)
    return done
