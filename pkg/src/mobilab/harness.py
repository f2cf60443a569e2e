"""Sampling-error diagnostics and Monte Carlo validation drivers.

The placebo machinery reassigns complete pairs randomly across regions while
preserving each region's pair count exactly, so dispersion that survives the
reshuffle is pure sampling noise. The recovery driver re-estimates the
transmission statistics on freshly simulated single regions over a parameter
grid and reports bias, spread, and delta-method calibration.
"""

from dataclasses import dataclass

import numpy as np
import pandas as pd

from ._parallel import pmap
from .errors import AnalysisError, ConfigError
from .latent import _stat_influence, delta_from_arrays, recover_latent
from .mobility import EstimatorSpec
from .synthkit import GeneratorConfig, RegionParams, generate_population


@dataclass
class PlaceboConfig:
    seed: int = 0
    n_permutations: int = 20
    split_threshold: int = 2000

    def validate(self) -> None:
        if self.n_permutations < 1:
            raise ConfigError("n_permutations must be >= 1")
        if self.split_threshold < 1:
            raise ConfigError("split_threshold must be >= 1")


@dataclass
class DispersionReport:
    group: str
    n_regions: int
    mean_pairs: float
    actual_sd: float
    placebo_sd: float
    ratio: float


def _grouped_stat(codes: np.ndarray, n_groups: int, x: np.ndarray, y: np.ndarray,
                  statistic: str) -> np.ndarray:
    """Per-group slope or correlation of y on x in one vectorized pass."""
    n = np.bincount(codes, minlength=n_groups).astype(float)
    sx = np.bincount(codes, weights=x, minlength=n_groups)
    sy = np.bincount(codes, weights=y, minlength=n_groups)
    sxx = np.bincount(codes, weights=x * x, minlength=n_groups)
    syy = np.bincount(codes, weights=y * y, minlength=n_groups)
    sxy = np.bincount(codes, weights=x * y, minlength=n_groups)
    with np.errstate(invalid="ignore", divide="ignore"):
        cxx = sxx - sx * sx / n
        cyy = syy - sy * sy / n
        cxy = sxy - sx * sy / n
        if statistic == "pearson_correlation":
            out = cxy / np.sqrt(cxx * cyy)
        elif statistic == "regression_slope":
            out = cxy / cxx
        else:
            raise AnalysisError(f"unknown statistic {statistic!r}")
    out[n < 2] = np.nan
    return out


def _complete_pairs(records: pd.DataFrame, spec: EstimatorSpec):
    """Aligned (child, relative, region code) arrays over complete pairs."""
    from .mobility import _augment_for_spec, pair_columns

    df = _augment_for_spec(records, spec)
    if spec.gender_filter == "sons":
        df = df[df["child_gender"] == "M"]
    elif spec.gender_filter == "daughters":
        df = df[df["child_gender"] == "F"]
    dep_col, reg_col = pair_columns(spec)
    dep = df[dep_col].to_numpy(dtype=float)
    reg = df[reg_col].to_numpy(dtype=float)
    ok = np.isfinite(dep) & np.isfinite(reg)
    codes, region_ids = pd.factorize(df.loc[ok, "region_id"].to_numpy(), sort=True)
    return dep[ok], reg[ok], codes, region_ids


def placebo_reshuffle(records: pd.DataFrame, config: PlaceboConfig,
                      spec: EstimatorSpec):
    """Dispersion of regional estimates against a reshuffled placebo.

    Returns (reports, detail): one DispersionReport per group in
    {small, large, all} plus a tidy per-region DataFrame of actual estimates
    with their group labels. Placebo SDs average the across-region standard
    deviation over the configured number of permutations.
    """
    config.validate()
    spec.validate()
    dep, reg, codes, region_ids = _complete_pairs(records, spec)
    n_regions = len(region_ids)
    if n_regions < 2:
        raise AnalysisError("placebo reshuffle requires at least 2 regions")
    pair_counts = np.bincount(codes, minlength=n_regions)
    small = pair_counts <= config.split_threshold

    actual = _grouped_stat(codes, n_regions, reg, dep, spec.statistic)

    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    placebo_sds = {"small": [], "large": [], "all": []}
    first_placebo = None
    for p in range(config.n_permutations):
        perm_codes = codes[rng.permutation(codes.size)]
        betas = _grouped_stat(perm_codes, n_regions, reg, dep, spec.statistic)
        if p == 0:
            first_placebo = betas
        for name, mask in (("small", small), ("large", ~small),
                           ("all", np.ones(n_regions, bool))):
            vals = betas[mask]
            vals = vals[np.isfinite(vals)]
            placebo_sds[name].append(np.std(vals, ddof=1) if vals.size > 1 else np.nan)

    reports = []
    for name, mask in (("small", small), ("large", ~small),
                       ("all", np.ones(n_regions, bool))):
        if not mask.any():
            continue
        act = actual[mask]
        act = act[np.isfinite(act)]
        actual_sd = float(np.std(act, ddof=1)) if act.size > 1 else float("nan")
        placebo_sd = float(np.nanmean(placebo_sds[name]))
        ratio = placebo_sd / actual_sd if actual_sd and np.isfinite(actual_sd) else float("nan")
        reports.append(DispersionReport(
            group=name, n_regions=int(mask.sum()),
            mean_pairs=float(pair_counts[mask].mean()),
            actual_sd=actual_sd, placebo_sd=placebo_sd, ratio=ratio))

    detail = pd.DataFrame({
        "region_id": region_ids, "n_pairs": pair_counts, "beta": actual,
        "beta_placebo": first_placebo,
        "group": np.where(small, "small", "large"),
    })
    return reports, detail


def subsample_replicates(records: pd.DataFrame, analysis, *, k: int = 10,
                         fraction: float = 1 / 3, seed: int = 0) -> pd.DataFrame:
    """Run an analysis on k random child subsamples and average its output.

    `analysis` maps a records DataFrame to a DataFrame; numeric columns are
    averaged across replicates within groups defined by the non-numeric
    columns. fraction=1 with k=1 reproduces the full-sample analysis.
    """
    if not (0.0 < fraction <= 1.0):
        raise ConfigError(f"fraction {fraction} outside (0, 1]")
    if k < 1:
        raise ConfigError("k must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n = len(records)
    outputs = []
    for rep in range(k):
        if fraction >= 1.0:
            idx = np.arange(n)
        else:
            m = max(1, int(round(fraction * n)))
            idx = np.sort(rng.choice(n, size=m, replace=False))
        out = analysis(records.iloc[idx])
        out = out.copy()
        out["_replicate"] = rep
        outputs.append(out)
    stacked = pd.concat(outputs, ignore_index=True)
    key_cols = [c for c in stacked.columns
                if c != "_replicate" and not pd.api.types.is_numeric_dtype(stacked[c])]
    num_cols = [c for c in stacked.columns
                if c != "_replicate" and pd.api.types.is_numeric_dtype(stacked[c])]
    if key_cols:
        avg = stacked.groupby(key_cols, sort=False, dropna=False)[num_cols].mean()
        avg["n_replicates"] = stacked.groupby(key_cols, sort=False, dropna=False)[
            "_replicate"].nunique()
        return avg.reset_index()
    avg = stacked[num_cols].mean().to_frame().T
    avg["n_replicates"] = k
    return avg


def _recovery_replicate(args):
    """One simulated region: (beta1, beta2, gap, gap variance, lam, rho)."""
    rho, lam, n, seed, statistic = args
    cfg = GeneratorConfig(
        seed=int(seed),
        regions=[RegionParams(region_id="cell", rho=rho, lam=lam, n_lineages=n)],
        relatives=("child", "father", "pgf"))
    df = generate_population(cfg)
    child = df["edu_child"].to_numpy()
    father = df["edu_father"].to_numpy()
    gf = df["edu_pgf"].to_numpy()
    t = delta_from_arrays(child, father, gf, statistic=statistic)
    fg_ok = np.isfinite(father) & np.isfinite(gf)
    b_fg, _ = _stat_influence(gf[fg_ok], father[fg_ok], statistic)
    est = recover_latent(t.beta1, t.beta2, b_fg)
    lam_hat = est.lambda_hat if est.valid else np.nan
    rho_hat = est.rho_hat if est.valid else np.nan
    return t.beta1, t.beta2, t.delta, t.var_delta, lam_hat, rho_hat


def recovery_experiment(rhos, lambdas, ns, replicates: int, seed: int = 0,
                        statistic: str = "pearson_correlation") -> pd.DataFrame:
    """Monte Carlo bias/variance/calibration grid over the parameter space.

    Each replicate simulates one region, estimates the father and
    grandfather statistics, the excess-persistence gap with its delta-rule
    variance, and the recovered latent parameters. Coverage is the share of
    replicates whose t-interval covers the population gap. Replicates run
    in parallel when MOBILAB_THREADS > 1; results are reduced in replicate
    order, so the output is identical either way.
    """
    rhos = list(rhos)
    lambdas = list(lambdas)
    ns = [int(n) for n in np.atleast_1d(ns)]
    if replicates < 1 or not rhos or not lambdas or not ns:
        raise ConfigError("empty recovery grid")
    cells = [(r, l, n) for r in rhos for l in lambdas for n in ns]
    seeds = np.random.SeedSequence(seed).generate_state(
        len(cells) * replicates, dtype=np.uint64).reshape(len(cells), replicates)

    rows = []
    for (rho, lam, n), cell_seeds in zip(cells, seeds):
        delta_true = rho**2 * lam**2 * (1 - rho**2)
        results = pmap(_recovery_replicate,
                       [(rho, lam, n, s, statistic) for s in cell_seeds])
        beta1, beta2, delta, var_d, lam_hat, rho_hat = map(np.asarray,
                                                           zip(*results))
        se = np.sqrt(var_d)
        with np.errstate(invalid="ignore"):
            t0 = delta / se
            covered = np.abs(delta - delta_true) / se <= 1.96
        rows.append({
            "rho": rho, "lam": lam, "n": n, "replicates": replicates,
            "beta1_true": rho**2 * lam, "beta2_true": rho**2 * lam**2,
            "delta_true": delta_true,
            "mean_beta1": beta1.mean(), "sd_beta1": beta1.std(ddof=1),
            "bias_beta1": beta1.mean() - rho**2 * lam,
            "mean_beta2": beta2.mean(), "sd_beta2": beta2.std(ddof=1),
            "bias_beta2": beta2.mean() - rho**2 * lam**2,
            "mean_delta": delta.mean(), "sd_delta": delta.std(ddof=1),
            "bias_delta": delta.mean() - delta_true,
            "mean_var_delta": var_d.mean(),
            "coverage": float(np.mean(covered)),
            "reject_t_pos": float(np.mean(t0 > 1.96)),
            "reject_two_sided": float(np.mean(np.abs(t0) > 1.96)),
            "mean_lambda_hat": float(np.nanmean(lam_hat)),
            "sd_lambda_hat": float(np.nanstd(lam_hat, ddof=1)),
            "mean_rho_hat": float(np.nanmean(rho_hat)),
            "sd_rho_hat": float(np.nanstd(rho_hat, ddof=1)),
            "share_valid": float(np.mean(np.isfinite(lam_hat))),
        })
    return pd.DataFrame(rows)
