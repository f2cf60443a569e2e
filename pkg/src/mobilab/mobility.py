"""Region-level mobility statistics and linearity diagnostics.

Estimates are simple bivariate regressions or Pearson correlations of a
child outcome on a relative's outcome within a region, with listwise
deletion of incomplete pairs and HC1 standard errors. Within-region moments
are never weighted; weights only enter when estimates are aggregated or
correlated across regions.
"""

from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from . import regress
from .errors import EstimationError, SpecError

OUTCOME_COLUMNS = {
    "schooling_years": "edu",
    "earnings_rank": "rank",
    "log_earnings": "logearn",
    "binary_education": "edu_hi",
}

PAIR_RELATIVES = {
    "father": "father",
    "mother": "mother",
    "parental_average": "parent_avg",
    "paternal_grandfather": "pgf",
    "maternal_grandfather": "mgf",
    "paternal_grandmother": "pgm",
    "maternal_grandmother": "mgm",
    "grandparental_average": "gparent_avg",
    # parent generation on its own parents; used for latent recovery
    "father_paternal_grandfather": ("father", "pgf"),
}

PARENT_RELATIVES = ("father", "mother")
GRANDPARENT_RELATIVES = ("pgf", "pgm", "mgf", "mgm")


@dataclass(frozen=True)
class EstimatorSpec:
    outcome: str = "schooling_years"
    statistic: str = "pearson_correlation"   # or "regression_slope"
    pair: str = "father"
    weighting: str = "pair_count"            # cross-region use: or "unweighted"
    gender_filter: str = "all"               # "all" | "sons" | "daughters"

    def validate(self) -> None:
        if self.outcome not in OUTCOME_COLUMNS:
            raise SpecError(f"unknown outcome {self.outcome!r}")
        if self.statistic not in ("pearson_correlation", "regression_slope"):
            raise SpecError(f"unknown statistic {self.statistic!r}")
        if self.pair not in PAIR_RELATIVES:
            raise SpecError(f"unknown pair {self.pair!r}")
        if self.weighting not in ("pair_count", "unweighted"):
            raise SpecError(f"unknown weighting {self.weighting!r}")
        if self.gender_filter not in ("all", "sons", "daughters"):
            raise SpecError(f"unknown gender_filter {self.gender_filter!r}")

    def label(self) -> str:
        return f"{self.outcome}|{self.statistic}|{self.pair}|{self.gender_filter}"


@dataclass
class MobilityEstimate:
    region_id: str
    spec: EstimatorSpec
    alpha: float
    beta: float
    se_beta: float
    n_pairs: int
    r2: float


@dataclass
class CefProfile:
    region_id: str
    bins: pd.DataFrame          # bin_center, mean_child, n
    linearity_index: float


def binary_education_columns(records: pd.DataFrame) -> pd.DataFrame:
    """Add high/low schooling indicators, split at each relative type's
    national median; values at the median count as low."""
    df = records.copy()
    for col in [c for c in df.columns if c.startswith("edu_")]:
        rel = col[len("edu_"):]
        med = df[col].median()
        vals = df[col].to_numpy(dtype=float)
        hi = np.where(np.isnan(vals), np.nan, (vals > med).astype(float))
        df[f"edu_hi_{rel}"] = hi
    return df


def generational_average(records: pd.DataFrame, generation: str,
                         outcome_col: str = "edu") -> pd.DataFrame:
    """Per-child mean outcome over the available relatives of a generation.

    Adds `<gen>_avg_<outcome>` and a contributor count; children with no
    observed relative in the generation get a missing average.
    """
    if generation == "parent":
        rels, prefix = PARENT_RELATIVES, "parent_avg"
    elif generation == "grandparent":
        rels, prefix = GRANDPARENT_RELATIVES, "gparent_avg"
    else:
        raise SpecError(f"unknown generation {generation!r}")
    cols = [f"{outcome_col}_{r}" for r in rels if f"{outcome_col}_{r}" in records.columns]
    if not cols:
        raise SpecError(f"no {outcome_col} columns for generation {generation!r}")
    df = records.copy()
    block = df[cols]
    df[f"{outcome_col}_{prefix}"] = block.mean(axis=1, skipna=True)
    df[f"{outcome_col}_{prefix}_n"] = block.notna().sum(axis=1)
    return df


def _augment_for_spec(records: pd.DataFrame, spec: EstimatorSpec) -> pd.DataFrame:
    df = records
    suffix = OUTCOME_COLUMNS[spec.outcome]
    if spec.outcome == "binary_education" and not any(
            c.startswith("edu_hi_") for c in df.columns):
        df = binary_education_columns(df)
    if spec.pair == "parental_average" and f"{suffix}_parent_avg" not in df.columns:
        df = generational_average(df, "parent", suffix)
    if spec.pair == "grandparental_average" and f"{suffix}_gparent_avg" not in df.columns:
        df = generational_average(df, "grandparent", suffix)
    return df


def pair_columns(spec: EstimatorSpec):
    """(dependent, regressor) column names for a spec."""
    suffix = OUTCOME_COLUMNS[spec.outcome]
    target = PAIR_RELATIVES[spec.pair]
    if isinstance(target, tuple):
        dep, reg = target
        return f"{suffix}_{dep}", f"{suffix}_{reg}"
    return f"{suffix}_child", f"{suffix}_{target}"


def extract_pairs(records: pd.DataFrame, spec: EstimatorSpec):
    """Listwise-complete (dependent, regressor) arrays under a spec."""
    spec.validate()
    df = _augment_for_spec(records, spec)
    if spec.gender_filter == "sons":
        df = df[df["child_gender"] == "M"]
    elif spec.gender_filter == "daughters":
        df = df[df["child_gender"] == "F"]
    dep_col, reg_col = pair_columns(spec)
    for col in (dep_col, reg_col):
        if col not in df.columns:
            raise SpecError(f"records lack column {col!r} required by {spec.label()}")
    dep = df[dep_col].to_numpy(dtype=float)
    reg = df[reg_col].to_numpy(dtype=float)
    ok = ~(np.isnan(dep) | np.isnan(reg))
    return dep[ok], reg[ok]


def estimate_pairs(dep: np.ndarray, reg: np.ndarray, spec: EstimatorSpec,
                   region_id: str = "") -> MobilityEstimate:
    """Estimate one region's statistic from listwise-complete pair arrays."""
    n = dep.size
    if n < 2:
        raise EstimationError(f"region {region_id or '?'}: fewer than 2 complete pairs")
    if np.std(reg) == 0.0:
        raise EstimationError(f"region {region_id or '?'}: zero variance in regressor")
    if spec.statistic == "pearson_correlation":
        if np.std(dep) == 0.0:
            raise EstimationError(f"region {region_id or '?'}: zero variance in outcome")
        r, psi = regress.corr_influence(reg, dep)
        se = float(np.sqrt(regress.influence_variance(psi))) if n > 2 else 0.0
        slope_natural = r * dep.std() / reg.std()
        alpha = float(dep.mean() - slope_natural * reg.mean())
        return MobilityEstimate(region_id=region_id, spec=spec, alpha=alpha,
                                beta=r, se_beta=se, n_pairs=n, r2=r * r)
    res = regress.wls(dep, reg, names=["parent"])
    return MobilityEstimate(region_id=region_id, spec=spec,
                            alpha=float(res.params[0]), beta=float(res.params[1]),
                            se_beta=float(res.se[1]), n_pairs=n, r2=float(res.r2))


def estimate_region(records: pd.DataFrame, spec: EstimatorSpec,
                    region_id: str = "") -> MobilityEstimate:
    """Estimate a spec on the supplied records, treated as one region."""
    dep, reg = extract_pairs(records, spec)
    return estimate_pairs(dep, reg, spec, region_id=region_id)


def estimate_by_region(records: pd.DataFrame, spec: EstimatorSpec,
                       min_pairs: int = 2):
    """Per-region estimates as a DataFrame, plus flagged regions.

    Regions below `min_pairs` complete pairs, or with degenerate inputs, are
    flagged with a reason instead of reported.
    """
    spec.validate()
    df = _augment_for_spec(records, spec)
    rows, flagged = [], []
    for region_id, sub in df.groupby("region_id", sort=True):
        try:
            dep, reg = extract_pairs(sub, spec)
            if dep.size < max(min_pairs, 2):
                flagged.append({"region_id": region_id, "n_pairs": int(dep.size),
                                "reason": f"fewer than {max(min_pairs, 2)} pairs"})
                continue
            est = estimate_pairs(dep, reg, spec, region_id=str(region_id))
        except EstimationError as exc:
            flagged.append({"region_id": region_id, "n_pairs": 0, "reason": str(exc)})
            continue
        rows.append({
            "region_id": est.region_id, "outcome": spec.outcome,
            "statistic": spec.statistic, "pair": spec.pair,
            "gender": spec.gender_filter, "alpha": est.alpha, "beta": est.beta,
            "se_beta": est.se_beta, "n_pairs": est.n_pairs, "r2": est.r2,
        })
    est_df = pd.DataFrame(rows)
    flag_df = pd.DataFrame(flagged, columns=["region_id", "n_pairs", "reason"])
    return est_df, flag_df


def p25_upward_mobility(estimate: MobilityEstimate) -> float:
    """Expected child rank for parents at the 25th percentile: alpha + beta/4."""
    if estimate.spec.outcome != "earnings_rank":
        raise SpecError("absolute upward mobility is defined on earnings ranks")
    return float(estimate.alpha + 0.25 * estimate.beta)


def _bin_table(parent: np.ndarray, child: np.ndarray, n_bins: int) -> pd.DataFrame:
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    centers = (edges[:-1] + edges[1:]) / 2.0
    which = np.clip(np.digitize(parent, edges[1:-1], right=False), 0, n_bins - 1)
    means = np.full(n_bins, np.nan)
    counts = np.zeros(n_bins, dtype=int)
    for b in range(n_bins):
        sel = which == b
        counts[b] = int(sel.sum())
        if counts[b]:
            means[b] = child[sel].mean()
    return pd.DataFrame({"bin_center": centers, "mean_child": means, "n": counts})


def _linearity_index(parent: np.ndarray, child: np.ndarray) -> float:
    lin = regress.wls(child, parent)
    quad = regress.wls(child, np.column_stack([parent, parent**2]))
    if lin.r2 <= 0:
        return float("nan")
    return float(quad.r2 / lin.r2 - 1.0)


def cef_bins(records: pd.DataFrame, n_bins: int = 10, level: str = "region",
             spec: EstimatorSpec | None = None):
    """Binned conditional-expectation profiles of child rank on parent rank.

    level="national" pools everything into one profile (percentile bins by
    default there are still controlled by n_bins); level="region" returns
    one profile per region, with deciles as the conventional choice. The
    linearity index is the quadratic-over-linear R-squared ratio minus one,
    from the underlying micro data.
    """
    spec = spec or EstimatorSpec(outcome="earnings_rank", statistic="regression_slope")
    if OUTCOME_COLUMNS[spec.outcome] != "rank":
        raise SpecError("CEF profiles are defined on rank outcomes")
    profiles = []
    if level == "national":
        dep, reg = extract_pairs(records, spec)
        if dep.size < 10:
            raise EstimationError("too few pairs for a national CEF profile")
        profiles.append(CefProfile("national", _bin_table(reg, dep, n_bins),
                                   _linearity_index(reg, dep)))
    elif level == "region":
        for region_id, sub in records.groupby("region_id", sort=True):
            dep, reg = extract_pairs(sub, spec)
            if dep.size < 10:
                continue
            profiles.append(CefProfile(str(region_id), _bin_table(reg, dep, n_bins),
                                       _linearity_index(reg, dep)))
    else:
        raise SpecError(f"unknown level {level!r}")
    return profiles


def cross_measure_matrix(stats_wide: pd.DataFrame, weights: pd.Series,
                         min_regions: int = 2) -> pd.DataFrame:
    """Weighted correlation matrix between region-level statistics.

    `stats_wide` holds one row per region and one column per statistic;
    `weights` holds the per-region pair counts. Each entry uses the regions
    where both statistics are available.
    """
    cols = list(stats_wide.columns)
    out = pd.DataFrame(np.eye(len(cols)), index=cols, columns=cols)
    for i, a in enumerate(cols):
        for j in range(i + 1, len(cols)):
            b = cols[j]
            both = stats_wide[[a, b]].dropna()
            if len(both) < max(min_regions, 2):
                raise EstimationError(
                    f"fewer than {max(min_regions, 2)} regions for corr({a}, {b})")
            w = weights.reindex(both.index).to_numpy(dtype=float)
            r = regress.weighted_corr(both[a].to_numpy(), both[b].to_numpy(), w)
            out.loc[a, b] = out.loc[b, a] = r
    return out
