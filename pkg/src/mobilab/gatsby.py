"""Cross-sectional inequality and its association with mobility statistics.

The Gini coefficient uses the population (n^2 denominator) convention, so it
matches the mean-absolute-difference definition exactly, handles ties via
the pairwise definition, and is replication-invariant. Inequality inputs are
earnings levels (exponentiated log earnings).
"""

from dataclasses import dataclass

import numpy as np
import pandas as pd

from . import regress
from .errors import AnalysisError, EstimationError
from .latent import latent_regression


@dataclass
class InequalityMeasure:
    region_id: str
    generation: str
    gini: float
    sd_log: float
    n: int


@dataclass
class GatsbyResult:
    statistic: str
    correlation: float
    p_value: float
    n_regions: int
    weighted: bool
    size_controlled: bool


def gini(values, weights=None) -> float:
    """Gini index of non-negative values, optionally weighted.

    Sorted-cumulative formula equal to the pairwise mean-absolute-difference
    definition: G = sum_j w_j x_j (2 C_j - w_j - W) / (W * sum_j w_j x_j),
    with C_j the inclusive cumulative weight. Integer weights reproduce
    repetition exactly; equal values yield 0 and [0, 100] yields 0.5.
    """
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise EstimationError("gini of an empty vector is undefined")
    if np.any(~np.isfinite(x)) or np.any(x < 0):
        raise EstimationError("gini requires finite non-negative values")
    if weights is None:
        w = np.ones(x.size)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != x.shape or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise EstimationError("weights must be finite, non-negative, aligned")
    total = (w * x).sum()
    if total <= 0:
        raise EstimationError("gini undefined: all values are zero")
    order = np.argsort(x, kind="stable")
    xs, ws = x[order], w[order]
    cw = np.cumsum(ws)
    W = cw[-1]
    return float((ws * xs * (2.0 * cw - ws - W)).sum() / (W * total))


def inequality_by_region(records: pd.DataFrame, generation: str = "grandfather",
                         earnings_col: str | None = None) -> pd.DataFrame:
    """Per-region Gini (earnings levels) and log dispersion for one generation."""
    if earnings_col is None:
        earnings_col = {"father": "logearn_father",
                        "grandfather": "logearn_pgf"}.get(generation)
        if earnings_col is None:
            raise AnalysisError(f"unknown generation {generation!r}")
    if earnings_col not in records.columns:
        raise AnalysisError(f"records lack column {earnings_col!r}")
    rows = []
    for region_id, sub in records.groupby("region_id", sort=True):
        logs = sub[earnings_col].dropna().to_numpy(dtype=float)
        if logs.size < 2:
            continue
        rows.append({
            "region_id": str(region_id), "generation": generation,
            "gini": gini(np.exp(logs)), "sd_log": float(logs.std(ddof=1)),
            "n": int(logs.size),
        })
    return pd.DataFrame(rows)


def _residualize(y: np.ndarray, x: np.ndarray, w: np.ndarray) -> np.ndarray:
    res = regress.wls(y, x, weights=w)
    return res.resid


def gatsby_correlation(stat: pd.Series, inequality: pd.Series, weights: pd.Series,
                       *, size_control: bool = False, sizes: pd.Series | None = None,
                       label: str = "") -> GatsbyResult:
    """Weighted correlation between a regional mobility statistic and the Gini.

    With size_control both series are first residualized on the number of
    complete pairs per region and the residuals are correlated (a weighted
    partial correlation). The p-value uses the t approximation with the
    region count and ignores that the inputs are themselves estimates.
    """
    tab = pd.DataFrame({"stat": stat, "gini": inequality, "w": weights})
    if size_control:
        if sizes is None:
            raise AnalysisError("size_control requires per-region sizes")
        tab["size"] = sizes
    tab = tab.dropna()
    if len(tab) < 3:
        raise AnalysisError(f"need at least 3 regions, got {len(tab)}")
    s = tab["stat"].to_numpy(dtype=float)
    g = tab["gini"].to_numpy(dtype=float)
    w = tab["w"].to_numpy(dtype=float)
    if size_control:
        size = tab["size"].to_numpy(dtype=float)
        s = _residualize(s, size, w)
        g = _residualize(g, size, w)
    r = regress.weighted_corr(s, g, w)
    return GatsbyResult(statistic=label, correlation=r,
                        p_value=regress.corr_pvalue(r, len(tab)),
                        n_regions=len(tab), weighted=True,
                        size_controlled=size_control)


def latent_inequality_regression(gini_series: pd.Series, regressors: dict,
                                 weights: pd.Series, *, log_mode: bool = False,
                                 cov_type: str = "HC1") -> regress.RegressionResult:
    """Regress the regional Gini on recovered latent parameters (WLS, HC1)."""
    return latent_regression(gini_series, regressors, weights,
                             log_mode=log_mode, cov_type=cov_type)
