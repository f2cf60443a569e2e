"""Excess-persistence testing and latent-parameter recovery.

The test statistic is the gap between the child-grandfather statistic and
the squared child-father statistic. Both statistics are estimated jointly on
their own (possibly overlapping) samples; the joint sampling covariance
comes from summing influence-series cross-products over the common
observations, which is the seemingly-unrelated-regressions covariance for
this two-equation system. The gap's variance follows from the delta rule:

    Var(gap) ~ Var(b2) + (2 b1)^2 Var(b1) - 2 (2 b1) Cov(b2, b1)

Recovery inverts the population moments: the ratio of the grandfather to the
father statistic identifies transferability, and returns follow from the
father statistic squared over the grandfather statistic.
"""

from dataclasses import dataclass

import numpy as np
import pandas as pd

from . import regress
from .errors import AnalysisError, EstimationError
from .mobility import OUTCOME_COLUMNS

# Estimates beyond these bounds mark a region as inconsistent with the model.
LAMBDA_GUARDRAIL = 1.5
RHO_GUARDRAIL = 1.5


@dataclass
class DeltaTest:
    """Excess-persistence gap for one region."""

    region_id: str
    beta1: float
    beta2: float
    delta: float
    var_delta: float
    t_stat: float
    cov_b1b2: float
    var_b1: float
    var_b2: float
    n1: int
    n2: int
    valid: bool = True
    reason: str = ""


@dataclass
class LatentEstimate:
    """Recovered returns / transferability for one region."""

    region_id: str
    lambda_hat: float
    rho_hat: float
    beta1_adj: float
    beta2: float
    valid: bool
    reason: str = ""


def delta_var(beta1: float, var_b1: float, var_b2: float, cov: float) -> float:
    """Delta-rule variance of beta2 - beta1^2."""
    return var_b2 + (2.0 * beta1) ** 2 * var_b1 - 2.0 * (2.0 * beta1) * cov


def _stat_influence(x: np.ndarray, y: np.ndarray, statistic: str):
    """Statistic of y on x plus its influence series."""
    if statistic == "pearson_correlation":
        return regress.corr_influence(x, y)
    if statistic == "regression_slope":
        b, _, psi = regress.slope_influence(x, y)
        return b, psi
    raise AnalysisError(f"unknown statistic {statistic!r}")


def delta_from_arrays(child: np.ndarray, father: np.ndarray, grandfather: np.ndarray,
                      *, statistic: str = "pearson_correlation",
                      balanced: bool = False, region_id: str = "") -> DeltaTest:
    """Excess-persistence test from three aligned outcome arrays.

    Missing values select each equation's sample: the father equation uses
    complete child-father pairs and the grandfather equation complete
    child-grandfather pairs (their intersection with balanced=True).
    """
    child = np.asarray(child, dtype=float)
    father = np.asarray(father, dtype=float)
    grandfather = np.asarray(grandfather, dtype=float)
    m1 = np.isfinite(child) & np.isfinite(father)
    m2 = np.isfinite(child) & np.isfinite(grandfather)
    if balanced:
        m1 = m2 = m1 & m2
    n1, n2 = int(m1.sum()), int(m2.sum())
    if n1 < 2 or n2 < 2:
        raise EstimationError(
            f"region {region_id or '?'}: need 2 complete pairs per equation "
            f"(got {n1} father, {n2} grandfather)")

    b1, psi1 = _stat_influence(father[m1], child[m1], statistic)
    b2, psi2 = _stat_influence(grandfather[m2], child[m2], statistic)

    c1 = n1 / (n1 - 2) if n1 > 2 else 1.0
    c2 = n2 / (n2 - 2) if n2 > 2 else 1.0
    var_b1 = float(psi1 @ psi1) / (n1 * n1) * c1
    var_b2 = float(psi2 @ psi2) / (n2 * n2) * c2

    full1 = np.zeros(child.size)
    full2 = np.zeros(child.size)
    full1[m1] = psi1
    full2[m2] = psi2
    cov = float((full1 * full2).sum()) / (n1 * n2) * np.sqrt(c1 * c2)

    delta = b2 - b1 * b1
    var_d = delta_var(b1, var_b1, var_b2, cov)
    if var_d > 0 and np.isfinite(var_d):
        return DeltaTest(region_id, b1, b2, delta, var_d, delta / np.sqrt(var_d),
                         cov, var_b1, var_b2, n1, n2)
    return DeltaTest(region_id, b1, b2, delta, var_d, float("nan"), cov,
                     var_b1, var_b2, n1, n2, valid=False,
                     reason="degenerate covariance")


def delta_test(records: pd.DataFrame, *, outcome: str = "schooling_years",
               statistic: str = "pearson_correlation", balanced: bool = False,
               region_id: str = "") -> DeltaTest:
    """Excess-persistence test on one region's records (father / paternal
    grandfather line)."""
    suffix = OUTCOME_COLUMNS[outcome]
    cols = [f"{suffix}_child", f"{suffix}_father", f"{suffix}_pgf"]
    for col in cols:
        if col not in records.columns:
            raise AnalysisError(f"records lack column {col!r}")
    return delta_from_arrays(records[cols[0]].to_numpy(dtype=float),
                             records[cols[1]].to_numpy(dtype=float),
                             records[cols[2]].to_numpy(dtype=float),
                             statistic=statistic, balanced=balanced,
                             region_id=region_id)


def delta_tests_by_region(records: pd.DataFrame, *, outcome: str = "schooling_years",
                          statistic: str = "pearson_correlation",
                          balanced: bool = False) -> pd.DataFrame:
    """Per-region excess-persistence tests as a tidy DataFrame."""
    rows = []
    for region_id, sub in records.groupby("region_id", sort=True):
        try:
            t = delta_test(sub, outcome=outcome, statistic=statistic,
                           balanced=balanced, region_id=str(region_id))
        except EstimationError as exc:
            rows.append({"region_id": str(region_id), "valid": False,
                         "reason": str(exc)})
            continue
        rows.append({
            "region_id": t.region_id, "outcome": outcome, "statistic": statistic,
            "beta1": t.beta1, "beta2": t.beta2, "delta": t.delta,
            "var_delta": t.var_delta, "t_stat": t.t_stat, "cov_b1b2": t.cov_b1b2,
            "n1": t.n1, "n2": t.n2, "valid": t.valid, "reason": t.reason,
        })
    return pd.DataFrame(rows)


def reject_shares(delta_df: pd.DataFrame, weights=None) -> dict:
    """Shares of regions with a positive gap and with significant tests.

    `t_gt_196` uses the signed statistic (the one-sided 5% share is
    `t_gt_165`); `t_two_sided` uses |t| > 1.96. The weighted variant weights
    each region by the supplied pair counts.
    """
    ok = delta_df[delta_df["valid"].astype(bool)] if "valid" in delta_df else delta_df
    if ok.empty:
        raise AnalysisError("no valid regions for rejection shares")
    delta = ok["delta"].to_numpy(dtype=float)
    t = ok["t_stat"].to_numpy(dtype=float)
    if weights is None:
        w = np.ones(delta.size)
    else:
        w = np.asarray(pd.Series(weights).reindex(ok.index).to_numpy(), dtype=float) \
            if isinstance(weights, pd.Series) else np.asarray(weights, dtype=float)
    W = w.sum()

    def share(mask):
        return float((w * mask).sum() / W)

    return {
        "n_regions": int(delta.size),
        "share_delta_pos": share(delta > 0),
        "share_t_gt_196": share(t > 1.96),
        "share_t_two_sided": share(np.abs(t) > 1.96),
        "share_t_gt_165": share(t > 1.645),
    }


def recover_latent(beta1_g1g2: float, beta2: float, beta1_g2g3: float | None = None,
                   region_id: str = "") -> LatentEstimate:
    """Invert the moment conditions to per-region returns / transferability.

    The intergenerational input is the geometric mean of the child-parent
    and parent-grandparent statistics when both are available (the
    steady-state adjustment); with one input it is used directly.
    Inconsistent regions (non-positive inputs, estimates beyond the
    guardrails) come back flagged rather than raising.
    """
    inputs = [beta1_g1g2, beta2] + ([beta1_g2g3] if beta1_g2g3 is not None else [])
    if any(not np.isfinite(v) for v in inputs):
        return LatentEstimate(region_id, float("nan"), float("nan"), float("nan"),
                              beta2, valid=False, reason="non-finite inputs")
    if any(v <= 0 for v in inputs):
        return LatentEstimate(region_id, float("nan"), float("nan"), float("nan"),
                              beta2, valid=False, reason="non-positive inputs")
    beta1_adj = (np.sqrt(beta1_g1g2 * beta1_g2g3)
                 if beta1_g2g3 is not None else float(beta1_g1g2))
    lambda_hat = float(beta2 / beta1_adj)
    rho_hat = float(beta1_adj / np.sqrt(beta2))
    if lambda_hat > LAMBDA_GUARDRAIL or rho_hat > RHO_GUARDRAIL:
        return LatentEstimate(region_id, lambda_hat, rho_hat, beta1_adj, beta2,
                              valid=False, reason="estimate beyond guardrail")
    return LatentEstimate(region_id, lambda_hat, rho_hat, beta1_adj, beta2, valid=True)


def recover_by_region(records: pd.DataFrame, *, outcome: str = "schooling_years",
                      statistic: str = "pearson_correlation",
                      balanced: bool = False,
                      use_geometric_mean: bool = True) -> pd.DataFrame:
    """Per-region latent estimates from the paternal-line statistics."""
    suffix = OUTCOME_COLUMNS[outcome]
    need = [f"{suffix}_child", f"{suffix}_father", f"{suffix}_pgf"]
    for col in need:
        if col not in records.columns:
            raise AnalysisError(f"records lack column {col!r}")

    def stat(x, y):
        b, _ = _stat_influence(x, y, statistic)
        return b

    rows = []
    for region_id, sub in records.groupby("region_id", sort=True):
        child = sub[need[0]].to_numpy(dtype=float)
        father = sub[need[1]].to_numpy(dtype=float)
        gf = sub[need[2]].to_numpy(dtype=float)
        m1 = np.isfinite(child) & np.isfinite(father)
        m2 = np.isfinite(child) & np.isfinite(gf)
        m3 = np.isfinite(father) & np.isfinite(gf)
        if balanced:
            m1 = m2 = m3 = m1 & m2
        base = {"region_id": str(region_id), "outcome": outcome,
                "n1": int(m1.sum()), "n2": int(m2.sum())}
        try:
            if m1.sum() < 2 or m2.sum() < 2:
                raise EstimationError("fewer than 2 complete pairs")
            b1_cf = stat(father[m1], child[m1])
            b2 = stat(gf[m2], child[m2])
            b1_fg = stat(gf[m3], father[m3]) if (use_geometric_mean and m3.sum() >= 2) else None
        except EstimationError as exc:
            rows.append({**base, "lambda_hat": np.nan, "rho_hat": np.nan,
                         "beta1_adj": np.nan, "beta2": np.nan,
                         "valid": False, "reason": str(exc)})
            continue
        est = recover_latent(b1_cf, b2, b1_fg, region_id=str(region_id))
        rows.append({**base, "lambda_hat": est.lambda_hat, "rho_hat": est.rho_hat,
                     "beta1_adj": est.beta1_adj, "beta2": est.beta2,
                     "valid": est.valid, "reason": est.reason})
    return pd.DataFrame(rows)


def latent_regression(dep: pd.Series, regressors: dict, weights: pd.Series,
                      *, log_mode: bool = False, cov_type: str = "HC1",
                      cluster: pd.Series | None = None) -> regress.RegressionResult:
    """Cross-region regression of a statistic on recovered parameters.

    Weighted by pair counts with robust standard errors; log mode regresses
    the log of the dependent variable on the logs of the regressors and
    drops regions where any value is non-positive.
    """
    tab = pd.DataFrame({"dep": dep})
    for name, series in regressors.items():
        tab[name] = series
    tab["_w"] = weights
    if cluster is not None:
        tab["_cl"] = cluster
    tab = tab.dropna()
    if log_mode:
        value_cols = ["dep"] + list(regressors)
        tab = tab[(tab[value_cols] > 0).all(axis=1)]
        for col in value_cols:
            tab[col] = np.log(tab[col])
    if len(tab) < len(regressors) + 2:
        raise AnalysisError(f"too few regions ({len(tab)}) for the regression")
    return regress.wls(
        tab["dep"].to_numpy(), tab[list(regressors)].to_numpy(),
        weights=tab["_w"].to_numpy(), cov_type=cov_type,
        cluster=tab["_cl"].to_numpy() if cluster is not None else None,
        names=list(regressors))
