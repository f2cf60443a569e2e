"""Weighted least squares with robust covariance, plus weighted correlations.

This is the single regression path used by the mobility, latent and gatsby
estimators, so the closed-form behaviour asserted in the test suite covers
every downstream consumer. Weights are analytic weights: they are rescaled to
mean one, which makes the unweighted case an exact special case of the
weighted one.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .errors import EstimationError

# Relative threshold for flagging an ill-conditioned design.
COND_WARN = 1e8


@dataclass
class RegressionResult:
    """Coefficients and robust inference for one weighted least-squares fit.

    Parameters are ordered as the design columns, intercept first when one
    was added. `cov` is the requested sandwich covariance (HC1 by default).
    """

    params: np.ndarray
    se: np.ndarray
    cov: np.ndarray
    nobs: int
    r2: float
    adj_r2: float
    resid: np.ndarray
    names: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {"nobs": self.nobs, "r2": self.r2, "adj_r2": self.adj_r2}
        for name, b, s in zip(self.names, self.params, self.se):
            out[f"coef_{name}"] = float(b)
            out[f"se_{name}"] = float(s)
        if self.warnings:
            out["warnings"] = list(self.warnings)
        return out


def _normalize_weights(w, n):
    if w is None:
        return np.ones(n)
    w = np.asarray(w, dtype=float)
    if w.shape != (n,):
        raise EstimationError(f"weight vector has shape {w.shape}, expected ({n},)")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise EstimationError("weights must be finite and non-negative")
    total = w.sum()
    if total <= 0:
        raise EstimationError("weights sum to zero")
    return w * (n / total)


def wls(y, X, weights=None, *, add_intercept=True, cov_type="HC1",
        cluster=None, names=None) -> RegressionResult:
    """Weighted least squares with a heteroskedasticity-robust sandwich.

    Parameters
    ----------
    y : (n,) response.
    X : (n,) or (n, k) design without intercept.
    weights : optional analytic weights, rescaled internally to mean 1.
    cov_type : "HC1" (default), "HC0", or "cluster" (requires `cluster` ids;
        CR1 small-sample factor).
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = y.shape[0]
    if X.shape[0] != n:
        raise EstimationError("y and X have different lengths")
    if add_intercept:
        X = np.column_stack([np.ones(n), X])
        if names is not None:
            names = ["const"] + list(names)
    k = X.shape[1]
    if n < k:
        raise EstimationError(f"need at least {k} observations, got {n}")
    if names is None:
        names = [f"x{j}" for j in range(k)]
        if add_intercept:
            names[0] = "const"

    w = _normalize_weights(weights, n)
    Xw = X * w[:, None]
    A = X.T @ Xw
    warns = []
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > COND_WARN:
        warns.append(f"ill-conditioned design (cond={cond:.3g})")
    try:
        Ainv = np.linalg.inv(A)
    except np.linalg.LinAlgError:
        # exactly collinear design: minimum-norm solution, flagged
        Ainv = np.linalg.pinv(A)
        if not warns:
            warns.append(f"singular design, pseudo-inverse used (cond={cond:.3g})")
    params = Ainv @ (Xw.T @ y)
    resid = y - X @ params

    scores = X * (w * resid)[:, None]
    if cov_type == "cluster":
        if cluster is None:
            raise EstimationError("cov_type='cluster' requires cluster ids")
        cluster = np.asarray(cluster)
        groups = {}
        for idx, c in enumerate(cluster):
            groups.setdefault(c, []).append(idx)
        G = len(groups)
        B = np.zeros((k, k))
        for idxs in groups.values():
            s = scores[idxs].sum(axis=0)
            B += np.outer(s, s)
        if G > 1:
            B *= (G / (G - 1)) * ((n - 1) / (n - k))
        else:
            warns.append("single cluster: no small-sample correction")
    else:
        B = scores.T @ scores
        if cov_type == "HC1":
            if n > k:
                B *= n / (n - k)
        elif cov_type != "HC0":
            raise EstimationError(f"unknown cov_type {cov_type!r}")
    cov = Ainv @ B @ Ainv
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))

    ybar = (w * y).sum() / w.sum()
    sst = (w * (y - ybar) ** 2).sum()
    ssr = (w * resid**2).sum()
    r2 = 1.0 - ssr / sst if sst > 0 else 0.0
    adj_r2 = 1.0 - (1.0 - r2) * (n - 1) / (n - k) if n > k else np.nan
    return RegressionResult(params=params, se=se, cov=cov, nobs=n, r2=r2,
                            adj_r2=adj_r2, resid=resid, names=list(names),
                            warnings=warns)


def corr_influence(x, y):
    """Pearson correlation with its per-observation influence series.

    The influence values satisfy Var(r_hat) ~ sum(psi^2) / n^2; summing
    cross-products of two statistics' influence series over their common
    observations gives the joint sampling covariance, which is how the
    excess-persistence test builds its seemingly-unrelated covariance.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sx = x.std()
    sy = y.std()
    if sx == 0.0 or sy == 0.0:
        raise EstimationError("zero variance in a correlation input")
    zx = (x - x.mean()) / sx
    zy = (y - y.mean()) / sy
    r = float((zx * zy).mean())
    psi = zx * zy - 0.5 * r * (zx * zx + zy * zy)
    return r, psi


def slope_influence(x, y):
    """OLS slope (intercept included) with its influence series."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xc = x - x.mean()
    sxx = float((xc * xc).sum())
    if sxx <= 0.0:
        raise EstimationError("zero variance in regressor")
    b = float((xc * y).sum() / sxx)
    a = float(y.mean() - b * x.mean())
    resid = y - a - b * x
    psi = xc * resid / (sxx / x.size)
    return b, a, psi


def influence_variance(psi: np.ndarray, small_sample: bool = True) -> float:
    """Sampling variance of a statistic from its influence series (HC1-style)."""
    n = psi.size
    var = float(psi @ psi) / (n * n)
    if small_sample and n > 2:
        var *= n / (n - 2)
    return var


def weighted_mean(x, w=None) -> float:
    x = np.asarray(x, dtype=float)
    if w is None:
        return float(x.mean())
    w = np.asarray(w, dtype=float)
    return float((w * x).sum() / w.sum())


def weighted_corr(x, y, w=None) -> float:
    """Weighted Pearson correlation; equals the unweighted one for equal weights."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.shape[0]
    if n < 2:
        raise EstimationError("need at least 2 observations for a correlation")
    w = _normalize_weights(w, n)
    xm = x - (w * x).sum() / w.sum()
    ym = y - (w * y).sum() / w.sum()
    sxx = (w * xm * xm).sum()
    syy = (w * ym * ym).sum()
    if sxx <= 0 or syy <= 0:
        raise EstimationError("zero variance in a correlation input")
    return float((w * xm * ym).sum() / np.sqrt(sxx * syy))


def corr_pvalue(r: float, n_regions: int) -> float:
    """Two-sided p-value from the t approximation for a correlation.

    Uses the number of cross-sectional units as the sample size; no
    adjustment is made for the inputs themselves being estimates.
    """
    if n_regions < 3:
        return float("nan")
    r = min(max(r, -1.0), 1.0)
    if abs(r) >= 1.0:
        return 0.0
    t = r * np.sqrt((n_regions - 2) / (1.0 - r * r))
    return float(2.0 * sps.t.sf(abs(t), df=n_regions - 2))
