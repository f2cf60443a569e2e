"""Prime-age earnings prediction from person-year panels, and ranking.

The predictor regresses log annual earnings on individual fixed effects and
gender-by-education groups interacted with quadratic polynomials in age and
year, then evaluates each person's profile at age 40. Because age moves one
for one with calendar year within a person, the within-transformed linear
age and year columns are exactly collinear; the solver drops redundant
columns in a fixed order and records what it dropped instead of failing.

Covariates are centered at age 40 / year 1990 before fitting, which makes
the age-40 prediction a pure person-effect-plus-year-profile readout and
keeps the normal equations well scaled.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import DataValidationError, EstimationError

log = logging.getLogger(__name__)

BOTTOM_CODE = float(np.log(1000.0))  # SEK 1000 floor for predicted earnings

AGE_CENTER = 40.0
YEAR_CENTER = 1990.0
COVARIATE_NAMES = ("age", "age2", "year", "year2")


def percentile_rank(values: np.ndarray) -> np.ndarray:
    """Percentile ranks in (0, 1); tied groups collapse to one position.

    rank(x) = (#strictly below + 0.5) / (#strictly below + #strictly above + 1)

    Untied values reduce to (i - 0.5)/n; a singleton gets 0.5; any strictly
    increasing transform of the inputs leaves the output bit-identical.
    NaNs rank as NaN and do not count as competitors.
    """
    values = np.asarray(values, dtype=float)
    out = np.full(values.shape, np.nan)
    ok = ~np.isnan(values)
    vals = values[ok]
    if vals.size == 0:
        return out
    sorted_vals = np.sort(vals)
    below = np.searchsorted(sorted_vals, vals, side="left")
    above = vals.size - np.searchsorted(sorted_vals, vals, side="right")
    out[ok] = (below + 0.5) / (below + above + 1.0)
    return out


@dataclass
class FeModel:
    """Fitted two-way fixed-effects earnings model.

    person_effects are normalized to mean zero over the estimation sample;
    `intercept` carries the level. group_coeffs maps (gender, edu_group) to
    a 4-vector on centered (age, age^2, year, year^2).
    """

    intercept: float
    person_effects: dict
    group_coeffs: dict
    dropped_terms: dict
    year_range: tuple
    r2: float
    n_rows: int
    n_persons: int
    flags: list = field(default_factory=list)


def _design(age: np.ndarray, year: np.ndarray) -> np.ndarray:
    a = age - AGE_CENTER
    y = year - YEAR_CENTER
    return np.column_stack([a, a * a, y, y * y])


def _greedy_solve(X: np.ndarray, y: np.ndarray, rel_tol: float = 1e-8):
    """Least squares keeping columns in order, dropping near-collinear ones.

    Returns (coeffs over all columns with dropped ones at 0, dropped indices).
    """
    n, k = X.shape
    kept, basis = [], []
    for j in range(k):
        col = X[:, j]
        norm0 = np.linalg.norm(col)
        resid = col.copy()
        for q in basis:
            resid -= (q @ resid) * q
        if norm0 <= 0 or np.linalg.norm(resid) <= rel_tol * max(norm0, 1.0):
            continue
        basis.append(resid / np.linalg.norm(resid))
        kept.append(j)
    coeffs = np.zeros(k)
    if kept:
        sol, *_ = np.linalg.lstsq(X[:, kept], y, rcond=None)
        coeffs[kept] = sol
    dropped = [j for j in range(k) if j not in kept]
    return coeffs, dropped


def fit_fe_model(panel: pd.DataFrame) -> FeModel:
    """Fit the within-person demeaned earnings model, one slope vector per
    non-empty gender-by-education cell.

    Rows flagged below the earnings floor or outside ages 25-63 are excluded.
    Persons contribute to the slopes only through their within variation;
    single-row persons still receive a person effect.
    """
    required = {"person_id", "gender", "edu_group", "year", "age",
                "log_earnings", "below_floor"}
    missing = required - set(panel.columns)
    if missing:
        raise DataValidationError(f"panel is missing columns {sorted(missing)}")
    rows = panel[(~panel["below_floor"].astype(bool))
                 & (panel["age"] >= 25) & (panel["age"] <= 63)]
    if rows.empty:
        raise DataValidationError("no usable panel rows after floor/age filters")

    y = rows["log_earnings"].to_numpy(dtype=float)
    X = _design(rows["age"].to_numpy(dtype=float), rows["year"].to_numpy(dtype=float))

    codes, ids = pd.factorize(rows["person_id"].to_numpy())
    n_persons = len(ids)
    counts = np.bincount(codes, minlength=n_persons)
    y_dm = y - (np.bincount(codes, weights=y, minlength=n_persons) / counts)[codes]
    X_dm = np.empty_like(X)
    for j in range(X.shape[1]):
        X_dm[:, j] = X[:, j] - (np.bincount(codes, weights=X[:, j],
                                            minlength=n_persons) / counts)[codes]

    cells = rows.groupby([rows["gender"].astype(str),
                          rows["edu_group"].astype(str)]).indices
    group_coeffs, dropped_terms, flags = {}, {}, []
    resid = np.empty_like(y)
    for key, sel in cells.items():
        coeffs, dropped = _greedy_solve(X_dm[sel], y_dm[sel])
        group_coeffs[key] = coeffs
        if dropped:
            dropped_terms[key] = [COVARIATE_NAMES[j] for j in dropped]
        if len(dropped) == len(COVARIATE_NAMES):
            flags.append(f"cell {key}: no within-person variation, slopes set to 0")
        resid[sel] = y[sel] - X[sel] @ coeffs

    alpha = np.bincount(codes, weights=resid, minlength=n_persons) / counts
    intercept = float(alpha.mean())
    person_effects = dict(zip(ids, alpha - intercept))

    fitted_resid = resid - alpha[codes]
    sst = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((fitted_resid**2).sum()) / sst if sst > 0 else 0.0
    return FeModel(
        intercept=intercept,
        person_effects=person_effects,
        group_coeffs=group_coeffs,
        dropped_terms=dropped_terms,
        year_range=(int(rows["year"].min()), int(rows["year"].max())),
        r2=r2,
        n_rows=len(rows),
        n_persons=int(n_persons),
        flags=flags,
    )


def predict_at_40(model: FeModel, persons: pd.DataFrame, *,
                  eval_rule: str = "birth_year_plus_40",
                  gender_demean: bool = False,
                  bottom_code: float = BOTTOM_CODE) -> pd.DataFrame:
    """Predicted log earnings at age 40 for each person.

    The year polynomial is evaluated at birth_year + 40, clamped to the
    fitted panel's year range ("birth_year_plus_40"), or at the panel's
    midpoint year ("fixed_year"). Predictions are bottom-coded; with
    gender_demean the bottom-coded values are demeaned by gender and the
    floor no longer applies.
    """
    required = {"person_id", "gender", "edu_group", "birth_year"}
    missing = required - set(persons.columns)
    if missing:
        raise DataValidationError(f"persons table is missing columns {sorted(missing)}")
    persons = persons.reset_index(drop=True)
    if eval_rule == "birth_year_plus_40":
        eval_year = np.clip(persons["birth_year"].to_numpy(dtype=float) + 40.0,
                            model.year_range[0], model.year_range[1])
    elif eval_rule == "fixed_year":
        eval_year = np.full(len(persons), (model.year_range[0] + model.year_range[1]) / 2.0)
    else:
        raise EstimationError(f"unknown eval_rule {eval_rule!r}")

    coeff_tab = pd.DataFrame(
        [(g, e, c[2], c[3]) for (g, e), c in model.group_coeffs.items()],
        columns=["gender", "edu_group", "c_year", "c_year2"])
    keys = persons[["gender", "edu_group"]].astype(str)
    merged = keys.merge(coeff_tab, how="left", on=["gender", "edu_group"])
    fell_back = merged["c_year"].isna()
    if fell_back.any():
        fallback = keys.loc[fell_back, ["gender"]].assign(edu_group="missing")
        fb = fallback.merge(coeff_tab, how="left", on=["gender", "edu_group"])
        merged.loc[fell_back, ["c_year", "c_year2"]] = fb[["c_year", "c_year2"]].to_numpy()
        log.warning("predict_at_40: %d persons fell back to the missing-education cell",
                    int(fell_back.sum()))
    c1 = merged["c_year"].fillna(0.0).to_numpy()
    c2 = merged["c_year2"].fillna(0.0).to_numpy()
    yc = eval_year - YEAR_CENTER
    effects = persons["person_id"].map(model.person_effects).fillna(0.0).to_numpy()
    values = model.intercept + effects + c1 * yc + c2 * yc * yc

    values = np.maximum(values, bottom_code)
    out = persons[["person_id", "gender"]].copy()
    out["log_earnings_at_40"] = values
    out["gender_demeaned"] = False
    if gender_demean:
        means = out.groupby("gender")["log_earnings_at_40"].transform("mean")
        out["log_earnings_at_40"] = out["log_earnings_at_40"] - means
        out["gender_demeaned"] = True
    return out


def rank_within_cells(predictions: pd.DataFrame, cell_cols) -> pd.DataFrame:
    """Attach percentile ranks computed within each cell.

    Cells are typically (relationship type, child birth year); empty cells
    are skipped and a single-member cell gets rank 0.5.
    """
    value_col = "log_earnings_at_40"
    if value_col not in predictions.columns:
        raise DataValidationError(f"predictions lack a {value_col!r} column")
    out = predictions.copy()
    ranks = np.full(len(out), np.nan)
    for _, idx in out.groupby(list(cell_cols)).groups.items():
        vals = out.loc[idx, value_col].to_numpy()
        ranks[out.index.get_indexer(idx)] = percentile_rank(vals)
    out["rank"] = ranks
    return out


def short_run_mean(panel: pd.DataFrame, age_lo: int, age_hi: int) -> pd.Series:
    """Mean log earnings per person over an age window (floor rows excluded)."""
    rows = panel[(~panel["below_floor"].astype(bool))
                 & (panel["age"] >= age_lo) & (panel["age"] <= age_hi)]
    return rows.groupby("person_id")["log_earnings"].mean()
