"""Fixed-effects predictor, bottom-coding, and the ranking convention."""

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mobilab import earnings
from mobilab.errors import DataValidationError
from mobilab.synthkit import GeneratorConfig, PanelConfig, RegionParams
from mobilab.synthkit import generate_earnings_panel, generate_population


def make_panel(records=None, n=300, noise=0.0, seed=2, **panel_kwargs):
    cfg = GeneratorConfig(
        seed=seed,
        regions=[RegionParams("R", rho=0.9, lam=0.4, n_lineages=n, rho_earnings=0.8)],
        outcome_mode="earnings-panel",
        relatives=("child", "father", "pgf"))
    records = generate_population(cfg)
    pcfg = PanelConfig(noise_sd=noise, relatives=("child", "father", "pgf"),
                       seed=seed, **panel_kwargs)
    return records, generate_earnings_panel(records, pcfg), pcfg


# --- ranking ----------------------------------------------------------------

def test_rank_untied_fixture():
    assert np.allclose(earnings.percentile_rank(np.array([10.0, 20.0, 30.0])),
                       [1 / 6, 3 / 6, 5 / 6])


def test_rank_midrank_tied_fixture():
    assert np.allclose(earnings.percentile_rank(np.array([5.0, 5.0, 9.0])),
                       [0.25, 0.25, 5 / 6])


def test_rank_singleton_is_half():
    assert earnings.percentile_rank(np.array([3.14]))[0] == 0.5


def test_rank_nan_passthrough():
    out = earnings.percentile_rank(np.array([np.nan, 1.0, 2.0]))
    assert np.isnan(out[0])
    assert np.allclose(out[1:], [0.25, 0.75])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=40))
def test_rank_invariant_to_monotone_transform(values):
    x = np.asarray(values)
    base = earnings.percentile_rank(x)
    # power-of-two scaling is exact, hence strictly increasing on floats
    assert np.array_equal(base, earnings.percentile_rank(x * 4.0))
    # arbitrary strictly increasing remap of the distinct values
    uniq = np.unique(x)
    position = np.searchsorted(uniq, x)
    remapped = (position + 1.0) ** 2 + 0.5 * position
    assert np.array_equal(base, earnings.percentile_rank(remapped))
    assert ((base > 0) & (base < 1)).all()


def test_rank_within_cells_by_key():
    preds = pd.DataFrame({
        "person_id": list("abcdef"),
        "gender": ["M"] * 6,
        "log_earnings_at_40": [1.0, 2.0, 3.0, 5.0, 5.0, 9.0],
        "relationship": ["father"] * 3 + ["child"] * 3,
        "birth_year": [1980] * 6,
    })
    out = earnings.rank_within_cells(preds, ["relationship", "birth_year"])
    assert np.allclose(out.loc[out.relationship == "father", "rank"], [1/6, 3/6, 5/6])
    assert np.allclose(out.loc[out.relationship == "child", "rank"], [0.25, 0.25, 5/6])


# --- fixed-effects model ------------------------------------------------------


def test_noiseless_panel_recovers_coefficients_exactly():
    # identified case: no linear year term in the generating profile
    _, panel, pcfg = make_panel(n=250, noise=0.0, year_coefs=(0.0, 0.0005),
                                group_spread=0.2)
    model = earnings.fit_fe_model(panel)
    from mobilab.synthkit import build_group_profiles
    truth = build_group_profiles(pcfg).set_index(["gender", "edu_group"])
    checked = 0
    for cell, coeffs in model.group_coeffs.items():
        rows = panel[(panel.gender == cell[0]) & (panel.edu_group == cell[1])]
        persons = rows.person_id.nunique()
        if persons < 5 or rows.birth_year.nunique() < 3:
            continue  # slopes not identified in tiny cells
        t = truth.loc[cell]
        assert coeffs[0] == pytest.approx(t.b_age, abs=1e-8)
        assert coeffs[1] == pytest.approx(t.b_age2, abs=1e-8)
        assert coeffs[3] == pytest.approx(t.c_year2, abs=1e-8)
        checked += 1
    assert checked >= 3
    # collinear linear year column is dropped and recorded
    assert any("year" in terms for terms in model.dropped_terms.values())


def test_noisy_panel_coefficients_within_2se():
    _, panel, pcfg = make_panel(n=900, noise=0.15, seed=6, year_coefs=(0.0, 0.0))
    model = earnings.fit_fe_model(panel)
    from mobilab.synthkit import build_group_profiles
    truth = build_group_profiles(pcfg).set_index(["gender", "edu_group"])
    rows = panel[~panel.below_floor & panel.age.between(25, 63)]
    cell = rows.groupby(["gender", "edu_group"]).size().idxmax()
    sub = rows[(rows.gender == cell[0]) & (rows.edu_group == cell[1])]
    # within-person OLS oracle with its own SEs
    from mobilab import regress
    a = sub.age.to_numpy() - 40.0
    codes, _ = pd.factorize(sub.person_id)
    counts = np.bincount(codes)
    y = sub.log_earnings.to_numpy()
    y_dm = y - (np.bincount(codes, weights=y) / counts)[codes]
    X = np.column_stack([a, a * a])
    X_dm = X - np.stack([(np.bincount(codes, weights=X[:, j]) / counts)[codes]
                         for j in range(2)], axis=1)
    res = regress.wls(y_dm, X_dm, add_intercept=False)
    t = truth.loc[cell]
    assert abs(model.group_coeffs[cell][0] - t.b_age) < 2 * res.se[0] + 1e-9
    assert abs(model.group_coeffs[cell][1] - t.b_age2) < 2 * res.se[1] + 1e-9


def test_person_effects_mean_zero_and_residual_orthogonality():
    _, panel, _ = make_panel(n=300, noise=0.2, seed=4)
    model = earnings.fit_fe_model(panel)
    effects = np.array(list(model.person_effects.values()))
    assert effects.mean() == pytest.approx(0.0, abs=1e-10)
    # residuals orthogonal to the regressors and mean zero per person
    rows = panel[~panel.below_floor & panel.age.between(25, 63)].copy()
    coeffs = np.stack([model.group_coeffs[(g, e)]
                       for g, e in zip(rows.gender, rows.edu_group)])
    a = rows.age.to_numpy() - 40.0
    yc = rows.year.to_numpy() - 1990.0
    X = np.column_stack([a, a * a, yc, yc * yc])
    fitted = model.intercept \
        + rows.person_id.map(model.person_effects).to_numpy() \
        + (coeffs * X).sum(axis=1)
    resid = rows.log_earnings.to_numpy() - fitted
    per_person = pd.Series(resid).groupby(rows.person_id.to_numpy()).sum()
    assert np.abs(per_person).max() < 1e-8
    scale = len(resid) * rows.log_earnings.abs().max()
    for j in range(4):
        assert abs((X[:, j] * resid).sum()) / scale < 1e-8


def test_single_person_cell_flagged_not_crashed():
    panel = pd.DataFrame({
        "person_id": ["p1"] * 3,
        "region_id": ["R"] * 3,
        "gender": ["M"] * 3,
        "edu_group": ["12"] * 3,
        "birth_year": [1960] * 3,
        "year": [1990, 1991, 1992],
        "age": [30, 31, 32],
        "log_earnings": [10.0, 10.1, 10.2],
        "below_floor": [False] * 3,
    })
    model = earnings.fit_fe_model(panel)
    assert model.flags == []  # within variation exists even for one person
    solo = panel.iloc[[0]]
    model2 = earnings.fit_fe_model(solo)
    assert model2.flags  # no within variation at all -> flagged
    assert np.allclose(model2.group_coeffs[("M", "12")], 0.0)


def test_empty_panel_raises():
    panel = pd.DataFrame({
        "person_id": ["p"], "region_id": ["R"], "gender": ["M"],
        "edu_group": ["12"], "birth_year": [1900], "year": [1990],
        "age": [90], "log_earnings": [10.0], "below_floor": [False],
    })
    with pytest.raises(DataValidationError):
        earnings.fit_fe_model(panel)  # age filter removes everything


# --- prediction ----------------------------------------------------------------

def test_zero_noise_prediction_exact_at_age_40():
    records, panel, pcfg = make_panel(n=200, noise=0.0, seed=11)
    model = earnings.fit_fe_model(panel)
    persons = panel[["person_id", "gender", "edu_group", "birth_year"]] \
        .drop_duplicates("person_id")
    # persons whose age-40 year lies inside the panel window (no clamping)
    inside = persons[(persons.birth_year + 40 >= model.year_range[0])
                     & (persons.birth_year + 40 <= model.year_range[1])]
    preds = earnings.predict_at_40(model, inside).set_index("person_id")
    from mobilab.synthkit import build_group_profiles
    truth = build_group_profiles(pcfg).set_index(["gender", "edu_group"])
    effects = {}
    for rel in ("child", "father", "pgf"):
        col = records.set_index(records.child_id + f":{rel}")[f"logearn_{rel}"]
        effects.update(col.to_dict())
    for pid, row in inside.set_index("person_id").iterrows():
        t = truth.loc[(row.gender, row.edu_group)]
        yc = row.birth_year + 40 - 1990
        expected = max(effects[pid] + t.c_year * yc + t.c_year2 * yc**2,
                       earnings.BOTTOM_CODE)
        assert preds.loc[pid, "log_earnings_at_40"] == pytest.approx(expected, abs=1e-8)


def test_bottom_code_floor_exact():
    model = earnings.FeModel(
        intercept=0.0, person_effects={"a": -10.0, "b": 3.0},
        group_coeffs={("M", "12"): np.zeros(4)}, dropped_terms={},
        year_range=(1980, 2000), r2=1.0, n_rows=2, n_persons=2)
    persons = pd.DataFrame({"person_id": ["a", "b"], "gender": ["M", "M"],
                            "edu_group": ["12", "12"], "birth_year": [1950, 1950]})
    preds = earnings.predict_at_40(model, persons)
    assert preds.log_earnings_at_40.min() >= earnings.BOTTOM_CODE
    assert preds.log_earnings_at_40.iloc[0] == earnings.BOTTOM_CODE


def test_below_floor_true_prediction_bottom_coded():
    # a person whose true age-40 earnings sit below the floor comes out at it
    model = earnings.FeModel(
        intercept=5.0, person_effects={"a": -2.0},
        group_coeffs={("F", "9"): np.zeros(4)}, dropped_terms={},
        year_range=(1980, 2000), r2=1.0, n_rows=1, n_persons=1)
    persons = pd.DataFrame({"person_id": ["a"], "gender": ["F"],
                            "edu_group": ["9"], "birth_year": [1955]})
    out = earnings.predict_at_40(model, persons)
    assert out.log_earnings_at_40.iloc[0] == earnings.BOTTOM_CODE


def test_gender_demeaning_zeroes_means():
    _, panel, _ = make_panel(n=400, noise=0.1, seed=13)
    model = earnings.fit_fe_model(panel)
    persons = panel[["person_id", "gender", "edu_group", "birth_year"]] \
        .drop_duplicates("person_id")
    preds = earnings.predict_at_40(model, persons, gender_demean=True)
    means = preds.groupby("gender")["log_earnings_at_40"].mean()
    assert abs(means["M"]) < 1e-12
    assert abs(means["F"]) < 1e-12
    assert preds.gender_demeaned.all()


def test_unknown_cell_falls_back_to_missing():
    model = earnings.FeModel(
        intercept=5.0, person_effects={"a": 2.0},
        group_coeffs={("M", "missing"): np.array([0.0, 0.0, 0.1, 0.0])},
        dropped_terms={}, year_range=(1980, 2010), r2=1.0, n_rows=1, n_persons=1)
    persons = pd.DataFrame({"person_id": ["a"], "gender": ["M"],
                            "edu_group": ["20"], "birth_year": [1960]})
    out = earnings.predict_at_40(model, persons)
    # fell back to the missing-education year profile: 5.0 + 2.0 + 0.1*(2000-1990)
    assert out.log_earnings_at_40.iloc[0] == pytest.approx(8.0)


def test_short_run_mean_window():
    _, panel, _ = make_panel(n=50, noise=0.0, seed=15)
    m = earnings.short_run_mean(panel, 30, 32)
    direct = panel[~panel.below_floor & panel.age.between(30, 32)] \
        .groupby("person_id").log_earnings.mean()
    pd.testing.assert_series_equal(m, direct)
