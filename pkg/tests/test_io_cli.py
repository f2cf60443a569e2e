"""CSV schemas, round-trips, pipeline orchestration, CLI surface."""

import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from mobilab import io
from mobilab.cli import main
from mobilab.errors import ConfigError, DataValidationError
from mobilab.pipeline import PipelineConfig, run_pipeline
from mobilab.report import PRESETS, emit_table_preset, weighted_kde
from mobilab.synthkit import (GeneratorConfig, PanelConfig, RegionParams,
                              generate_earnings_panel, generate_population)


def small_records(seed=1, n=300, regions=3):
    cfg = GeneratorConfig(
        seed=seed,
        regions=[RegionParams(f"R{i}", rho=0.9, lam=0.4, n_lineages=n,
                              rho_earnings=0.8,
                              missing_rates={"pgf": 0.2})
                 for i in range(regions)])
    return generate_population(cfg)


# --- lineage CSV ------------------------------------------------------------

def test_lineage_round_trip(tmp_path):
    records = small_records()
    path = tmp_path / "lineage.csv"
    io.write_lineage_csv(records, path)
    back, report = io.ingest_lineage_csv(path)
    assert report.n_errors == 0
    assert report.n_ok == len(records)
    cols = [c for c in io.LINEAGE_COLUMNS if c in records.columns]
    pd.testing.assert_frame_equal(back[cols], records[cols])


def test_empty_file_with_header_ok(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("child_id,region_id,child_birth_year,child_gender,edu_child\n")
    records, report = io.ingest_lineage_csv(path)
    assert len(records) == 0
    assert report.n_errors == 0


def test_rank_out_of_range_flagged_with_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text(
        "child_id,region_id,child_birth_year,child_gender,rank_child\n"
        "a,R,1985,M,0.5\n"
        "b,R,1985,F,1.2\n")
    with pytest.raises(DataValidationError) as err:
        io.ingest_lineage_csv(path)
    assert "line 3" in str(err.value)
    assert "rank_child" in str(err.value)
    records, report = io.ingest_lineage_csv(path, on_error="skip")
    assert len(records) == 1
    assert report.error_counts["rank_child"] == 1


def test_malformed_number_and_gender(tmp_path):
    path = tmp_path / "bad2.csv"
    path.write_text(
        "child_id,region_id,child_birth_year,child_gender,edu_child\n"
        "a,R,not_a_year,M,12\n"
        "b,R,1985,X,12\n"
        "c,R,1985,F,oops\n")
    records, report = io.ingest_lineage_csv(path, on_error="skip")
    assert len(records) == 0
    assert report.n_errors == 3


def test_unknown_column_rejected(tmp_path):
    path = tmp_path / "bad3.csv"
    path.write_text("child_id,region_id,child_birth_year,child_gender,salary\na,R,1985,M,1\n")
    with pytest.raises(DataValidationError):
        io.ingest_lineage_csv(path)


def test_categorical_flag_checks_code_set(tmp_path):
    path = tmp_path / "cat.csv"
    path.write_text(
        "child_id,region_id,child_birth_year,child_gender,edu_child\n"
        "a,R,1985,M,12\n"
        "b,R,1985,F,13\n")
    _, report = io.ingest_lineage_csv(path, categorical=True, on_error="skip")
    assert report.error_counts["edu_child"] == 1


def test_panel_round_trip_and_age_check(tmp_path):
    cfg = GeneratorConfig(
        seed=2, regions=[RegionParams("R", rho=0.9, lam=0.4, n_lineages=60,
                                      rho_earnings=0.8)],
        outcome_mode="earnings-panel", relatives=("child", "father"))
    records = generate_population(cfg)
    panel = generate_earnings_panel(records, PanelConfig(
        relatives=("child", "father"), seed=3))
    path = tmp_path / "panel.csv"
    io.write_panel_csv(panel, path)
    back, report = io.ingest_panel_csv(path)
    assert report.n_errors == 0
    assert len(back) == len(panel)
    assert back.below_floor.dtype == bool

    broken = panel.copy()
    broken.loc[broken.index[0], "age"] = broken["age"].iloc[0] + 1
    io.write_panel_csv(broken, path)
    with pytest.raises(DataValidationError) as err:
        io.ingest_panel_csv(path)
    assert "age != year - birth_year" in str(err.value)


# --- pipeline -----------------------------------------------------------------

def run_small_pipeline(tmp_path, analyses, **kwargs):
    cfg = PipelineConfig(seed=5, out_dir=str(tmp_path / "out"), preset="demo",
                         analyses=analyses, min_pairs=200,
                         placebo_permutations=3, subsample_k=2,
                         recovery_rhos=(1.0,), recovery_lambdas=(0.4,),
                         recovery_n=2000, recovery_replicates=5, **kwargs)
    return run_pipeline(cfg)


def test_pipeline_two_region_estimates(tmp_path):
    records = small_records(regions=2)
    path = tmp_path / "lineage.csv"
    io.write_lineage_csv(records, path)
    cfg = PipelineConfig(seed=1, out_dir=str(tmp_path / "out"),
                         input_kind="lineage_csv", lineage_path=str(path),
                         analyses=("estimates",))
    bundle = run_pipeline(cfg)
    est = pd.read_csv(bundle.outputs["estimates.csv"])
    father_rows = est[(est.pair == "father") & (est.gender == "all")
                      & (est.outcome == "schooling_years")]
    assert len(father_rows) == 2


def test_pipeline_full_bundle_and_presets(tmp_path):
    bundle = run_small_pipeline(
        tmp_path, ("estimates", "delta", "latent", "gatsby", "cef",
                   "cross_matrix", "placebo", "subsamples", "recovery"))
    assert not bundle.failures
    for preset in PRESETS:
        out = emit_table_preset(bundle.out_dir, preset)
        assert out.exists()
        assert len(pd.read_csv(out)) > 0
    manifest = json.loads((bundle.out_dir / "manifest.json").read_text())
    assert manifest["config_hash"] == PipelineConfig(
        **{k: tuple(v) if isinstance(v, list) else v
           for k, v in manifest["config"].items()}).config_hash()


def test_pipeline_rerun_byte_identical(tmp_path):
    analyses = ("estimates", "delta", "latent", "gatsby", "cef", "placebo")
    b1 = run_small_pipeline(tmp_path / "a", analyses)
    b2 = run_small_pipeline(tmp_path / "b", analyses)
    names = sorted(set(b1.outputs) | {"manifest.json", "run.log"})
    assert sorted(b1.outputs) == sorted(b2.outputs)
    for name in names:
        assert (b1.out_dir / name).read_bytes() == (b2.out_dir / name).read_bytes()


def test_pipeline_failure_recorded_and_others_run(tmp_path):
    # demo records lack nothing, so force a failure via a lineage file
    # without earnings columns and a gatsby request
    records = small_records(regions=3)
    edu_only = records[[c for c in records.columns if not c.startswith("logearn")
                        and not c.startswith("rank")]]
    path = tmp_path / "edu.csv"
    io.write_lineage_csv(edu_only, path)
    cfg = PipelineConfig(seed=2, out_dir=str(tmp_path / "out"),
                         input_kind="lineage_csv", lineage_path=str(path),
                         analyses=("estimates", "gatsby", "delta"))
    bundle = run_pipeline(cfg)
    assert "gatsby" in bundle.failures
    assert "estimates.csv" in bundle.outputs
    assert "delta.csv" in bundle.outputs


def test_pipeline_config_validation():
    with pytest.raises(ConfigError):
        PipelineConfig(analyses=("nope",)).validate()
    with pytest.raises(ConfigError):
        PipelineConfig(input_kind="lineage_csv").validate()
    with pytest.raises(ConfigError):
        PipelineConfig(input_kind="panel_csv", panel_path="x",
                       analyses=("estimates",)).validate()
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"bad_key": 1})


def test_pipeline_config_from_yaml(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text(
        "seed: 9\nout_dir: out\npreset: demo\nanalyses: [estimates, delta]\n")
    cfg = PipelineConfig.from_file(path)
    assert cfg.seed == 9
    assert cfg.analyses == ("estimates", "delta")


def test_panel_csv_input_predictions(tmp_path):
    cfg = GeneratorConfig(
        seed=4, regions=[RegionParams("R", rho=0.9, lam=0.4, n_lineages=80,
                                      rho_earnings=0.8)],
        outcome_mode="earnings-panel", relatives=("child", "father"))
    records = generate_population(cfg)
    panel = generate_earnings_panel(records, PanelConfig(
        relatives=("child", "father"), seed=5))
    path = tmp_path / "panel.csv"
    io.write_panel_csv(panel, path)
    pcfg = PipelineConfig(seed=4, out_dir=str(tmp_path / "out"),
                          input_kind="panel_csv", panel_path=str(path),
                          analyses=("predictions",))
    bundle = run_pipeline(pcfg)
    preds = pd.read_csv(bundle.outputs["predictions.csv"])
    assert {"person_id", "log_earnings_at_40", "rank", "cell_key"} <= set(preds.columns)
    assert preds["rank"].between(0, 1).all()


# --- report helpers ---------------------------------------------------------

def test_weighted_kde_integrates_to_one():
    rng = np.random.default_rng(3)
    grid, dens = weighted_kde(rng.normal(0.3, 0.05, 500),
                              weights=rng.uniform(1, 5, 500), bandwidth=0.01)
    assert len(grid) == 512
    assert np.trapezoid(dens, grid) == pytest.approx(1.0, abs=0.01)


def test_preset_on_empty_bundle_reports_missing(tmp_path):
    from mobilab.errors import DependencyError
    with pytest.raises(DependencyError) as err:
        emit_table_preset(tmp_path, "table3")
    assert "latent.csv" in str(err.value)


# --- CLI ------------------------------------------------------------------------

def test_cli_simulate_and_ingest(tmp_path):
    runner = CliRunner()
    out = tmp_path / "sim"
    res = runner.invoke(main, ["simulate", "--preset", "demo", "--seed", "3",
                               "--out", str(out)])
    assert res.exit_code == 0, res.output
    lineage = out / "lineage.csv"
    assert lineage.exists()
    res = runner.invoke(main, ["ingest", str(lineage)])
    assert res.exit_code == 0
    assert "errors=0" in res.output


def test_cli_estimate_and_report(tmp_path):
    runner = CliRunner()
    out = tmp_path / "run"
    for cmd in ("estimate", "delta", "latent", "gatsby"):
        res = runner.invoke(main, [cmd, "--preset", "demo", "--seed", "3",
                                   "--out", str(out)])
        assert res.exit_code == 0, res.output
    res = runner.invoke(main, ["report", "--bundle", str(out)])
    assert res.exit_code == 0, res.output
    assert (out / "table3.csv").exists()
    assert (out / "figure1_density.png").exists()


def test_cli_exit_codes(tmp_path):
    runner = CliRunner()
    # config error -> 2
    res = runner.invoke(main, ["estimate", "--preset", "demo", "--config",
                               str(tmp_path / "missing.yaml")])
    assert res.exit_code == 2
    # validation error -> 3
    bad = tmp_path / "bad.csv"
    bad.write_text("child_id,region_id,child_birth_year,child_gender,rank_child\n"
                   "a,R,1985,M,2.0\n")
    res = runner.invoke(main, ["ingest", str(bad)])
    assert res.exit_code == 3
    # dependency error on explicit preset -> 2
    empty = tmp_path / "emptydir"
    empty.mkdir()
    res = runner.invoke(main, ["report", "--bundle", str(empty),
                               "--preset", "table5"])
    assert res.exit_code == 2


def test_cli_gender_and_weight_flags(tmp_path):
    runner = CliRunner()
    out = tmp_path / "flags"
    res = runner.invoke(main, ["estimate", "--preset", "demo", "--seed", "4",
                               "--out", str(out), "--unweighted",
                               "--gender", "sons", "--min-pairs", "100",
                               "--balanced"])
    assert res.exit_code == 0, res.output
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["gender"] == "sons"
    assert manifest["config"]["weighting"] == "unweighted"
    assert manifest["config"]["balanced"] is True
    assert manifest["config"]["min_pairs"] == 100
    est = pd.read_csv(out / "estimates.csv")
    assert set(est["gender"]) == {"sons"}


def test_pipeline_gender_and_balance_change_results(tmp_path):
    base = dict(seed=6, preset="demo", analyses=("estimates", "delta"))
    all_cfg = PipelineConfig(out_dir=str(tmp_path / "all"), **base)
    sons_cfg = PipelineConfig(out_dir=str(tmp_path / "sons"), gender="sons", **base)
    bal_cfg = PipelineConfig(out_dir=str(tmp_path / "bal"), balanced=True, **base)
    b_all = run_pipeline(all_cfg)
    b_sons = run_pipeline(sons_cfg)
    b_bal = run_pipeline(bal_cfg)

    est_all = pd.read_csv(b_all.outputs["estimates.csv"])
    est_sons = pd.read_csv(b_sons.outputs["estimates.csv"])
    assert set(est_sons["gender"]) == {"sons"}
    father_all = est_all[(est_all.pair == "father") & (est_all.gender == "all")
                         & (est_all.outcome == "schooling_years")]
    father_sons = est_sons[(est_sons.pair == "father")
                           & (est_sons.outcome == "schooling_years")]
    # roughly half the pairs survive the child-gender filter
    assert father_sons.n_pairs.sum() < 0.6 * father_all.n_pairs.sum()

    # balanced mode keeps only complete triplets: father-pair counts drop to
    # the grandfather-pair counts
    d_all = pd.read_csv(b_all.outputs["delta.csv"])
    d_bal = pd.read_csv(b_bal.outputs["delta.csv"])
    edu_all = d_all[d_all.outcome == "schooling_years"]
    edu_bal = d_bal[d_bal.outcome == "schooling_years"]
    assert (edu_bal.n1 == edu_bal.n2).all()
    assert edu_bal.n1.sum() < edu_all.n1.sum()
