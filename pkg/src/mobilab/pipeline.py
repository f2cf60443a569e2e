"""Batch orchestration: configuration, analysis scheduling, report bundles.

Every numeric output is a CSV (or JSON for regression reports) under the
configured output directory. The manifest records the resolved-config hash,
library versions, and a checksum per output file; nothing in the bundle
carries a timestamp, so identical configs produce byte-identical bundles.
"""

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__, earnings, gatsby, harness, io, latent, mobility, synthkit
from .errors import AnalysisError, ConfigError, DataValidationError, MobilabError

log = logging.getLogger(__name__)

ANALYSES = ("estimates", "delta", "latent", "gatsby", "cef", "cross_matrix",
            "placebo", "subsamples", "recovery")

# Pairs estimated per outcome in the `estimates` analysis.
EDU_PAIRS = ("father", "mother", "parental_average", "paternal_grandfather",
             "paternal_grandmother", "maternal_grandfather",
             "maternal_grandmother", "grandparental_average")
RANK_PAIRS = ("father", "mother", "parental_average", "paternal_grandfather",
              "maternal_grandfather", "grandparental_average")
IGE_PAIRS = ("father", "paternal_grandfather")
GENDERED_PAIRS = ("father", "paternal_grandfather")


@dataclass
class PipelineConfig:
    seed: int = 0
    out_dir: str = "out"
    input_kind: str = "synthetic"            # synthetic | lineage_csv | panel_csv
    preset: str = "demo"                     # sweden | demo (synthetic input)
    size_scale: float = 1.0
    outcome_mode: str = "continuous"
    lineage_path: str | None = None
    panel_path: str | None = None
    analyses: tuple = ("estimates",)
    weighting: str = "pair_count"            # pair_count | unweighted
    balanced: bool = False
    min_pairs: int = 1000                    # report filter for cross-region work
    gender: str = "all"
    categorical: bool = False                # lineage CSV schooling-code check
    placebo_permutations: int = 20
    placebo_threshold: int = 2000
    subsample_k: int = 10
    subsample_fraction: float = 1 / 3
    recovery_rhos: tuple = (0.7, 0.8, 0.9, 1.0)
    recovery_lambdas: tuple = (0.2, 0.4, 0.6)
    recovery_n: int = 100_000
    recovery_replicates: int = 100

    def validate(self) -> None:
        if self.input_kind not in ("synthetic", "lineage_csv", "panel_csv"):
            raise ConfigError(f"unknown input kind {self.input_kind!r}")
        if self.input_kind == "lineage_csv" and not self.lineage_path:
            raise ConfigError("lineage_csv input requires lineage_path")
        if self.input_kind == "panel_csv" and not self.panel_path:
            raise ConfigError("panel_csv input requires panel_path")
        unknown = set(self.analyses) - set(ANALYSES) - {"predictions"}
        if unknown:
            raise ConfigError(f"unknown analyses {sorted(unknown)}")
        if self.input_kind == "synthetic" and self.preset not in ("sweden", "demo"):
            raise ConfigError(f"unknown preset {self.preset!r}")
        if self.weighting not in ("pair_count", "unweighted"):
            raise ConfigError(f"unknown weighting {self.weighting!r}")
        if self.gender not in ("all", "sons", "daughters"):
            raise ConfigError(f"unknown gender {self.gender!r}")
        if self.input_kind == "panel_csv" and not set(self.analyses) <= {"predictions"}:
            raise ConfigError("panel_csv input supports only analyses=[predictions]; "
                              "lineage analyses need lineage records")
        if self.input_kind != "panel_csv" and "predictions" in self.analyses:
            raise ConfigError("the predictions analysis requires panel_csv input")

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        cfg = cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()})
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if path.suffix in (".yaml", ".yml"):
            import yaml
            raw = yaml.safe_load(text)
        elif path.suffix == ".json":
            raw = json.loads(text)
        else:
            raise ConfigError(f"config must be .yaml/.yml/.json, got {path.suffix}")
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a mapping")
        return cls.from_dict(raw)

    def canonical(self) -> dict:
        """Analytic configuration: everything that determines the numbers.

        The output directory is excluded, so bundles written to different
        locations from the same configuration stay byte-identical.
        """
        out = dataclasses.asdict(self)
        out.pop("out_dir")
        return out

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class ReportBundle:
    out_dir: Path
    manifest: dict
    outputs: dict = field(default_factory=dict)   # name -> Path
    failures: dict = field(default_factory=dict)  # name -> message


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_csv(df: pd.DataFrame, path: Path) -> None:
    df.to_csv(path, index=False)


def _write_json(data: dict, path: Path) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=float) + "\n")


def build_records(config: PipelineConfig):
    """Materialize lineage records per the configured input."""
    if config.input_kind == "lineage_csv":
        records, _ = io.ingest_lineage_csv(config.lineage_path,
                                           categorical=config.categorical)
        return records, None
    gen = (synthkit.sweden_preset(config.seed, size_scale=config.size_scale)
           if config.preset == "sweden" else synthkit.demo_preset(config.seed))
    gen.outcome_mode = config.outcome_mode
    records = synthkit.generate_population(gen)
    panel = None
    if config.outcome_mode == "earnings-panel":
        panel_cfg = gen.panel or synthkit.PanelConfig(seed=config.seed)
        panel = synthkit.generate_earnings_panel(records, panel_cfg)
        records = attach_predicted_ranks(records, panel)
    return records, panel


def earnings_flow(panel: pd.DataFrame) -> pd.DataFrame:
    """Panel -> fitted model -> age-40 predictions with within-cell ranks.

    Without lineage links the ranking cell falls back to (relationship,
    person birth year), with the relationship parsed from the person-id
    suffix when present.
    """
    model = earnings.fit_fe_model(panel)
    persons = panel[["person_id", "region_id", "gender", "edu_group",
                     "birth_year"]].drop_duplicates("person_id")
    preds = earnings.predict_at_40(model, persons)
    preds = preds.merge(persons[["person_id", "region_id", "birth_year"]],
                        on="person_id")
    preds["relationship"] = [pid.rsplit(":", 1)[1] if ":" in pid else "person"
                             for pid in preds["person_id"]]
    preds = earnings.rank_within_cells(preds, ["relationship", "birth_year"])
    preds["cell_key"] = (preds["relationship"] + "|"
                         + preds["birth_year"].astype(str))
    return preds


def attach_predicted_ranks(records: pd.DataFrame,
                           panel: pd.DataFrame) -> pd.DataFrame:
    """Run the earnings flow and hang predicted ranks back on the lineage.

    Panel person ids follow the `<child_id>:<relative>` convention, and
    prediction ranks are computed within (relative, child birth year) cells.
    """
    model = earnings.fit_fe_model(panel)
    persons = panel[["person_id", "region_id", "gender", "edu_group",
                     "birth_year"]].drop_duplicates("person_id")
    preds = earnings.predict_at_40(model, persons)
    split = preds["person_id"].str.rsplit(":", n=1, expand=True)
    preds["child_id"] = split[0]
    preds["relationship"] = split[1]
    child_by = records.set_index("child_id")["child_birth_year"]
    preds["child_birth_year"] = preds["child_id"].map(child_by)
    preds = earnings.rank_within_cells(preds, ["relationship", "child_birth_year"])

    out = records.copy()
    for rel in synthkit.RELATIVES:
        sub = preds[preds["relationship"] == rel]
        if sub.empty:
            continue
        ranks = sub.set_index("child_id")["rank"]
        out[f"rank_{rel}"] = out["child_id"].map(ranks)
    return out


def _available_outcomes(records: pd.DataFrame) -> list:
    out = []
    if "edu_child" in records.columns:
        out.append("schooling_years")
    if "rank_child" in records.columns:
        out.append("earnings_rank")
    if "logearn_child" in records.columns:
        out.append("log_earnings")
    return out


def _gender_records(records: pd.DataFrame, config: PipelineConfig) -> pd.DataFrame:
    if config.gender == "all":
        return records
    return records[records["child_gender"] == ("M" if config.gender == "sons" else "F")]


def _base_gender(config: PipelineConfig) -> str:
    return "all" if config.gender == "all" else config.gender


def _triplet_complete(records: pd.DataFrame, outcome: str) -> pd.DataFrame:
    suffix = mobility.OUTCOME_COLUMNS[outcome]
    cols = [f"{suffix}_child", f"{suffix}_father", f"{suffix}_pgf"]
    cols = [c for c in cols if c in records.columns]
    return records.dropna(subset=cols)


def _estimate_menu(records: pd.DataFrame, config: PipelineConfig) -> list:
    menu = []
    outcomes = _available_outcomes(records)
    for outcome, pairs, statistic in (
            ("schooling_years", EDU_PAIRS, "pearson_correlation"),
            ("earnings_rank", RANK_PAIRS, "regression_slope"),
            ("log_earnings", IGE_PAIRS, "regression_slope")):
        if outcome not in outcomes:
            continue
        for pair in pairs:
            if config.gender != "all":
                genders = (config.gender,)
            elif pair in GENDERED_PAIRS:
                genders = ("all", "sons", "daughters")
            else:
                genders = ("all",)
            for gender in genders:
                menu.append(mobility.EstimatorSpec(
                    outcome=outcome, statistic=statistic, pair=pair,
                    gender_filter=gender))
    return menu


def run_estimates(records: pd.DataFrame, config: PipelineConfig):
    frames, flagged, national = [], [], []
    for spec in _estimate_menu(records, config):
        sample = (_triplet_complete(records, spec.outcome)
                  if config.balanced else records)
        est_df, flag_df = mobility.estimate_by_region(sample, spec)
        if not est_df.empty:
            if spec.outcome == "earnings_rank":
                est_df["p25"] = est_df["alpha"] + 0.25 * est_df["beta"]
            frames.append(est_df)
        if not flag_df.empty:
            flag_df = flag_df.assign(outcome=spec.outcome, pair=spec.pair,
                                     gender=spec.gender_filter)
            flagged.append(flag_df)
        try:
            est = mobility.estimate_region(sample, spec, region_id="national")
            row = {"region_id": "national", "outcome": spec.outcome,
                   "statistic": spec.statistic, "pair": spec.pair,
                   "gender": spec.gender_filter, "alpha": est.alpha,
                   "beta": est.beta, "se_beta": est.se_beta,
                   "n_pairs": est.n_pairs, "r2": est.r2}
            if spec.outcome == "earnings_rank":
                row["p25"] = est.alpha + 0.25 * est.beta
            national.append(row)
        except MobilabError:
            pass
    if not frames:
        raise AnalysisError("no estimable specs on these records")
    est_all = pd.concat(frames, ignore_index=True)
    flag_all = (pd.concat(flagged, ignore_index=True) if flagged
                else pd.DataFrame(columns=["region_id", "n_pairs", "reason"]))
    return est_all, pd.DataFrame(national), flag_all


def run_delta(records: pd.DataFrame, config: PipelineConfig):
    records = _gender_records(records, config)
    frames, shares = [], []
    specs = []
    if "edu_child" in records.columns:
        specs.append(("schooling_years", "pearson_correlation"))
    if "rank_child" in records.columns:
        specs.append(("earnings_rank", "regression_slope"))
    if not specs:
        raise AnalysisError("delta analysis needs schooling or rank outcomes")
    for outcome, statistic in specs:
        df = latent.delta_tests_by_region(records, outcome=outcome,
                                          statistic=statistic,
                                          balanced=config.balanced)
        ok = df[df["valid"].astype(bool)]
        frames.append(df)
        for weighted in (False, True):
            s = latent.reject_shares(ok, weights=ok["n1"] if weighted else None)
            shares.append({"outcome": outcome, "statistic": statistic,
                           "weighted": weighted, **s})
    return pd.concat(frames, ignore_index=True), pd.DataFrame(shares)


def run_latent(records: pd.DataFrame, config: PipelineConfig):
    records = _gender_records(records, config)
    frames = []
    regressions = {}
    outcome_stats = []
    if "edu_child" in records.columns:
        outcome_stats.append(("schooling_years", "pearson_correlation"))
    if "rank_child" in records.columns:
        outcome_stats.append(("earnings_rank", "regression_slope"))
    if not outcome_stats:
        raise AnalysisError("latent analysis needs schooling or rank outcomes")
    for outcome, statistic in outcome_stats:
        for balanced in (False, True):
            df = latent.recover_by_region(records, outcome=outcome,
                                          statistic=statistic, balanced=balanced)
            df["sample"] = "balanced" if balanced else "unbalanced"
            frames.append(df)
            if balanced:
                continue
            ok = df[df["valid"].astype(bool)].set_index("region_id")
            if len(ok) < 4:
                continue
            dep = ok["beta2"]
            weights = (ok["n2"].astype(float) if config.weighting == "pair_count"
                       else pd.Series(1.0, index=ok.index))
            reg_specs = {
                "rho_only": {"rho_hat": ok["rho_hat"]},
                "lambda_only": {"lambda_hat": ok["lambda_hat"]},
                "both": {"rho_hat": ok["rho_hat"], "lambda_hat": ok["lambda_hat"]},
            }
            block = {}
            for name, regs in reg_specs.items():
                try:
                    block[name] = latent.latent_regression(dep, regs, weights).to_dict()
                    block[f"log_{name}"] = latent.latent_regression(
                        dep, regs, weights, log_mode=True).to_dict()
                except MobilabError as exc:
                    block[name] = {"error": str(exc)}
            regressions[outcome] = block
    return pd.concat(frames, ignore_index=True), regressions


def _region_series(est_df, outcome, pair, gender="all", value="beta"):
    sel = est_df[(est_df["outcome"] == outcome) & (est_df["pair"] == pair)
                 & (est_df["gender"] == gender)]
    return sel.set_index("region_id")[value]


def run_gatsby(records: pd.DataFrame, est_df: pd.DataFrame,
               latent_df: pd.DataFrame, config: PipelineConfig):
    if "logearn_father" not in records.columns:
        raise AnalysisError("gatsby analysis requires earnings outcomes")
    records = _gender_records(records, config)
    base_gender = _base_gender(config)
    ineq_f = gatsby.inequality_by_region(records, "father").set_index("region_id")
    ineq_g = gatsby.inequality_by_region(records, "grandfather").set_index("region_id")

    rows = []
    stat_menu = []
    if "rank_child" in records.columns:
        stat_menu += [("rank_slope", "earnings_rank", "beta"),
                      ("p25", "earnings_rank", "p25")]
    if "logearn_child" in records.columns:
        stat_menu += [("ige", "log_earnings", "beta")]
    if "edu_child" in records.columns:
        stat_menu += [("edu_correlation", "schooling_years", "beta")]
    horizons = (("inter", "father", ineq_f), ("multi", "paternal_grandfather", ineq_g))
    genders = (("sons", "daughters", "all") if config.gender == "all"
               else (config.gender,))
    for label, outcome, value in stat_menu:
        for horizon, pair, ineq in horizons:
            if value == "p25" and "p25" not in est_df.columns:
                continue
            sizes = _region_series(est_df, outcome, "father", base_gender,
                                   "n_pairs")
            weights = (sizes if config.weighting == "pair_count"
                       else pd.Series(1.0, index=sizes.index))
            for gender in genders:
                try:
                    stat = _region_series(est_df, outcome, pair, gender, value)
                except KeyError:
                    continue
                if stat.empty:
                    continue
                for size_control in ((False, True) if gender == base_gender
                                     else (False,)):
                    try:
                        res = gatsby.gatsby_correlation(
                            stat, ineq["gini"], weights,
                            size_control=size_control, sizes=sizes,
                            label=f"{label}_{horizon}")
                    except MobilabError:
                        continue
                    rows.append({
                        "statistic": label, "horizon": horizon, "gender": gender,
                        "size_controlled": size_control,
                        "correlation": res.correlation, "p_value": res.p_value,
                        "n_regions": res.n_regions,
                    })
    gatsby_df = pd.DataFrame(rows)

    regressions = {}
    latent_outcome = ("schooling_years"
                      if (latent_df["outcome"] == "schooling_years").any()
                      else latent_df["outcome"].iloc[0])
    lat = latent_df[(latent_df["sample"] == "unbalanced")
                    & (latent_df["outcome"] == latent_outcome)]
    lat = lat[lat["valid"].astype(bool)].set_index("region_id")
    if len(lat) >= 4:
        gini_f = ineq_f["gini"].reindex(lat.index)
        weights = (lat["n2"].astype(float) if config.weighting == "pair_count"
                   else pd.Series(1.0, index=lat.index))
        for name, regs in (("rho_only", {"rho_hat": lat["rho_hat"]}),
                           ("lambda_only", {"lambda_hat": lat["lambda_hat"]}),
                           ("both", {"rho_hat": lat["rho_hat"],
                                     "lambda_hat": lat["lambda_hat"]})):
            try:
                regressions[name] = gatsby.latent_inequality_regression(
                    gini_f, regs, weights).to_dict()
            except MobilabError as exc:
                regressions[name] = {"error": str(exc)}

    ineq_all = pd.concat([ineq_f.reset_index(), ineq_g.reset_index()],
                         ignore_index=True)
    return gatsby_df, ineq_all, regressions


def run_cef(records: pd.DataFrame, config: PipelineConfig):
    if "rank_child" not in records.columns:
        raise AnalysisError("CEF profiles need rank outcomes")
    spec = mobility.EstimatorSpec(outcome="earnings_rank",
                                  statistic="regression_slope",
                                  gender_filter=_base_gender(config))
    rows, linearity = [], []
    national = mobility.cef_bins(records, n_bins=100, level="national", spec=spec)
    for prof in national:
        tab = prof.bins.assign(level="national", region_id=prof.region_id)
        rows.append(tab)
        linearity.append({"region_id": prof.region_id,
                          "linearity_index": prof.linearity_index})
    for prof in mobility.cef_bins(records, n_bins=10, level="region", spec=spec):
        rows.append(prof.bins.assign(level="region", region_id=prof.region_id))
        linearity.append({"region_id": prof.region_id,
                          "linearity_index": prof.linearity_index})
    cef_df = pd.concat(rows, ignore_index=True)
    return cef_df[["level", "region_id", "bin_center", "mean_child", "n"]], \
        pd.DataFrame(linearity)


def run_cross_matrix(est_df: pd.DataFrame, config: PipelineConfig):
    base_gender = _base_gender(config)
    cols = {}
    for outcome, tag in (("schooling_years", "edu"), ("earnings_rank", "rank"),
                         ("log_earnings", "ige")):
        for pair, ptag in (("father", "f"), ("paternal_grandfather", "fgf"),
                           ("mother", "m"), ("maternal_grandfather", "mgf")):
            sel = est_df[(est_df["outcome"] == outcome) & (est_df["pair"] == pair)
                         & (est_df["gender"] == base_gender)]
            if sel.empty:
                continue
            cols[f"{tag}_{ptag}"] = sel.set_index("region_id")["beta"]
    if len(cols) < 2:
        raise AnalysisError("cross-measure matrix needs at least two statistics")
    wide = pd.DataFrame(cols)
    sizes = _region_series(est_df, est_df["outcome"].iloc[0], "father",
                           base_gender, "n_pairs")
    weights = (sizes if config.weighting == "pair_count"
               else pd.Series(1.0, index=sizes.index))
    big = sizes[sizes >= config.min_pairs].index
    wide = wide.loc[wide.index.intersection(big)]
    if len(wide) < 2:
        raise AnalysisError(
            f"fewer than 2 regions pass the min-pairs filter ({config.min_pairs})")
    matrix = mobility.cross_measure_matrix(wide, weights)
    return matrix.reset_index().rename(columns={"index": "statistic"})


def run_placebo(records: pd.DataFrame, config: PipelineConfig):
    cfg = harness.PlaceboConfig(seed=config.seed,
                                n_permutations=config.placebo_permutations,
                                split_threshold=config.placebo_threshold)
    gender = _base_gender(config)
    frames, details = [], []
    specs = []
    if "edu_child" in records.columns:
        specs.append(mobility.EstimatorSpec(outcome="schooling_years",
                                            statistic="pearson_correlation",
                                            gender_filter=gender))
    if "rank_child" in records.columns:
        specs.append(mobility.EstimatorSpec(outcome="earnings_rank",
                                            statistic="regression_slope",
                                            gender_filter=gender))
    if not specs:
        raise AnalysisError("placebo analysis needs schooling or rank outcomes")
    for spec in specs:
        reports, detail = harness.placebo_reshuffle(records, cfg, spec)
        for rep in reports:
            frames.append({"outcome": spec.outcome, **dataclasses.asdict(rep)})
        details.append(detail.assign(outcome=spec.outcome))
    return pd.DataFrame(frames), pd.concat(details, ignore_index=True)


def run_subsamples(records: pd.DataFrame, config: PipelineConfig):
    records = _gender_records(records, config)

    def analysis(sub: pd.DataFrame) -> pd.DataFrame:
        rows = []
        for outcome, statistic in (("schooling_years", "pearson_correlation"),
                                   ("earnings_rank", "regression_slope")):
            if mobility.OUTCOME_COLUMNS[outcome] == "rank" and \
                    "rank_child" not in sub.columns:
                continue
            if outcome == "schooling_years" and "edu_child" not in sub.columns:
                continue
            df = latent.recover_by_region(sub, outcome=outcome, statistic=statistic)
            ok = df[df["valid"].astype(bool)].set_index("region_id")
            if len(ok) < 4:
                continue
            dep = ok["beta2"]
            weights = (ok["n2"].astype(float) if config.weighting == "pair_count"
                       else pd.Series(1.0, index=ok.index))
            for name, regs in (("rho_only", {"rho_hat": ok["rho_hat"]}),
                               ("lambda_only", {"lambda_hat": ok["lambda_hat"]}),
                               ("both", {"rho_hat": ok["rho_hat"],
                                         "lambda_hat": ok["lambda_hat"]})):
                try:
                    res = latent.latent_regression(dep, regs, weights)
                except MobilabError:
                    continue
                row = {"outcome": outcome, "model": name,
                       "n_regions": res.nobs, "adj_r2": res.adj_r2}
                for rname, b, s in zip(res.names, res.params, res.se):
                    row[f"coef_{rname}"] = b
                    row[f"se_{rname}"] = s
                rows.append(row)
        return pd.DataFrame(rows)

    return harness.subsample_replicates(records, analysis, k=config.subsample_k,
                                        fraction=config.subsample_fraction,
                                        seed=config.seed)


def run_recovery(config: PipelineConfig):
    return harness.recovery_experiment(
        config.recovery_rhos, config.recovery_lambdas, [config.recovery_n],
        config.recovery_replicates, seed=config.seed)


def run_pipeline(config: PipelineConfig) -> ReportBundle:
    """Execute the requested analyses in dependency order.

    Analysis failures are recorded and independent analyses still run; the
    CLI maps any failure to a nonzero exit code.
    """
    config.validate()
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bundle = ReportBundle(out_dir=out_dir, manifest={})
    log_lines = [f"mobilab {__version__}", f"config_hash {config.config_hash()}"]

    def save(name: str, obj, writer) -> None:
        path = out_dir / name
        writer(obj, path)
        bundle.outputs[name] = path
        log_lines.append(f"wrote {name}")

    if config.input_kind == "panel_csv":
        panel, _ = io.ingest_panel_csv(config.panel_path)
        preds = earnings_flow(panel)
        save("predictions.csv", preds, _write_csv)
        _finalize(bundle, config, log_lines)
        return bundle

    records, panel = build_records(config)
    log_lines.append(f"records {len(records)}")
    save("lineage.csv", records, lambda df, p: io.write_lineage_csv(df, p))
    if panel is not None:
        save("panel.csv", panel, lambda df, p: io.write_panel_csv(df, p))

    requested = [a for a in ANALYSES if a in config.analyses]
    est_df = national_df = latent_df = None

    needs_estimates = {"estimates", "gatsby", "cross_matrix"}
    if set(requested) & needs_estimates:
        try:
            est_df, national_df, flag_df = run_estimates(records, config)
            if "estimates" in requested:
                save("estimates.csv", est_df, _write_csv)
                save("national.csv", national_df, _write_csv)
                if not flag_df.empty:
                    save("estimates_flagged.csv", flag_df, _write_csv)
        except MobilabError as exc:
            bundle.failures["estimates"] = str(exc)
            log_lines.append(f"failed estimates: {exc}")

    if "delta" in requested:
        try:
            delta_df, shares_df = run_delta(records, config)
            save("delta.csv", delta_df, _write_csv)
            save("delta_shares.csv", shares_df, _write_csv)
        except MobilabError as exc:
            bundle.failures["delta"] = str(exc)
            log_lines.append(f"failed delta: {exc}")

    needs_latent = {"latent", "gatsby"}
    if set(requested) & needs_latent:
        try:
            latent_df, regressions = run_latent(records, config)
            if "latent" in requested:
                save("latent.csv", latent_df, _write_csv)
                save("latent_regressions.json", regressions, _write_json)
        except MobilabError as exc:
            bundle.failures["latent"] = str(exc)
            log_lines.append(f"failed latent: {exc}")
            latent_df = None

    if "gatsby" in requested:
        if est_df is None or latent_df is None:
            bundle.failures.setdefault(
                "gatsby", "missing prerequisite estimates/latent outputs")
        else:
            try:
                gatsby_df, ineq_df, greg = run_gatsby(records, est_df, latent_df, config)
                save("gatsby.csv", gatsby_df, _write_csv)
                save("inequality.csv", ineq_df, _write_csv)
                save("gini_regressions.json", greg, _write_json)
            except MobilabError as exc:
                bundle.failures["gatsby"] = str(exc)
                log_lines.append(f"failed gatsby: {exc}")

    if "cef" in requested:
        try:
            cef_df, lin_df = run_cef(records, config)
            save("cef.csv", cef_df, _write_csv)
            save("cef_linearity.csv", lin_df, _write_csv)
        except MobilabError as exc:
            bundle.failures["cef"] = str(exc)
            log_lines.append(f"failed cef: {exc}")

    if "cross_matrix" in requested:
        if est_df is None:
            bundle.failures.setdefault("cross_matrix", "missing estimates")
        else:
            try:
                save("cross_matrix.csv", run_cross_matrix(est_df, config), _write_csv)
            except MobilabError as exc:
                bundle.failures["cross_matrix"] = str(exc)
                log_lines.append(f"failed cross_matrix: {exc}")

    if "placebo" in requested:
        try:
            placebo_df, detail_df = run_placebo(records, config)
            save("placebo.csv", placebo_df, _write_csv)
            save("placebo_detail.csv", detail_df, _write_csv)
        except MobilabError as exc:
            bundle.failures["placebo"] = str(exc)
            log_lines.append(f"failed placebo: {exc}")

    if "subsamples" in requested:
        try:
            save("subsamples.csv", run_subsamples(records, config), _write_csv)
        except MobilabError as exc:
            bundle.failures["subsamples"] = str(exc)
            log_lines.append(f"failed subsamples: {exc}")

    if "recovery" in requested:
        try:
            save("recovery.csv", run_recovery(config), _write_csv)
        except MobilabError as exc:
            bundle.failures["recovery"] = str(exc)
            log_lines.append(f"failed recovery: {exc}")

    _finalize(bundle, config, log_lines)
    return bundle


def _finalize(bundle: ReportBundle, config: PipelineConfig, log_lines: list) -> None:
    (bundle.out_dir / "run.log").write_text("\n".join(log_lines) + "\n")
    manifest = {
        "config": config.canonical(),
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "versions": {"mobilab": __version__, "numpy": np.__version__,
                     "pandas": pd.__version__},
        "outputs": {name: _sha256(path) for name, path in sorted(bundle.outputs.items())},
        "failures": dict(sorted(bundle.failures.items())),
    }
    (bundle.out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    bundle.manifest = manifest
