"""Command-line front end.

Subcommands map one to one onto the pipeline analyses, plus `simulate` for
raw data emission, `ingest` for validation, and `report` for table presets
and figures. Exit codes: 0 success, 2 configuration error, 3 data validation
error, 4 analysis error.
"""

import dataclasses
import logging
import sys

import click

from . import __version__, io, pipeline, report, synthkit
from .errors import AnalysisError, MobilabError

logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")


def _fail(exc: MobilabError) -> None:
    click.echo(f"error[{exc.exit_code}] {exc.__class__.__name__}: {exc}", err=True)
    sys.exit(exc.exit_code)


def _build_config(config_path, **overrides) -> pipeline.PipelineConfig:
    if config_path:
        cfg = pipeline.PipelineConfig.from_file(config_path)
    else:
        cfg = pipeline.PipelineConfig()
    clean = {k: v for k, v in overrides.items() if v is not None}
    cfg = dataclasses.replace(cfg, **clean)
    cfg.validate()
    return cfg


def common_options(fn):
    fn = click.option("--config", "config_path", type=click.Path(), default=None,
                      help="YAML/JSON pipeline config.")(fn)
    fn = click.option("--seed", type=int, default=None, help="Master seed.")(fn)
    fn = click.option("--out", "out_dir", type=click.Path(), default=None,
                      help="Output directory.")(fn)
    return fn


def analysis_options(fn):
    fn = common_options(fn)
    fn = click.option("--input", "lineage_path", type=click.Path(), default=None,
                      help="Lineage CSV input (otherwise synthetic).")(fn)
    fn = click.option("--preset", type=click.Choice(["sweden", "demo"]),
                      default=None, help="Synthetic input preset.")(fn)
    fn = click.option("--size-scale", type=float, default=None,
                      help="Scale factor on preset region sizes.")(fn)
    fn = click.option("--weighted/--unweighted", "weighted", default=None,
                      help="Cross-region weighting by pair counts.")(fn)
    fn = click.option("--balanced/--unbalanced", "balanced", default=None,
                      help="Require complete three-generation triplets.")(fn)
    fn = click.option("--min-pairs", type=int, default=None,
                      help="Minimum pairs per region for cross-region work.")(fn)
    fn = click.option("--gender", type=click.Choice(["all", "sons", "daughters"]),
                      default=None)(fn)
    return fn


def _run(analyses, config_path, lineage_path, preset, size_scale, weighted,
         balanced, min_pairs, gender, seed, out_dir) -> None:
    overrides = {
        "seed": seed, "out_dir": out_dir, "lineage_path": lineage_path,
        "preset": preset, "size_scale": size_scale, "balanced": balanced,
        "min_pairs": min_pairs, "gender": gender,
        "analyses": tuple(analyses),
    }
    if lineage_path:
        overrides["input_kind"] = "lineage_csv"
    if weighted is not None:
        overrides["weighting"] = "pair_count" if weighted else "unweighted"
    try:
        cfg = _build_config(config_path, **overrides)
        bundle = pipeline.run_pipeline(cfg)
    except MobilabError as exc:
        _fail(exc)
    for name, path in bundle.outputs.items():
        click.echo(f"wrote {path}")
    if bundle.failures:
        for name, msg in bundle.failures.items():
            click.echo(f"failed {name}: {msg}", err=True)
        sys.exit(AnalysisError.exit_code)


@click.group()
@click.version_option(version=__version__, prog_name="mobilab")
def main() -> None:
    """Regional inter- and multigenerational mobility toolkit."""


@main.command()
@common_options
@click.option("--preset", type=click.Choice(["sweden", "demo"]), default="demo")
@click.option("--size-scale", type=float, default=1.0)
@click.option("--mode", "outcome_mode",
              type=click.Choice(list(synthkit.OUTCOME_MODES)), default="continuous")
def simulate(config_path, seed, out_dir, preset, size_scale, outcome_mode) -> None:
    """Generate a synthetic population and write the lineage CSV."""
    try:
        cfg = _build_config(config_path, seed=seed, out_dir=out_dir, preset=preset,
                            size_scale=size_scale, outcome_mode=outcome_mode,
                            analyses=(), input_kind="synthetic")
        bundle = pipeline.run_pipeline(cfg)
    except MobilabError as exc:
        _fail(exc)
    for path in bundle.outputs.values():
        click.echo(f"wrote {path}")


@main.command()
@click.argument("path", type=click.Path(exists=True))
@click.option("--panel", "is_panel", is_flag=True, help="Validate a panel CSV.")
@click.option("--categorical", is_flag=True,
              help="Require schooling values from the 7-code set.")
@click.option("--skip-errors", is_flag=True, help="Drop invalid rows instead of failing.")
def ingest(path, is_panel, categorical, skip_errors) -> None:
    """Validate a lineage or panel CSV and print a per-column report."""
    mode = "skip" if skip_errors else "fail"
    try:
        if is_panel:
            _, rep = io.ingest_panel_csv(path, on_error=mode)
        else:
            _, rep = io.ingest_lineage_csv(path, categorical=categorical, on_error=mode)
    except MobilabError as exc:
        _fail(exc)
    click.echo(rep.summary())


def _analysis_command(name, analyses, help_text):
    @main.command(name=name, help=help_text)
    @analysis_options
    def cmd(config_path, lineage_path, preset, size_scale, weighted, balanced,
            min_pairs, gender, seed, out_dir):
        _run(analyses, config_path, lineage_path, preset, size_scale, weighted,
             balanced, min_pairs, gender, seed, out_dir)

    return cmd


_analysis_command("estimate", ("estimates",),
                  "Region-level mobility estimates (plus the national pool).")
_analysis_command("delta", ("delta",),
                  "Excess-persistence tests with rejection shares.")
_analysis_command("latent", ("latent",),
                  "Latent parameter recovery and cross-region regressions.")
_analysis_command("gatsby", ("estimates", "latent", "gatsby"),
                  "Inequality measures and inequality-mobility correlations.")
_analysis_command("placebo", ("placebo",),
                  "Placebo reshuffling dispersion diagnostics.")
_analysis_command("subsample", ("subsamples",),
                  "Average key regressions over random child subsamples.")
_analysis_command("recover", ("recovery",),
                  "Monte Carlo recovery grid over the parameter space.")


@main.command(name="report")
@click.option("--bundle", "bundle_dir", type=click.Path(exists=True), required=True,
              help="Directory produced by a pipeline run.")
@click.option("--preset", "presets", multiple=True,
              type=click.Choice(list(report.PRESETS)),
              help="Presets to emit (default: all whose inputs exist).")
@click.option("--out", "out_dir", type=click.Path(), default=None)
@click.option("--figures/--no-figures", default=True,
              help="Also render PNG figures for the figure presets.")
def report_cmd(bundle_dir, presets, out_dir, figures) -> None:
    """Emit table presets (and figures) from a report bundle."""
    chosen = list(presets) if presets else list(report.PRESETS)
    explicit = bool(presets)
    wrote = []
    try:
        for preset in chosen:
            try:
                wrote.append(report.emit_table_preset(bundle_dir, preset, out_dir))
            except MobilabError:
                if explicit:
                    raise
        if figures:
            fig_presets = [p for p in chosen if p in report.FIGURE_RENDERERS]
            for preset in fig_presets:
                try:
                    wrote.extend(report.render_figures(bundle_dir, [preset], out_dir))
                except MobilabError:
                    if explicit:
                        raise
    except MobilabError as exc:
        _fail(exc)
    if not wrote:
        _fail(AnalysisError("no presets could be emitted from this bundle"))
    for path in wrote:
        click.echo(f"wrote {path}")


if __name__ == "__main__":
    main()
