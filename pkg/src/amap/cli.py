"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 trial-failure threshold
exceeded.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .harness import (
    ParseError,
    SchemaMismatchError,
    TrialFailureError,
    ValidationError,
    parse_config,
    run_experiment,
    save_field_dump,
    summarize as summarize_csvs,
    write_summary,
)

EXIT_CONFIG_ERROR = 2
EXIT_TRIAL_FAILURES = 3


@click.group()
def main():
    """Uncertainty-aware active mapping experiments."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--trials", type=int, default=None, help="Override trial count.")
@click.option("--seed", type=int, default=None, help="Override base seed.")
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="Override output directory.")
def run(config_path, trials, seed, out_dir):
    """Run a seeded multi-trial experiment from a config file."""
    overrides = {}
    if trials is not None:
        overrides["experiment.trials"] = trials
    if seed is not None:
        overrides["experiment.base_seed"] = seed
    if out_dir is not None:
        overrides["experiment.out_dir"] = out_dir
    try:
        cfg = parse_config(config_path, overrides)
    except (ParseError, ValidationError, FileNotFoundError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)
    try:
        result = run_experiment(cfg)
    except TrialFailureError as exc:
        click.echo(f"error: {exc}", err=True)
        if exc.result is not None:
            click.echo(f"partial results: {exc.result.csv_path}", err=True)
        sys.exit(EXIT_TRIAL_FAILURES)
    click.echo(f"wrote {result.csv_path} ({result.n_trials} trials, "
               f"{result.n_failed} failed)")
    click.echo(f"manifest: {result.manifest_path}")


@main.command()
@click.argument("csvs", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path(), default="summary.csv",
              help="Summary output file.")
@click.option("--bin-width", type=float, default=1.0,
              help="Time bin width in seconds.")
def summarize(csvs, out_path, bin_width):
    """Aggregate experiment CSVs: mean and 95% CI per time bin."""
    try:
        rows = summarize_csvs(csvs, bin_width=bin_width)
    except (SchemaMismatchError, ValueError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)
    text = write_summary(rows)
    click.echo(text, nl=False)
    Path(out_path).write_text(text)
    click.echo(f"wrote {out_path}", err=True)


@main.command()
@click.option("--seed", type=int, required=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="World and kernel come from this config when given.")
def grf(seed, out_path, config_path):
    """Dump a ground-truth Gaussian random field to an npz file."""
    from .harness import ENV_STREAM, build_config, _read_pairs
    from .sim_env import generate_grf

    try:
        values = _read_pairs(config_path) if config_path else {}
        cfg = build_config(values)
    except (ParseError, ValidationError, FileNotFoundError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)
    fld = generate_grf(cfg.world.make_grid(), cfg.spec, seed=[seed, ENV_STREAM])
    save_field_dump(out_path, fld.grid, fld.values)
    click.echo(f"wrote {out_path}")


if __name__ == "__main__":
    main()
