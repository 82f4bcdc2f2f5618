"""Figure-generation CLI over experiment CSVs and field dumps."""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .fields import GridMismatchError, plot_field_slice
from .metrics import FigureSpec, MissingColumnError, plot_metrics


@click.group()
def main():
    """Render figures from experiment CSVs and npz field dumps."""


@main.command()
@click.argument("csvs", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", type=click.Path(), default=".",
              help="Output directory.")
@click.option("--metrics", default="tr_P,map_rmse,tr_Sigma,pose_err",
              help="Comma-separated metric columns.")
@click.option("--log", "log_scale", default="tr_P",
              help="Comma-separated metrics drawn on a log scale.")
@click.option("--group-by", default="planner,utility,mapping_mode",
              help="Comma-separated grouping columns.")
def metrics(csvs, out_dir, metrics, log_scale, group_by):
    """Mean and 95% CI of each metric over time, one curve per group."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        spec = FigureSpec(
            csv_paths=csvs,
            out_path=str(out / "metrics.png"),
            metrics=tuple(m for m in metrics.split(",") if m),
            log_scale=tuple(m for m in log_scale.split(",") if m),
            group_keys=tuple(k for k in group_by.split(",") if k),
        )
        path = plot_metrics(spec)
    except MissingColumnError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    click.echo(f"wrote {path}")


@main.command("field-slice")
@click.argument("truth", type=click.Path(exists=True))
@click.argument("posterior", type=click.Path(exists=True))
@click.argument("trajectory", type=click.Path(exists=True))
@click.option("--z", type=float, default=1.0, help="Slice height in meters.")
@click.option("--out", "out_dir", type=click.Path(), default=".",
              help="Output directory.")
def field_slice(truth, posterior, trajectory, z, out_dir):
    """Truth / reconstruction / error panels at a z slice."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        path = plot_field_slice(
            truth, posterior, trajectory, z, out / "field_slice.png"
        )
    except GridMismatchError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    click.echo(f"wrote {path}")


if __name__ == "__main__":
    main()
