import click
import logging

from gensafe.metrics import aggregate_curves, write_curves

logger = logging.getLogger(__name__)


@click.command("plotdata")
@click.argument('metrics_paths', nargs=-1, type=click.Path(exists=True, dir_okay=False))
@click.option('--out', 'out_path', required=True, type=click.Path(dir_okay=False), help='Curve file to write')
def plotdata_cmd(metrics_paths, out_path):
    """Aggregate per-seed metrics CSVs into mean/std curves per epoch.

    METRICS_PATHS: One metrics.csv per seed.
    """
    if not metrics_paths:
        click.echo("Error: At least one metrics file must be provided")
        return 1
    curves = aggregate_curves(metrics_paths)
    write_curves(out_path, curves)
    click.echo(f"Wrote {len(curves['epoch'])} epochs aggregated over {len(metrics_paths)} seed(s) to {out_path}")
    return 0
