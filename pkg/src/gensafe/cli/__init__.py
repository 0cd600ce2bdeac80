import click
import logging
import traceback

from gensafe.cli.inspect import inspect_cmd
from gensafe.cli.plotdata import plotdata_cmd
from gensafe.cli.train import train_cmd


logger = logging.getLogger(__name__)

LOG_LEVELS = ['DEBUG', 'INFO', 'WARNING', 'ERROR']


@click.group()
@click.option('--log-level', default='INFO', type=click.Choice(LOG_LEVELS, case_sensitive=False),
              help='Logging verbosity')
def cli(log_level):
    """GenSafe: ROMDP safety layer for safe reinforcement learning."""
    logging.getLogger().setLevel(log_level.upper())


# Register subcommands
cli.add_command(train_cmd)
cli.add_command(inspect_cmd)
cli.add_command(plotdata_cmd)


def main():
    logging.basicConfig(level=logging.INFO, format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    try:
        result = cli(standalone_mode=False)
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.exceptions.Abort:
        click.echo('Aborted!', err=True)
        return 1
    except Exception as e:
        click.echo(click.style('An unexpected error occurred during execution:', fg='red'), err=True)
        for line in traceback.format_exception(e):
            click.echo('  ' + line, err=True)
        return 1
    return result if isinstance(result, int) else 0
