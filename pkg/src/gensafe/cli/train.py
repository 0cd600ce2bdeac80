import click
import logging

from gensafe.config import ALGORITHMS, ExperimentConfig, load_configs
from gensafe.runtime import run_experiment

logger = logging.getLogger(__name__)


@click.command("train")
@click.option('--config', 'config_paths', multiple=True, type=click.Path(exists=True),
              help='TOML config file or directory of config files (repeatable)')
@click.option('--seed', type=int, default=None, help='Run only this seed')
@click.option('--algo', type=click.Choice(ALGORITHMS), default=None, help='Override the algorithm')
@click.option('--out-dir', type=click.Path(file_okay=False), default=None, help='Override the output directory')
@click.option('--epochs', type=int, default=None, help='Override the number of epochs')
@click.option('--workers', type=int, default=None, help='Run seeds in this many worker processes')
def train_cmd(config_paths, seed, algo, out_dir, epochs, workers):
    """Train PPO / PPO-Lagrangian, optionally with the GenSafe safety layer.

    Without --config the built-in defaults are used (hazard-goal, ppo-lag-gensafe).

    Example config:

    [experiment]
    algorithm = "ppo-lag-gensafe"
    seeds = [0, 1, 2, 3, 4]

    [env]
    name = "hazard-goal"
    """
    configs = load_configs(config_paths) if config_paths else [(None, ExperimentConfig())]
    if not configs:
        click.echo("Error: No config files were found")
        return 1

    for path, config in configs:
        config = config.with_overrides(seed=seed, algorithm=algo, out_dir=out_dir, epochs=epochs,
                                       workers=workers)
        source = path or "defaults"
        click.echo(f"Training {config.run_id} from {source} with seeds {config.experiment.seeds}")
        summary = run_experiment(config)
        for line in summary.lines():
            click.echo(line)
    return 0
