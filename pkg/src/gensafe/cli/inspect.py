import click
import logging
from typing import Callable, Dict, Iterator, Optional

import numpy as np

from gensafe.abstraction import RomdpModel
from gensafe.models import load_romdp

logger = logging.getLogger(__name__)

Describer = Callable[[RomdpModel, Optional[np.ndarray]], Iterator[str]]
section_describers: Dict[str, Describer] = {}


def register_describer(section):
    def decorator(func):
        section_describers[section] = func
        return func
    return decorator


@register_describer('shapes')
def describe_shapes(model, values):
    yield f"Reduced states:   {model.k_s}"
    yield f"Reduced actions:  {model.n_actions}"
    yield f"C^r:              {model.reduced_cost.shape}"
    yield f"T^r:              {model.transition.shape}"
    yield f"pi^r:             {model.reduced_policy.shape}"
    yield f"Δ:                {model.delta:g}"
    yield f"γ:                {model.discount:g}"
    if model.grid is not None:
        yield f"Action grid:      {model.grid.k_a} cells per dimension over {list(model.grid.low)}..{list(model.grid.high)}"


@register_describer('invariants')
def describe_invariants(model, values):
    for check in model.check_invariants():
        status = "PASS" if check.passed else "FAIL"
        line = f"[{status}] {check.name}"
        if not check.passed and check.detail:
            line += f" -- offending {check.detail}"
        yield line


@register_describer('counts')
def describe_counts(model, values):
    yield f"Samples (Σ n_s,a):       {int(model.pair_counts.sum())}"
    yield f"Epoch samples (Σ n^e):   {int(model.epoch_pair_counts.sum())}"
    yield f"Transition paths:        {int(model.path_counts.sum())}"
    unobserved = model.pair_counts == 0
    yield f"Δ-coverage:              {unobserved.mean():.3f} ({int(unobserved.sum())} of {unobserved.size} pairs unobserved)"


@register_describer('costs')
def describe_costs(model, values, top: int = 5):
    mean_cost = model.reduced_cost.mean(axis=1)
    order = np.argsort(-mean_cost, kind='stable')[:top]
    yield f"Top {len(order)} reduced states by mean C^r:"
    for state in order:
        value = f", V = {values[state]:.4g}" if values is not None else ""
        yield f"  s^r={state}: mean C^r = {mean_cost[state]:.4g}{value}"


@register_describer('tables')
def describe_tables(model, values):
    yield "C^r (rows: reduced states, columns: reduced actions):"
    for state, row in enumerate(model.reduced_cost):
        yield f"  {state:>4}: " + " ".join(f"{c:.4g}" for c in row)
    if values is not None:
        yield "V^r:"
        yield "  " + " ".join(f"{v:.4g}" for v in values)


DEFAULT_SECTIONS = ('shapes', 'invariants', 'counts', 'costs')


def describe_romdp(model: RomdpModel, values: Optional[np.ndarray] = None, sections=DEFAULT_SECTIONS) -> Iterator[str]:
    for section in sections:
        yield section.capitalize()
        yield "=" * len(section)
        yield from section_describers[section](model, values)
        yield ""


@click.command("inspect")
@click.argument('model_path', type=click.Path(exists=True, dir_okay=False))
@click.option('--tables', is_flag=True, help='Also print the full C^r table and the values')
def inspect_cmd(model_path, tables):
    """Print a human-readable report of a saved ROMDP (romdp.json)."""
    model, values = load_romdp(model_path)
    sections = DEFAULT_SECTIONS + (('tables',) if tables else ())
    for line in describe_romdp(model, values, sections):
        click.echo(line)
    failed = [c.name for c in model.check_invariants() if not c.passed]
    return 1 if failed else 0
