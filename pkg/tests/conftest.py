import numpy as np
import pytest

from gensafe.abstraction import ActionGrid, RomdpModel
from gensafe.config import ExperimentConfig
from gensafe.data import DataSample

# Worked example with three reduced states and two reduced actions (0-based).
EXAMPLE_STATES = [0, 0, 1, 1, 2]
EXAMPLE_ACTIONS = [0, 0, 0, 1, 1]
EXAMPLE_NEXT_STATES = [0, 1, 1, 2, 0]
EXAMPLE_COSTS = [0.2, 0.4, 0.3, 0.9, 0.1]
EXAMPLE_DELTA = 0.5
EXAMPLE_DISCOUNT = 0.99


@pytest.fixture
def example_model():
    """The worked example ROMDP, with D^e equal to D."""
    return RomdpModel.from_reduced(EXAMPLE_STATES, EXAMPLE_ACTIONS, EXAMPLE_NEXT_STATES, EXAMPLE_COSTS,
                                   EXAMPLE_STATES, EXAMPLE_ACTIONS, k_s=3, n_actions=2,
                                   delta=EXAMPLE_DELTA, discount=EXAMPLE_DISCOUNT)


def _random_model(rng, k_s=6, k_a=3, n_a=2, samples=400, delta=0.5, discount=0.9):
    """ROMDP assembled from random reduced sequences, with a matching action grid."""
    grid = ActionGrid((-1.0,) * n_a, (1.0,) * n_a, k_a)
    states = rng.integers(0, k_s, size=samples)
    actions = rng.integers(0, grid.n_cells, size=samples)
    next_states = rng.integers(0, k_s, size=samples)
    costs = rng.uniform(0.0, 1.0, size=samples) * (rng.random(samples) < 0.3)
    return RomdpModel.from_reduced(states, actions, next_states, costs, states[:100], actions[:100],
                                   k_s=k_s, n_actions=grid.n_cells, delta=delta, discount=discount, grid=grid)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def _make_sample(value=0.0, cost=0.0, n_s=3, n_a=2):
    """A DataSample whose state is filled with `value`, handy for ordering checks."""
    return DataSample(np.full(n_s, float(value)), np.zeros(n_a), np.full(n_s, float(value) + 1.0), 0.0, cost)


@pytest.fixture
def random_model():
    return _random_model


@pytest.fixture
def make_sample():
    return _make_sample


@pytest.fixture
def small_config():
    """Factory for a quick experiment config on a short point-circle task."""
    def factory(algorithm="ppo-lag-gensafe", out_dir="runs", **sections):
        data = {
            "experiment": {"algorithm": algorithm, "seeds": [0], "epochs": 2, "steps_per_epoch": 60,
                           "out_dir": str(out_dir), "checkpoint_every": 1},
            "env": {"name": "point-circle", "params": {"horizon": 20}},
            "romdp": {"k_s": 3, "k_a": 2, "capacity": 500, "tsne_subsample_cap": 60, "min_build_size": 50},
            "tsne": {"perplexity": 5.0, "iterations": 60, "exaggeration_iters": 20, "momentum_switch": 30},
            "mapper": {"hidden": [8], "epochs": 5, "batch_size": 32},
            "safety": {"cost_limit": 5.0},
            "pso": {"particles": 8, "iterations": 5},
            "srl": {"update_epochs": 2, "minibatch_size": 30, "hidden": [8]},
        }
        for section, values in sections.items():
            data.setdefault(section, {}).update(values)
        return ExperimentConfig.model_validate(data)
    return factory
