"""Experiment configuration: TOML files validated into pydantic models.

Every field has a default, so a config file only needs to name what it
overrides. Unknown keys are rejected.

Example config:

    [experiment]
    algorithm = "ppo-lag-gensafe"
    seeds = [0, 1, 2]
    epochs = 30

    [env]
    name = "hazard-goal"
    params = { hazard_count = 8, hazard_radius = 0.3 }

    [romdp]
    k_s = 50
"""
import logging
import math

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, model_validator

logger = logging.getLogger(__name__)

Algorithm = Literal["ppo", "ppo-lag", "ppo-lag-gensafe", "ppo-gensafe"]
ALGORITHMS: Tuple[str, ...] = ("ppo", "ppo-lag", "ppo-lag-gensafe", "ppo-gensafe")


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ExperimentSection(Section):
    algorithm: Algorithm = "ppo-lag-gensafe"
    seeds: List[int] = Field(default_factory=lambda: [0])
    epochs: PositiveInt = 30
    steps_per_epoch: PositiveInt = 20000
    out_dir: str = "runs"
    checkpoint_every: PositiveInt = 10
    workers: PositiveInt = 1

    @property
    def uses_safety_layer(self) -> bool:
        return self.algorithm.endswith("gensafe")

    @property
    def uses_lagrangian(self) -> bool:
        return self.algorithm.startswith("ppo-lag")


class EnvSection(Section):
    name: str = "hazard-goal"
    params: Dict[str, Any] = Field(default_factory=dict)


class RomdpSection(Section):
    k_s: PositiveInt = 50
    k_a: PositiveInt = 3
    delta: float = Field(0.5, ge=0.0)
    capacity: PositiveInt = 100_000
    tsne_subsample_cap: PositiveInt = 5000
    min_build_size: PositiveInt = 2000
    # Rebuild every epoch during the warmup, then every `rebuild_interval` epochs.
    # An interval of 0 means the model is never rebuilt.
    rebuild_warmup: int = Field(10, ge=0)
    rebuild_interval: int = Field(2, ge=0)
    gmm_tol: PositiveFloat = 1e-4
    gmm_max_iter: PositiveInt = 200
    gmm_reg_covar: PositiveFloat = 1e-6
    export_embeddings: bool = False

    def rebuild_due(self, epoch: int) -> bool:
        """Whether the ROMDP is rebuilt at the end of 1-based `epoch`."""
        if self.rebuild_interval == 0:
            return False
        if epoch <= self.rebuild_warmup:
            return True
        return (epoch - self.rebuild_warmup) % self.rebuild_interval == 0


class TsneSection(Section):
    perplexity: PositiveFloat = 30.0
    iterations: PositiveInt = 500
    learning_rate: PositiveFloat = 200.0
    exaggeration: PositiveFloat = 12.0
    exaggeration_iters: int = Field(100, ge=0)
    momentum: float = Field(0.5, ge=0.0, lt=1.0)
    final_momentum: float = Field(0.8, ge=0.0, lt=1.0)
    momentum_switch: int = Field(250, ge=0)
    init_std: PositiveFloat = 1e-4


class MapperSection(Section):
    hidden: Tuple[PositiveInt, ...] = (64, 64)
    epochs: PositiveInt = 200
    lr: PositiveFloat = 1e-3
    batch_size: PositiveInt = 256


class SafetySection(Section):
    # d: episode cost budget, shared by the Lagrangian update and the future-cost constraint
    cost_limit: PositiveFloat = 25.0
    # d_s: defaults to cost_limit / cost_horizon
    immediate_limit: Optional[PositiveFloat] = None
    # Defaults to the environment's episode horizon
    cost_horizon: Optional[PositiveInt] = None
    discount: float = Field(0.99, gt=0.0, lt=1.0)
    force_inactive: bool = False
    log_corrections: bool = False

    def resolve_immediate_limit(self, episode_horizon: int) -> float:
        if self.immediate_limit is not None:
            return self.immediate_limit
        return self.cost_limit / (self.cost_horizon or episode_horizon)


class ActivationSection(Section):
    signal: Literal["vc_loss", "episode_cost", "epochs"] = "vc_loss"
    deactivate_threshold: float = Field(0.05, ge=0.0)
    reactivate_threshold: float = Field(0.15, ge=0.0)
    deactivate_after_epochs: PositiveInt = 10

    @model_validator(mode="after")
    def check_hysteresis(self) -> 'ActivationSection':
        if self.reactivate_threshold <= self.deactivate_threshold:
            raise ValueError(f"Reactivate threshold {self.reactivate_threshold} must exceed "
                             f"deactivate threshold {self.deactivate_threshold}")
        return self


class PlannerSection(Section):
    tolerance: PositiveFloat = 1e-4
    max_iters: PositiveInt = 10_000


class PsoSection(Section):
    particles: PositiveInt = 40
    iterations: PositiveInt = 60
    inertia: float = Field(0.7, ge=0.0)
    cognitive: float = Field(1.5, ge=0.0)
    social: float = Field(1.5, ge=0.0)
    penalty: PositiveFloat = 1e3


class SrlSection(Section):
    gamma: float = Field(0.99, gt=0.0, le=1.0)
    gae_lambda: float = Field(0.95, ge=0.0, le=1.0)
    clip: PositiveFloat = 0.2
    policy_lr: PositiveFloat = 3e-4
    value_lr: PositiveFloat = 1e-3
    lagrange_lr: PositiveFloat = 0.05
    lagrange_init: float = Field(0.0, ge=0.0)
    update_epochs: PositiveInt = 40
    minibatch_size: PositiveInt = 2000
    hidden: Tuple[PositiveInt, ...] = (64, 64)
    init_log_std: float = -0.5


class ExperimentConfig(Section):
    experiment: ExperimentSection = Field(default_factory=ExperimentSection)
    env: EnvSection = Field(default_factory=EnvSection)
    romdp: RomdpSection = Field(default_factory=RomdpSection)
    tsne: TsneSection = Field(default_factory=TsneSection)
    mapper: MapperSection = Field(default_factory=MapperSection)
    safety: SafetySection = Field(default_factory=SafetySection)
    activation: ActivationSection = Field(default_factory=ActivationSection)
    planner: PlannerSection = Field(default_factory=PlannerSection)
    pso: PsoSection = Field(default_factory=PsoSection)
    srl: SrlSection = Field(default_factory=SrlSection)

    @model_validator(mode="after")
    def warn_immediate_limit(self) -> 'ExperimentConfig':
        limit = self.safety.immediate_limit
        if limit is None and self.safety.cost_horizon is not None:
            limit = self.safety.resolve_immediate_limit(self.safety.cost_horizon)
        if limit is not None and limit >= self.romdp.delta:
            logger.warning(f"Immediate cost limit {limit:g} is not below the default cost Δ={self.romdp.delta:g}; "
                           f"unobserved actions will be considered safe")
        return self

    @model_validator(mode="after")
    def check_embedding_size(self) -> 'ExperimentConfig':
        # The smallest t-SNE input is the smaller of the subsample cap and the minimum build size
        smallest = min(self.romdp.tsne_subsample_cap, self.romdp.min_build_size)
        needed = math.ceil(4 * self.tsne.perplexity)
        if smallest < needed:
            raise ValueError(f"t-SNE with perplexity {self.tsne.perplexity:g} needs at least {needed} points, but "
                             f"tsne_subsample_cap={self.romdp.tsne_subsample_cap} and "
                             f"min_build_size={self.romdp.min_build_size} allow {smallest}")
        if smallest < self.romdp.k_s:
            raise ValueError(f"k_s={self.romdp.k_s} exceeds the {smallest} points a build may embed")
        return self

    @property
    def run_id(self) -> str:
        return f"{self.env.name}-{self.experiment.algorithm}"

    def with_overrides(self, seed: Optional[int] = None, algorithm: Optional[str] = None,
                       out_dir: Optional[str] = None, epochs: Optional[int] = None,
                       workers: Optional[int] = None) -> 'ExperimentConfig':
        """Apply CLI overrides and re-validate."""
        updates: Dict[str, Any] = {}
        if seed is not None:
            updates["seeds"] = [seed]
        if algorithm is not None:
            updates["algorithm"] = algorithm
        if out_dir is not None:
            updates["out_dir"] = str(out_dir)
        if epochs is not None:
            updates["epochs"] = epochs
        if workers is not None:
            updates["workers"] = workers
        if not updates:
            return self
        data = self.model_dump()
        data["experiment"].update(updates)
        return ExperimentConfig.model_validate(data)


def parse_config(text: str) -> ExperimentConfig:
    return ExperimentConfig.model_validate(tomllib.loads(text))


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """Load and validate a single TOML config file.

    Raises:
        FileNotFoundError: If the file does not exist
        pydantic.ValidationError: If a value is invalid or a key is unknown
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Config file not found: {path}")
    with open(path, "rb") as handle:
        data = tomllib.load(handle)
    logger.debug(f"Loaded config {path}")
    return ExperimentConfig.model_validate(data)


def load_configs(config_paths: Sequence[Union[str, Path]]) -> List[Tuple[Path, ExperimentConfig]]:
    """Load config files, expanding directories to the *.toml files they contain.

    Args:
        config_paths: Config files or directories containing config files

    Returns:
        (path, config) pairs in the order they were found
    """
    configs = []
    for config_path in config_paths:
        path = Path(config_path)
        if path.is_dir():
            for file_path in sorted(path.glob("*.toml")):
                configs.append((file_path, load_config(file_path)))
        else:
            configs.append((path, load_config(path)))
    return configs
