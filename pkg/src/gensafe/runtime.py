"""Experiment orchestration: the safe RL training loop with the safety layer.

Each epoch runs the same phases in order:

    collect     roll out k_t steps, correcting actions while the layer is active
    build       rebuild the ROMDP and its value function (when due)
    update      PPO / PPO-Lagrangian update
    activation  feed the monitored signal to the activation machine
    clear       empty the epoch dataset
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np

from gensafe.abstraction import build_romdp
from gensafe.activation import ActivationMachine
from gensafe.config import ExperimentConfig
from gensafe.data import DataSample, Dataset
from gensafe.dimred import export_embedding
from gensafe.envs import PointMassEnv, make_env
from gensafe.errors import StageError
from gensafe.metrics import CorrectionRecord, CorrectionsWriter, EpochMetrics, MetricsWriter
from gensafe.models import save_romdp
from gensafe.planner import value_iteration
from gensafe.safety import SafetyLayer, end_epoch, manage_dataset
from gensafe.srl import ActorCritic, LagrangeState, RolloutBuffer, update_policy_lagrangian, update_policy_ppo
from gensafe.tinynet import save_checkpoint

logger = logging.getLogger(__name__)

SEED_STREAMS = ("env", "init", "sample", "build", "pso")


def _phase(name: str, func: Callable, *args, **kwargs):
    try:
        return func(*args, **kwargs)
    except StageError:
        raise
    except Exception as e:
        raise StageError(name, e) from e


@dataclass
class EpochRollout:
    buffer: RolloutBuffer
    episode_rewards: List[float]
    episode_costs: List[float]
    violations: int
    corrections: int
    correction_distance: float

    @property
    def mean_episode_reward(self) -> float:
        return float(np.mean(self.episode_rewards)) if self.episode_rewards else 0.0

    @property
    def mean_episode_cost(self) -> float:
        return float(np.mean(self.episode_costs)) if self.episode_costs else 0.0

    @property
    def mean_correction_distance(self) -> float:
        return self.correction_distance / self.corrections if self.corrections else 0.0


@dataclass
class SeedResult:
    seed: int
    output_dir: Path
    metrics: List[EpochMetrics] = field(default_factory=list)


class SeedRun:
    """State of one training run: environment, learner, datasets and the safety layer."""

    def __init__(self, config: ExperimentConfig, seed: int, output_dir: Path):
        self.config = config
        self.seed = seed
        self.output_dir = output_dir
        streams = np.random.SeedSequence(seed).spawn(len(SEED_STREAMS))
        self.rngs = {name: np.random.default_rng(s) for name, s in zip(SEED_STREAMS, streams)}

        experiment = config.experiment
        self.env: PointMassEnv = make_env(config.env.name, **config.env.params)
        self.agent = ActorCritic(self.env.n_s, self.env.n_a, config.srl, rng=self.rngs["init"],
                                 cost_head=experiment.algorithm != "ppo")
        self.lagrange: Optional[LagrangeState] = None
        if experiment.uses_lagrangian:
            self.lagrange = LagrangeState(config.srl.lagrange_init, config.srl.lagrange_lr,
                                          config.safety.cost_limit)
        self.dataset = Dataset(capacity=config.romdp.capacity)
        self.epoch_dataset = Dataset()

        self.layer: Optional[SafetyLayer] = None
        self.activation: Optional[ActivationMachine] = None
        self.corrections_log: Optional[CorrectionsWriter] = None
        if experiment.uses_safety_layer:
            immediate_limit = config.safety.resolve_immediate_limit(self.env.horizon)
            if immediate_limit >= config.romdp.delta:
                logger.warning(f"Immediate cost limit {immediate_limit:g} is not below Δ={config.romdp.delta:g}")
            self.layer = SafetyLayer(immediate_limit, config.safety.cost_limit, config.pso, rng=self.rngs["pso"])
            self.activation = ActivationMachine(config.activation, force_inactive=config.safety.force_inactive)
            if config.safety.log_corrections:
                self.corrections_log = CorrectionsWriter(output_dir / "corrections.csv")
        self.timestep = 0

    @property
    def correcting(self) -> bool:
        return self.layer is not None and self.layer.ready and self.activation.active

    def _reset_env(self) -> np.ndarray:
        observation, _ = self.env.reset(seed=int(self.rngs["env"].integers(2 ** 31)))
        return observation

    def collect(self) -> EpochRollout:
        """Roll out one epoch of steps_per_epoch environment steps.

        The buffer keeps the sampled proposal and its log-probability; reward and
        cost come from the corrected action the environment actually executed.
        """
        buffer = RolloutBuffer()
        rollout = EpochRollout(buffer, [], [], 0, 0, 0.0)
        correcting = self.correcting
        low, high = self.env.action_bounds
        observation = self._reset_env()
        episode_reward = episode_cost = 0.0
        for _ in range(self.config.experiment.steps_per_epoch):
            action, log_prob = self.agent.policy.sample(observation, self.rngs["sample"])
            executed = action
            if correcting:
                executed, report = self.layer.correct(observation, action)
                if not report.short_circuit:
                    rollout.corrections += 1
                    rollout.correction_distance += report.distance
                if self.corrections_log is not None:
                    self.corrections_log.write(CorrectionRecord(self.timestep, report.feasible, report.distance,
                                                                report.immediate, report.future))
            next_observation, reward, cost, terminated, truncated, _ = self.env.step(executed)
            buffer.add(observation, action, log_prob, reward, cost, next_observation, terminated, truncated)
            manage_dataset(self.dataset, self.epoch_dataset,
                           DataSample(observation, np.clip(executed, low, high), next_observation, reward, cost))
            self.timestep += 1
            episode_reward += reward
            episode_cost += cost
            rollout.violations += int(cost > 0)
            if terminated or truncated:
                rollout.episode_rewards.append(episode_reward)
                rollout.episode_costs.append(episode_cost)
                episode_reward = episode_cost = 0.0
                observation = self._reset_env()
            else:
                observation = next_observation
        if not buffer.ends[-1]:
            buffer.mark_end()
            if not rollout.episode_rewards:
                rollout.episode_rewards.append(episode_reward)
                rollout.episode_costs.append(episode_cost)
        return rollout

    def build(self, epoch: int) -> None:
        result = build_romdp(self.dataset, self.epoch_dataset, self.config, self.env.action_bounds,
                             seed=self.rngs["build"])
        planner = self.config.planner
        values = _phase("value-iteration", value_iteration, result.model, planner.tolerance, planner.max_iters)
        self.layer.update_model(result.model, values)
        save_romdp(self.output_dir / "romdp.json", result.model, values.values)
        if self.config.romdp.export_embeddings:
            export_embedding(self.output_dir / f"embedding-epoch-{epoch}.csv", result.embedding,
                             self.dataset.costs()[result.subsample])
        logger.debug(f"ROMDP rebuilt at epoch {epoch}: value iteration took {values.iterations_run} sweeps")

    def update(self, rollout: EpochRollout):
        srl = self.config.srl
        rollout.buffer.compute_advantages(self.agent.value_r, self.agent.value_c, srl.gamma, srl.gae_lambda)
        if self.lagrange is not None:
            return update_policy_lagrangian(rollout.buffer, self.agent, self.lagrange, rollout.mean_episode_cost,
                                            srl, rng=self.rngs["sample"])
        return update_policy_ppo(rollout.buffer, self.agent, srl, rng=self.rngs["sample"])

    def run_epoch(self, epoch: int) -> EpochMetrics:
        logger.info(f"Epoch {epoch}: collect")
        active = self.correcting
        rollout = _phase("collect", self.collect)

        if self.layer is not None:
            if not self.config.romdp.rebuild_due(epoch):
                logger.info(f"Epoch {epoch}: build skipped (not due)")
            elif len(self.dataset) < self.config.romdp.min_build_size:
                logger.info(f"Epoch {epoch}: build skipped ({len(self.dataset)} samples)")
            else:
                logger.info(f"Epoch {epoch}: build")
                self.build(epoch)

        logger.info(f"Epoch {epoch}: update")
        report = _phase("update", self.update, rollout)

        if self.activation is not None:
            logger.info(f"Epoch {epoch}: activation")
            _phase("activation", self.activation.observe, vc_loss=report.value_c_loss,
                   episode_cost=rollout.mean_episode_cost, epoch=epoch)

        logger.info(f"Epoch {epoch}: clear")
        end_epoch(self.epoch_dataset)

        return EpochMetrics(
            epoch=epoch,
            mean_episode_reward=rollout.mean_episode_reward,
            mean_episode_cost=rollout.mean_episode_cost,
            violations=rollout.violations,
            lagrange_multiplier=float(self.lagrange.multiplier) if self.lagrange is not None else 0.0,
            vc_loss=float(report.value_c_loss),
            gensafe_active=bool(active),
            corrections=rollout.corrections,
            mean_correction_distance=rollout.mean_correction_distance,
        )

    def checkpoint(self, name: str) -> Path:
        return save_checkpoint(self.output_dir / "checkpoints" / f"{name}.npz", self.agent.networks())

    def close(self) -> None:
        if self.corrections_log is not None:
            self.corrections_log.close()


def seed_output_dir(config: ExperimentConfig, seed: int) -> Path:
    return Path(config.experiment.out_dir) / config.run_id / f"seed-{seed}"


def run_seed(config: ExperimentConfig, seed: int) -> SeedResult:
    """Train one seed and write its metrics, checkpoints and ROMDP artifacts."""
    output_dir = seed_output_dir(config, seed)
    output_dir.mkdir(parents=True, exist_ok=True)
    logger.info(f"Starting {config.run_id} with seed {seed} in {output_dir}")
    result = SeedResult(seed, output_dir)
    run = SeedRun(config, seed, output_dir)
    try:
        with MetricsWriter(output_dir / "metrics.csv") as writer:
            for epoch in range(1, config.experiment.epochs + 1):
                row = run.run_epoch(epoch)
                writer.write(row)
                result.metrics.append(row)
                logger.info(f"Epoch {epoch}: reward {row.mean_episode_reward:.3f}, cost {row.mean_episode_cost:.3f}, "
                            f"violations {row.violations}, corrections {row.corrections}")
                if epoch % config.experiment.checkpoint_every == 0:
                    run.checkpoint(f"epoch-{epoch}")
        run.checkpoint("final")
    finally:
        run.close()
    return result


@dataclass
class RunSummary:
    results: List[SeedResult]

    def _final(self, attribute: str) -> np.ndarray:
        return np.array([getattr(r.metrics[-1], attribute) for r in self.results if r.metrics])

    def lines(self) -> List[str]:
        lines = []
        for label, attribute in (("reward", "mean_episode_reward"), ("cost", "mean_episode_cost"),
                                 ("violations", "violations")):
            values = self._final(attribute)
            if len(values):
                lines.append(f"Final {label}: {values.mean():.3f} ± {values.std():.3f} over {len(values)} seed(s)")
        return lines


def run_experiment(config: ExperimentConfig) -> RunSummary:
    """Run every configured seed, in worker processes when `workers` > 1."""
    seeds = config.experiment.seeds
    workers = min(config.experiment.workers, len(seeds))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_seed, [config] * len(seeds), seeds))
    else:
        results = [run_seed(config, seed) for seed in seeds]
    summary = RunSummary(results)
    for line in summary.lines():
        logger.info(line)
    return summary
