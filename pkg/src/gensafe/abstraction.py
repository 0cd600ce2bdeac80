"""Construction of the reduced order MDP (ROMDP).

State abstraction composes the normalizer, the mapping network and a GMM
classifier; action abstraction is a uniform grid. Costs, transitions and the
reduced policy are count-based tables over the resulting indices.

Indices are 0-based: reduced states are 0..k_s-1 and reduced actions are
0..k_a**n_a-1 with the first action dimension varying fastest.
"""
import logging
import warnings
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, List, NamedTuple, Optional, Tuple

import numpy as np
from scipy import linalg
from scipy.special import logsumexp
from sklearn.exceptions import ConvergenceWarning
from sklearn.mixture import GaussianMixture

from gensafe.data import Dataset
from gensafe.dimred import Embedding, MapperNet, Normalizer, fit_normalizer, subsample_indices, train_mapper, tsne
from gensafe.errors import InsufficientDataError, ShapeMismatchError, StageError, require_finite
from gensafe.tinynet import as_rng

if TYPE_CHECKING:
    from gensafe.config import ExperimentConfig

logger = logging.getLogger(__name__)

WEIGHT_FLOOR = 1e-8


def precision_cholesky(covariances: np.ndarray) -> np.ndarray:
    """Upper-triangular factors U with U @ U.T equal to each precision matrix."""
    factors = np.empty_like(covariances)
    eye = np.eye(covariances.shape[-1])
    for k, covariance in enumerate(covariances):
        lower = linalg.cholesky(covariance, lower=True)
        factors[k] = linalg.solve_triangular(lower, eye, lower=True).T
    return factors


@dataclass
class GmmClassifier:
    """Gaussian mixture over the embedded plane used to discretize it into k_s regions."""
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    log_likelihood: List[float] = field(default_factory=list)
    reseeded: List[int] = field(default_factory=list)
    # Index in log_likelihood where EM restarted after re-seeding
    restart_at: Optional[int] = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.asarray(self.means, dtype=float)
        self.covariances = np.asarray(self.covariances, dtype=float)
        self._precision_chol = precision_cholesky(self.covariances)

    @property
    def k_s(self) -> int:
        return len(self.weights)

    def log_joint(self, points) -> np.ndarray:
        """log w_k + log N(x | mu_k, Sigma_k) for every point and component."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        dim = points.shape[1]
        projected = (np.einsum("nd,kde->nke", points, self._precision_chol)
                     - np.einsum("kd,kde->ke", self.means, self._precision_chol)[None])
        log_det = np.sum(np.log(np.diagonal(self._precision_chol, axis1=1, axis2=2)), axis=1)
        log_gauss = -0.5 * (dim * np.log(2 * np.pi) + np.sum(projected ** 2, axis=2)) + log_det
        return log_gauss + np.log(self.weights)

    def classify(self, points) -> np.ndarray:
        """MAP component index for each point."""
        return np.argmax(self.log_joint(points), axis=1)

    def score(self, points) -> float:
        """Mean log-likelihood of the points under the mixture."""
        return float(np.mean(logsumexp(self.log_joint(points), axis=1)))


def _fit_gaussian_mixture(points: np.ndarray, k_s: int, seed: Optional[int], tol: float,
                          max_iter: int, reg_covar: float,
                          gmm: Optional[GaussianMixture] = None) -> Tuple[GaussianMixture, List[float]]:
    if gmm is None:
        gmm = GaussianMixture(n_components=k_s, covariance_type="full", reg_covar=reg_covar,
                              init_params="k-means++", max_iter=1, tol=0.0, warm_start=True,
                              random_state=seed)
    history: List[float] = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        for _ in range(max_iter):
            gmm.fit(points)
            history.append(float(gmm.lower_bound_))
            if len(history) > 1 and abs(history[-1] - history[-2]) < tol:
                break
    return gmm, history


def _empty_components(gmm: GaussianMixture, points: np.ndarray) -> np.ndarray:
    counts = np.bincount(gmm.predict(points), minlength=gmm.n_components)
    return np.flatnonzero(counts == 0)


def _reseed(gmm: GaussianMixture, points: np.ndarray, empty: np.ndarray) -> None:
    farthest = np.argsort(gmm.score_samples(points))[:len(empty)]
    pooled = np.mean(gmm.covariances_, axis=0)
    for component, point in zip(empty, farthest):
        gmm.means_[component] = points[point]
        gmm.covariances_[component] = pooled
        gmm.weights_[component] = 1.0 / gmm.n_components
    gmm.weights_ /= gmm.weights_.sum()
    gmm.precisions_cholesky_ = precision_cholesky(gmm.covariances_)


def fit_gmm(points, k_s: int, seed: Optional[int] = 0, tol: float = 1e-4, max_iter: int = 200,
            reg_covar: float = 1e-6) -> GmmClassifier:
    """Fit a full-covariance GMM with k-means++ seeding by EM.

    EM runs one iteration at a time until the mean log-likelihood changes by
    less than `tol` or `max_iter` iterations are done. Components left empty
    are re-seeded once at the least likely points; components that stay
    empty are kept with a floored weight. The log-likelihood history covers
    both EM runs and `restart_at` marks where the second one starts.

    Raises:
        InsufficientDataError: If there are fewer points than components
    """
    points = require_finite("Embedding points", points)
    if k_s < 1:
        raise ValueError(f"Number of components must be positive, got {k_s}")
    if len(points) < k_s:
        raise InsufficientDataError(f"Cannot fit {k_s} components to {len(points)} points")

    for attempt in range(4):
        try:
            gmm, history = _fit_gaussian_mixture(points, k_s, seed, tol, max_iter, reg_covar)
            break
        except ValueError as e:
            if attempt == 3:
                raise
            reg_covar *= 10.0
            logger.warning(f"GMM fit failed ({e}); retrying with covariance ridge {reg_covar:g}")

    empty = _empty_components(gmm, points)
    reseeded: List[int] = []
    restart_at = None
    if empty.size:
        logger.info(f"Re-seeding {empty.size} empty GMM component(s) after {len(history)} EM iterations, "
                    f"restarting EM from mean log-likelihood {history[-1]:.4g}")
        _reseed(gmm, points, empty)
        gmm, restart_history = _fit_gaussian_mixture(points, k_s, seed, tol, max_iter, reg_covar, gmm=gmm)
        restart_at = len(history)
        history = history + restart_history
        reseeded = empty.tolist()

    weights = np.maximum(gmm.weights_, WEIGHT_FLOOR)
    weights /= weights.sum()
    classifier = GmmClassifier(weights, gmm.means_.copy(), gmm.covariances_.copy(), history, reseeded, restart_at)
    logger.debug(f"GMM with {k_s} components stopped after {len(history)} EM iterations, "
                 f"mean log-likelihood {classifier.score(points):.4g}")
    return classifier


@dataclass(frozen=True)
class ActionGrid:
    """Uniform grid with k_a cells per action dimension."""
    low: Tuple[float, ...]
    high: Tuple[float, ...]
    k_a: int

    def __post_init__(self):
        if len(self.low) != len(self.high):
            raise ShapeMismatchError(f"Bounds have different lengths: {len(self.low)} vs {len(self.high)}")
        if any(h <= l for l, h in zip(self.low, self.high)):
            raise ValueError(f"Degenerate action bounds {self.low} .. {self.high}")
        if self.k_a < 1:
            raise ValueError(f"Cells per dimension must be positive, got {self.k_a}")

    @property
    def n_a(self) -> int:
        return len(self.low)

    @property
    def n_cells(self) -> int:
        return self.k_a ** self.n_a

    @property
    def widths(self) -> np.ndarray:
        return (np.array(self.high) - np.array(self.low)) / self.k_a

    def axis_centers(self) -> np.ndarray:
        """(n_a, k_a) array of cell centers along each dimension."""
        return np.array(self.low)[:, None] + (np.arange(self.k_a)[None, :] + 0.5) * self.widths[:, None]

    def unravel(self, index: int) -> np.ndarray:
        return np.array([(index // self.k_a ** d) % self.k_a for d in range(self.n_a)])

    def centers(self) -> np.ndarray:
        """(n_cells, n_a) array of cell centers a_c(v_a)."""
        axis = self.axis_centers()
        return np.array([axis[np.arange(self.n_a), self.unravel(v)] for v in range(self.n_cells)])

    def cell_box(self, index: int) -> Tuple[np.ndarray, np.ndarray]:
        lower = np.array(self.low) + self.unravel(index) * self.widths
        return lower, lower + self.widths

    def index(self, actions) -> np.ndarray:
        """argmin_v ||a - a_c(v)||^2 for a batch of actions.

        The squared distance separates over dimensions, so the argmin is taken
        per dimension (ties resolve to the lower cell, matching a flat argmin).
        """
        actions = require_finite("Action", actions)
        actions = np.atleast_2d(actions)
        if actions.shape[1] != self.n_a:
            raise ShapeMismatchError(f"Expected actions of width {self.n_a}, got {actions.shape}")
        axis = self.axis_centers()
        per_dim = np.argmin((actions[:, :, None] - axis[None]) ** 2, axis=2)
        return per_dim @ (self.k_a ** np.arange(self.n_a))


def build_cost_table(reduced_states, reduced_actions, costs, k_s: int, n_actions: int,
                     delta: float) -> Tuple[np.ndarray, np.ndarray]:
    """Mean observed cost per (s^r, a^r), Δ where the pair was never observed.

    Returns:
        (C^r of shape (k_s, n_actions), pair counts n_{s^r,a^r})
    """
    reduced_states = np.asarray(reduced_states, dtype=int)
    reduced_actions = np.asarray(reduced_actions, dtype=int)
    costs = np.asarray(costs, dtype=float)
    if not len(reduced_states) == len(reduced_actions) == len(costs):
        raise ShapeMismatchError("Reduced states, actions and costs differ in length")
    counts = np.zeros((k_s, n_actions), dtype=np.int64)
    sums = np.zeros((k_s, n_actions))
    np.add.at(counts, (reduced_states, reduced_actions), 1)
    np.add.at(sums, (reduced_states, reduced_actions), costs)
    table = np.full((k_s, n_actions), float(delta))
    observed = counts > 0
    table[observed] = sums[observed] / counts[observed]
    return table, counts


def build_transition_table(reduced_states, reduced_actions, reduced_next_states, k_s: int,
                           n_actions: int) -> Tuple[np.ndarray, np.ndarray]:
    """Empirical transition frequencies, uniform 1/k_s for unobserved pairs.

    Returns:
        (T^r of shape (k_s, n_actions, k_s), path counts n_{s^r x a^r -> s^r'})
    """
    reduced_states = np.asarray(reduced_states, dtype=int)
    reduced_actions = np.asarray(reduced_actions, dtype=int)
    reduced_next_states = np.asarray(reduced_next_states, dtype=int)
    if not len(reduced_states) == len(reduced_actions) == len(reduced_next_states):
        raise ShapeMismatchError("Reduced states, actions and next states differ in length")
    paths = np.zeros((k_s, n_actions, k_s), dtype=np.int64)
    np.add.at(paths, (reduced_states, reduced_actions, reduced_next_states), 1)
    pair_counts = paths.sum(axis=2, keepdims=True)
    table = np.where(pair_counts > 0, paths / np.maximum(pair_counts, 1), 1.0 / k_s)
    return table, paths


def build_policy_table(reduced_states, reduced_actions, k_s: int,
                       n_actions: int) -> Tuple[np.ndarray, np.ndarray]:
    """Empirical reduced policy from the latest epoch, uniform for unvisited states.

    Returns:
        (P(pi^r(s^r) = a^r) of shape (k_s, n_actions), epoch pair counts n^e)
    """
    reduced_states = np.asarray(reduced_states, dtype=int)
    reduced_actions = np.asarray(reduced_actions, dtype=int)
    if len(reduced_states) != len(reduced_actions):
        raise ShapeMismatchError("Reduced states and actions differ in length")
    counts = np.zeros((k_s, n_actions), dtype=np.int64)
    np.add.at(counts, (reduced_states, reduced_actions), 1)
    visits = counts.sum(axis=1, keepdims=True)
    table = np.where(visits > 0, counts / np.maximum(visits, 1), 1.0 / n_actions)
    return table, counts


class InvariantCheck(NamedTuple):
    name: str
    passed: bool
    detail: str = ""


@dataclass
class RomdpModel:
    """Reduced order MDP over GMM regions and action-grid cells.

    `normalizer`, `mapper`, `gmm` and `grid` evaluate f_s and f_a on new inputs.
    They are None only for models assembled directly from reduced sequences.
    """
    k_s: int
    n_actions: int
    reduced_cost: np.ndarray
    transition: np.ndarray
    reduced_policy: np.ndarray
    pair_counts: np.ndarray
    epoch_pair_counts: np.ndarray
    path_counts: np.ndarray
    delta: float
    discount: float
    normalizer: Optional[Normalizer] = None
    mapper: Optional[MapperNet] = None
    gmm: Optional[GmmClassifier] = None
    grid: Optional[ActionGrid] = None

    @classmethod
    def from_reduced(cls, reduced_states, reduced_actions, reduced_next_states, costs,
                     epoch_states, epoch_actions, k_s: int, n_actions: int, delta: float,
                     discount: float, **abstractions) -> 'RomdpModel':
        """Assemble the tables from already-abstracted sequences."""
        cost, pair_counts = build_cost_table(reduced_states, reduced_actions, costs, k_s, n_actions, delta)
        transition, paths = build_transition_table(reduced_states, reduced_actions, reduced_next_states,
                                                   k_s, n_actions)
        policy, epoch_counts = build_policy_table(epoch_states, epoch_actions, k_s, n_actions)
        return cls(k_s, n_actions, cost, transition, policy, pair_counts, epoch_counts, paths,
                   float(delta), float(discount), **abstractions)

    def embed(self, states) -> np.ndarray:
        if self.normalizer is None or self.mapper is None:
            raise RuntimeError("This ROMDP carries no state abstraction")
        return self.mapper.predict(self.normalizer.transform(states))

    def abstract_states(self, states) -> np.ndarray:
        """f_s for a batch of raw states."""
        states = require_finite("State", states)
        if self.gmm is None:
            raise RuntimeError("This ROMDP carries no state abstraction")
        return self.gmm.classify(self.embed(np.atleast_2d(states)))

    def abstract_state(self, state) -> int:
        return int(self.abstract_states(np.asarray(state, dtype=float)[None, :])[0])

    def abstract_actions(self, actions) -> np.ndarray:
        if self.grid is None:
            raise RuntimeError("This ROMDP carries no action abstraction")
        return self.grid.index(actions)

    def abstract_action(self, action) -> int:
        return int(self.abstract_actions(np.asarray(action, dtype=float)[None, :])[0])

    def check_invariants(self, tol: float = 1e-9) -> List[InvariantCheck]:
        checks = []
        transition_rows = self.transition.sum(axis=2)
        bad = np.argwhere(np.abs(transition_rows - 1.0) > tol)
        checks.append(InvariantCheck(
            "transition rows sum to 1", bad.size == 0,
            ", ".join(f"(s={s}, a={a}): {transition_rows[s, a]:.6g}" for s, a in bad[:10])))
        policy_rows = self.reduced_policy.sum(axis=1)
        bad = np.flatnonzero(np.abs(policy_rows - 1.0) > tol)
        checks.append(InvariantCheck(
            "policy rows sum to 1", bad.size == 0,
            ", ".join(f"s={s}: {policy_rows[s]:.6g}" for s in bad[:10])))
        checks.append(InvariantCheck("reduced costs non-negative", bool(np.all(self.reduced_cost >= 0))))
        unobserved = self.pair_counts == 0
        checks.append(InvariantCheck(
            "unobserved pairs cost Δ", bool(np.all(self.reduced_cost[unobserved] == self.delta))))
        checks.append(InvariantCheck(
            "path counts match pair counts",
            bool(np.array_equal(self.path_counts.sum(axis=2), self.pair_counts))))
        return checks


class BuildResult(NamedTuple):
    model: RomdpModel
    embedding: Embedding
    subsample: np.ndarray


def _stage(name: str, func, *args, **kwargs):
    try:
        return func(*args, **kwargs)
    except Exception as e:
        raise StageError(name, e) from e


def build_romdp(dataset: Dataset, epoch_dataset: Dataset, config: 'ExperimentConfig',
                action_bounds: Tuple[np.ndarray, np.ndarray], seed: Optional[int] = 0) -> BuildResult:
    """Full pipeline: subsample -> normalize -> t-SNE -> mapper -> GMM -> grid -> tables.

    Raises:
        InsufficientDataError: If the dataset is smaller than the minimum build size
        StageError: If any stage fails; the stage name is attached
    """
    romdp = config.romdp
    if len(dataset) < romdp.min_build_size:
        raise InsufficientDataError(
            f"ROMDP needs at least {romdp.min_build_size} samples, dataset holds {len(dataset)}")
    rng = as_rng(seed)
    tsne_seed, mapper_seed, gmm_seed = (int(s) for s in rng.integers(0, 2 ** 31, size=3))

    states = dataset.states()
    subsample = subsample_indices(len(dataset), romdp.tsne_subsample_cap, rng)
    if len(subsample) > romdp.tsne_subsample_cap:
        raise AssertionError("t-SNE subsample exceeds its cap")
    logger.info(f"Building ROMDP from {len(dataset)} samples ({len(subsample)} embedded, "
                f"{len(epoch_dataset)} in the latest epoch)")

    normalizer = _stage("normalize", fit_normalizer, states)
    normalized = normalizer.transform(states[subsample])
    tsne_config = config.tsne
    embedding = _stage("tsne", tsne, normalized, perplexity=tsne_config.perplexity,
                       iterations=tsne_config.iterations, seed=tsne_seed,
                       learning_rate=tsne_config.learning_rate, exaggeration=tsne_config.exaggeration,
                       exaggeration_iters=tsne_config.exaggeration_iters,
                       momentum=tsne_config.momentum, final_momentum=tsne_config.final_momentum,
                       momentum_switch=tsne_config.momentum_switch, init_std=tsne_config.init_std)
    mapper_config = config.mapper
    mapper = _stage("mapper", train_mapper, normalized, embedding, epochs=mapper_config.epochs,
                    seed=mapper_seed, hidden=mapper_config.hidden, lr=mapper_config.lr,
                    batch_size=mapper_config.batch_size)
    gmm = _stage("gmm", fit_gmm, embedding.points, romdp.k_s, seed=gmm_seed, tol=romdp.gmm_tol,
                 max_iter=romdp.gmm_max_iter, reg_covar=romdp.gmm_reg_covar)
    low, high = action_bounds
    grid = _stage("grid", ActionGrid, tuple(float(v) for v in low), tuple(float(v) for v in high), romdp.k_a)

    def tables() -> RomdpModel:
        partial = RomdpModel(romdp.k_s, grid.n_cells, np.empty(0), np.empty(0), np.empty(0), np.empty(0),
                             np.empty(0), np.empty(0), romdp.delta, config.safety.discount,
                             normalizer, mapper, gmm, grid)
        epoch_states = (partial.abstract_states(epoch_dataset.states()) if len(epoch_dataset)
                        else np.zeros(0, dtype=int))
        epoch_actions = (grid.index(epoch_dataset.actions()) if len(epoch_dataset)
                         else np.zeros(0, dtype=int))
        return RomdpModel.from_reduced(
            partial.abstract_states(states), grid.index(dataset.actions()),
            partial.abstract_states(dataset.next_states()), dataset.costs(),
            epoch_states, epoch_actions, romdp.k_s, grid.n_cells, romdp.delta, config.safety.discount,
            normalizer=normalizer, mapper=mapper, gmm=gmm, grid=grid)

    model = _stage("tables", tables)
    return BuildResult(model, embedding, subsample)
