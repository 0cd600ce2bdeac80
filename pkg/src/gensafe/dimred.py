"""Order reduction of observed states: min-max normalization, exact t-SNE and
a mapping network that reproduces the embedding for unseen states."""
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.distance import pdist, squareform
from sklearn.manifold import trustworthiness as _trustworthiness

from gensafe.errors import DegenerateInputError, InsufficientDataError, ShapeMismatchError, require_finite
from gensafe.tinynet import Adam, Mlp, as_rng

logger = logging.getLogger(__name__)

EMBEDDING_DIM = 2


@dataclass(frozen=True, eq=False)
class Normalizer:
    """Per-feature affine map of the observed range onto [-1, 1]; constant features map to 0."""
    minimum: np.ndarray
    maximum: np.ndarray

    @property
    def span(self) -> np.ndarray:
        return self.maximum - self.minimum

    def transform(self, states) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        span = self.span
        constant = span == 0
        scaled = 2.0 * (states - self.minimum) / np.where(constant, 1.0, span) - 1.0
        return np.where(constant, 0.0, scaled)


def fit_normalizer(states) -> Normalizer:
    """Learn per-feature minimum and maximum.

    Raises:
        InsufficientDataError: If fewer than two states are given
    """
    states = np.asarray(states, dtype=float)
    if states.ndim != 2 or states.shape[0] < 2:
        raise InsufficientDataError(f"Need at least 2 states to fit a normalizer, got shape {states.shape}")
    require_finite("States", states)
    return Normalizer(states.min(axis=0), states.max(axis=0))


class Affinities(NamedTuple):
    conditional: np.ndarray   # p_{j|i}, rows sum to 1
    joint: np.ndarray         # symmetrized p_ij, sums to 1
    entropies: np.ndarray     # per-row entropy in bits
    betas: np.ndarray         # per-row precision 1 / (2 sigma^2)


def joint_affinities(points, perplexity: float, tol: float = 1e-5, max_iter: int = 200) -> Affinities:
    """Gaussian affinities with per-point bandwidths matched to the perplexity.

    The bandwidth of each point is found by bisection on the precision so that
    the entropy of its conditional distribution equals log2(perplexity).

    Raises:
        DegenerateInputError: If all pairwise distances are zero
        ValueError: If the perplexity is outside [1, n - 1]
    """
    points = require_finite("Points", points)
    n = points.shape[0]
    if n < 2:
        raise InsufficientDataError(f"Need at least 2 points, got {n}")
    if not 1.0 <= perplexity <= n - 1:
        raise ValueError(f"Perplexity {perplexity} outside the feasible range [1, {n - 1}]")
    distances = squareform(pdist(points, "sqeuclidean"))
    if not np.any(distances > 0):
        raise DegenerateInputError("All pairwise distances are zero")

    off_diagonal = ~np.eye(n, dtype=bool)
    shifted = distances - np.min(np.where(off_diagonal, distances, np.inf), axis=1, keepdims=True)
    # Diagonal set to inf so its kernel entry is exactly 0 at any precision
    excluded = np.where(off_diagonal, shifted, np.inf)
    target = np.log(perplexity)

    betas = np.ones(n)
    lower = np.zeros(n)
    upper = np.full(n, np.inf)
    active = np.ones(n, dtype=bool)
    conditional = np.zeros((n, n))
    entropies = np.zeros(n)
    for _ in range(max_iter):
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        kernel = np.exp(-excluded[rows] * betas[rows, None])
        total = kernel.sum(axis=1)
        probs = kernel / total[:, None]
        entropy = np.log(total) + betas[rows] * np.sum(np.where(off_diagonal[rows], shifted[rows] * probs, 0.0), axis=1)
        conditional[rows] = probs
        entropies[rows] = entropy

        error = entropy - target
        done = np.abs(error) < tol
        active[rows[done]] = False
        too_flat = error > 0
        lower[rows] = np.where(too_flat, betas[rows], lower[rows])
        upper[rows] = np.where(too_flat, upper[rows], betas[rows])
        widened = np.where(np.isinf(upper[rows]), betas[rows] * 2.0, (betas[rows] + upper[rows]) / 2.0)
        narrowed = np.where(lower[rows] == 0, betas[rows] / 2.0, (betas[rows] + lower[rows]) / 2.0)
        betas[rows] = np.where(done, betas[rows], np.where(too_flat, widened, narrowed))
    if np.any(active):
        worst = float(np.max(np.abs(entropies[active] - target)))
        logger.warning(f"Bandwidth search did not converge for {int(active.sum())} point(s), "
                       f"worst entropy error {worst:.2e} nats")

    joint = (conditional + conditional.T) / (2.0 * n)
    return Affinities(conditional, joint, entropies / np.log(2.0), betas)


def kl_divergence(joint: np.ndarray, embedded: np.ndarray) -> float:
    """KL(P || Q) for the Student-t similarities of an embedding."""
    num = 1.0 / (1.0 + squareform(pdist(embedded, "sqeuclidean")))
    np.fill_diagonal(num, 0.0)
    q = np.maximum(num / num.sum(), 1e-12)
    mask = joint > 0
    return float(np.sum(joint[mask] * np.log(joint[mask] / q[mask])))


@dataclass
class Embedding:
    """Low-dimensional points produced by t-SNE, one per input state."""
    points: np.ndarray
    final_kl: float
    kl_history: List[Tuple[int, float]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.points)


def tsne(states, perplexity: float = 30.0, iterations: int = 500, seed: Optional[int] = 0,
         learning_rate: float = 200.0, exaggeration: float = 12.0, exaggeration_iters: int = 100,
         momentum: float = 0.5, final_momentum: float = 0.8, momentum_switch: int = 250,
         init_std: float = 1e-4, kl_every: int = 10) -> Embedding:
    """Exact t-SNE into two dimensions.

    Args:
        states: Normalized state vectors, one per row
        perplexity: Effective number of neighbours per point
        iterations: Number of gradient iterations
        seed: Seed for the Gaussian initialization

    Returns:
        The embedding with its final KL divergence and a KL trace every
        `kl_every` iterations

    Raises:
        ValueError: If fewer than 4 * perplexity states are given
        DegenerateInputError: If all states coincide
    """
    states = require_finite("States", states)
    n = states.shape[0]
    if n < 4 * perplexity:
        raise ValueError(f"t-SNE needs at least {int(np.ceil(4 * perplexity))} points for perplexity "
                         f"{perplexity}, got {n}")
    affinities = joint_affinities(states, perplexity)
    joint = np.maximum(affinities.joint, 1e-12)
    np.fill_diagonal(joint, 0.0)

    rng = as_rng(seed)
    embedded = rng.normal(0.0, init_std, size=(n, EMBEDDING_DIM))
    update = np.zeros_like(embedded)
    gains = np.ones_like(embedded)
    history: List[Tuple[int, float]] = []
    logger.debug(f"Running t-SNE on {n} points, perplexity {perplexity}, {iterations} iterations")

    for iteration in range(iterations):
        target = joint * exaggeration if iteration < exaggeration_iters else joint
        num = 1.0 / (1.0 + squareform(pdist(embedded, "sqeuclidean")))
        np.fill_diagonal(num, 0.0)
        q = np.maximum(num / num.sum(), 1e-12)
        weights = (target - q) * num
        gradient = 4.0 * (weights.sum(axis=1)[:, None] * embedded - weights @ embedded)

        current_momentum = momentum if iteration < momentum_switch else final_momentum
        same_sign = (gradient > 0) == (update > 0)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        update = current_momentum * update - learning_rate * gains * gradient
        embedded = embedded + update
        embedded -= embedded.mean(axis=0)

        if (iteration + 1) % kl_every == 0 or iteration == iterations - 1:
            history.append((iteration + 1, kl_divergence(joint, embedded)))

    final_kl = history[-1][1] if history else kl_divergence(joint, embedded)
    if not np.all(np.isfinite(embedded)):
        raise DegenerateInputError("t-SNE diverged to non-finite coordinates")
    return Embedding(embedded, final_kl, history)


def trustworthiness(states, embedded, n_neighbors: int = 10) -> float:
    """Rank-based neighbourhood preservation score in [0, 1]."""
    return float(_trustworthiness(np.asarray(states), np.asarray(embedded), n_neighbors=n_neighbors))


@dataclass
class MapperNet:
    """Network approximating the state -> embedding map for unseen states.

    Targets are standardized during training; `predict` undoes the scaling.
    """
    net: Mlp
    target_mean: np.ndarray
    target_scale: np.ndarray
    losses: List[float] = field(default_factory=list)
    heldout_mse: float = float("nan")

    def predict(self, normalized_states) -> np.ndarray:
        return self.net.predict(normalized_states) * self.target_scale + self.target_mean


def _mse(net: Mlp, inputs: np.ndarray, targets: np.ndarray) -> float:
    return float(np.mean((net.predict(inputs) - targets) ** 2))


def train_mapper(states, embedding, epochs: int = 200, seed: Optional[int] = 0,
                 hidden: Sequence[int] = (64, 64), lr: float = 1e-3, batch_size: int = 256,
                 heldout_fraction: float = 0.1) -> MapperNet:
    """Fit an MLP from normalized states to their embedded coordinates.

    `losses[0]` is the training MSE before the first update and `losses[-1]`
    the MSE after the last epoch, both on standardized targets.

    Raises:
        ShapeMismatchError: If states and embedding have different lengths
    """
    states = require_finite("States", states)
    targets = require_finite("Embedding", embedding.points if isinstance(embedding, Embedding) else embedding)
    if states.ndim != 2 or targets.ndim != 2 or len(states) != len(targets):
        raise ShapeMismatchError(f"States {states.shape} and embedding {targets.shape} do not line up")
    rng = as_rng(seed)

    n = len(states)
    order = rng.permutation(n)
    heldout_count = int(round(n * heldout_fraction)) if n >= 10 else 0
    heldout, train = order[:heldout_count], order[heldout_count:]

    target_mean = targets[train].mean(axis=0)
    target_scale = targets[train].std(axis=0)
    target_scale = np.where(target_scale > 0, target_scale, 1.0)
    scaled = (targets - target_mean) / target_scale

    net = Mlp([states.shape[1], *hidden, targets.shape[1]], rng=rng)
    optimizer = Adam(net.params, lr=lr)
    train_x, train_y = states[train], scaled[train]
    losses = [_mse(net, train_x, train_y)]
    for _ in range(epochs):
        permutation = rng.permutation(len(train))
        for start in range(0, len(train), batch_size):
            batch = permutation[start:start + batch_size]
            prediction = net.forward(train_x[batch])
            grad = 2.0 * (prediction - train_y[batch]) / prediction.size
            optimizer.step(net.backward(grad))
        losses.append(_mse(net, train_x, train_y))

    mapper = MapperNet(net, target_mean, target_scale, losses)
    if heldout_count:
        mapper.heldout_mse = float(np.mean((mapper.predict(states[heldout]) - targets[heldout]) ** 2))
    logger.info(f"Mapper trained: MSE {losses[0]:.4g} -> {losses[-1]:.4g}, held-out MSE {mapper.heldout_mse:.4g}")
    return mapper


def subsample_indices(count: int, cap: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random subset of at most `cap` indices, in ascending order."""
    if count <= cap:
        return np.arange(count)
    return np.sort(rng.choice(count, size=cap, replace=False))


def export_embedding(path: Union[str, Path], embedding, costs) -> Path:
    """Write (x, y, cost) rows for offline plotting."""
    points = embedding.points if isinstance(embedding, Embedding) else np.asarray(embedding)
    costs = np.asarray(costs, dtype=float)
    if len(points) != len(costs):
        raise ShapeMismatchError(f"{len(points)} points but {len(costs)} costs")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["x", "y", "cost"])
        for (x, y), cost in zip(points, costs):
            writer.writerow([repr(float(x)), repr(float(y)), repr(float(cost))])
    return path
