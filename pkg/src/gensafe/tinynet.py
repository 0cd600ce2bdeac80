"""Small feed-forward networks with hand-written backpropagation and Adam.

These back the Gaussian policy, the reward/cost value heads and the mapping
network that approximates the t-SNE embedding.
"""
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from gensafe.errors import ShapeMismatchError, StaleCacheError, VersionMismatchError

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
ACTIVATIONS = ("tanh", "identity")
LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0

RngLike = Union[np.random.Generator, int, None]


def as_rng(rng: RngLike) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


class Mlp:
    """Multi-layer perceptron with tanh or identity layers.

    Weights are stored as (fan_in, fan_out) matrices, so a batch of row
    vectors is propagated with `x @ W + b`.

    Example:
        net = Mlp([22, 64, 64, 2], rng=0)
        out = net.forward(batch)
        grads = net.backward(d_loss_d_out)
    """

    def __init__(self, sizes: Sequence[int], activations: Optional[Sequence[str]] = None,
                 rng: RngLike = None, output_scale: float = 1.0):
        if len(sizes) < 2:
            raise ValueError(f"An Mlp needs at least an input and an output size, got {list(sizes)}")
        self.sizes = [int(s) for s in sizes]
        if activations is None:
            activations = ["tanh"] * (len(sizes) - 2) + ["identity"]
        if len(activations) != len(sizes) - 1:
            raise ValueError(f"Expected {len(sizes) - 1} activations, got {len(activations)}")
        for tag in activations:
            if tag not in ACTIVATIONS:
                raise ValueError(f"Unknown activation '{tag}'")
        self.activations = list(activations)

        generator = as_rng(rng)
        self.params: List[np.ndarray] = []
        for index, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            scale = np.sqrt(1.0 / fan_in)
            if index == len(self.sizes) - 2:
                scale *= output_scale
            self.params.append(generator.normal(0.0, scale, size=(fan_in, fan_out)))
            self.params.append(np.zeros(fan_out))
        self._cache: Optional[List[Tuple[np.ndarray, np.ndarray]]] = None
        self._squeeze = False
        self.input_grad: Optional[np.ndarray] = None

    @classmethod
    def from_params(cls, sizes: Sequence[int], activations: Sequence[str],
                    params: Sequence[np.ndarray]) -> 'Mlp':
        net = cls(sizes, activations, rng=0)
        if len(params) != len(net.params):
            raise ShapeMismatchError(f"Expected {len(net.params)} parameter arrays, got {len(params)}")
        for index, (current, given) in enumerate(zip(net.params, params)):
            given = np.asarray(given, dtype=float)
            if given.shape != current.shape:
                raise ShapeMismatchError(f"Parameter {index} has shape {given.shape}, expected {current.shape}")
            net.params[index] = given.copy()
        return net

    @property
    def weights(self) -> List[np.ndarray]:
        return self.params[0::2]

    @property
    def biases(self) -> List[np.ndarray]:
        return self.params[1::2]

    def _prepare(self, x) -> Tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise ShapeMismatchError(f"Expected input width {self.sizes[0]}, got shape {x.shape}")
        return x, squeeze

    def predict(self, x) -> np.ndarray:
        """Forward pass without caching; safe to call concurrently on a trained net."""
        h, squeeze = self._prepare(x)
        for weight, bias, tag in zip(self.weights, self.biases, self.activations):
            h = h @ weight + bias
            if tag == "tanh":
                h = np.tanh(h)
        return h[0] if squeeze else h

    def forward(self, x) -> np.ndarray:
        """Forward pass that caches intermediate activations for `backward`."""
        h, squeeze = self._prepare(x)
        cache = []
        for weight, bias, tag in zip(self.weights, self.biases, self.activations):
            inputs = h
            h = inputs @ weight + bias
            if tag == "tanh":
                h = np.tanh(h)
            cache.append((inputs, h))
        self._cache = cache
        self._squeeze = squeeze
        return h[0] if squeeze else h

    def backward(self, grad_output) -> List[np.ndarray]:
        """Reverse-mode gradients of a scalar loss given dLoss/dOutput.

        Returns:
            Gradients aligned with `params`. The gradient with respect to the
            input is left in `input_grad`.

        Raises:
            StaleCacheError: If no forward pass is cached or the batch does not match it
        """
        if self._cache is None:
            raise StaleCacheError("backward called without a preceding forward pass")
        grad = np.asarray(grad_output, dtype=float)
        if self._squeeze and grad.ndim == 1:
            grad = grad[None, :]
        batch = self._cache[0][0].shape[0]
        if grad.shape != (batch, self.sizes[-1]):
            raise StaleCacheError(f"Output gradient shape {grad.shape} does not match cached batch "
                                  f"{(batch, self.sizes[-1])}")
        grads: List[np.ndarray] = [np.empty(0)] * len(self.params)
        for layer in reversed(range(len(self.activations))):
            inputs, outputs = self._cache[layer]
            if self.activations[layer] == "tanh":
                grad = grad * (1.0 - outputs ** 2)
            grads[2 * layer] = inputs.T @ grad
            grads[2 * layer + 1] = grad.sum(axis=0)
            grad = grad @ self.weights[layer].T
        self.input_grad = grad[0] if self._squeeze else grad
        self._cache = None
        return grads

    def state_dict(self, prefix: str = "") -> Dict[str, np.ndarray]:
        state = {f"{prefix}sizes": np.array(self.sizes),
                 f"{prefix}activations": np.array(self.activations)}
        for index, param in enumerate(self.params):
            state[f"{prefix}param{index}"] = param
        return state

    @classmethod
    def from_state_dict(cls, state: Dict[str, np.ndarray], prefix: str = "") -> 'Mlp':
        sizes = [int(s) for s in state[f"{prefix}sizes"]]
        activations = [str(a) for a in state[f"{prefix}activations"]]
        count = 2 * (len(sizes) - 1)
        return cls.from_params(sizes, activations, [state[f"{prefix}param{i}"] for i in range(count)])


class Adam:
    """Adam optimizer with bias correction, updating parameter arrays in place."""

    def __init__(self, params: List[np.ndarray], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads: Sequence[np.ndarray], lr: Optional[float] = None) -> None:
        if len(grads) != len(self.params):
            raise ShapeMismatchError(f"Expected {len(self.params)} gradients, got {len(grads)}")
        lr = self.lr if lr is None else lr
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for param, grad, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad ** 2
            param -= lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


def adam_step(params: List[np.ndarray], grads: Sequence[np.ndarray], optimizer: Adam,
              lr: Optional[float] = None) -> List[np.ndarray]:
    """Functional wrapper: apply one Adam update and return the (updated) parameters.

    `params` may be a fresh list, as long as it holds the very arrays the optimizer was built on.
    """
    if len(params) != len(optimizer.params) or any(p is not q for p, q in zip(params, optimizer.params)):
        raise ValueError("Optimizer state belongs to a different parameter list")
    optimizer.step(grads, lr)
    return params


class GaussianPolicy:
    """Diagonal Gaussian policy with a state-independent log standard deviation."""

    def __init__(self, n_s: int, n_a: int, hidden: Sequence[int] = (64, 64), rng: RngLike = None,
                 init_log_std: float = -0.5):
        self.mean_net = Mlp([n_s, *hidden, n_a], rng=rng, output_scale=0.01)
        self.log_std = np.full(n_a, float(init_log_std))
        self.clamp_log_std()
        self._cached_actions: Optional[np.ndarray] = None
        self._cached_means: Optional[np.ndarray] = None

    @property
    def n_a(self) -> int:
        return self.mean_net.sizes[-1]

    @property
    def params(self) -> List[np.ndarray]:
        return [*self.mean_net.params, self.log_std]

    def clamp_log_std(self) -> None:
        np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX, out=self.log_std)

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)

    def mean(self, states) -> np.ndarray:
        return self.mean_net.predict(states)

    def log_density(self, actions, means) -> np.ndarray:
        z = (np.asarray(actions) - means) / self.std
        return -0.5 * np.sum(z ** 2, axis=-1) - np.sum(self.log_std) - 0.5 * self.n_a * np.log(2.0 * np.pi)

    def sample(self, state, rng: RngLike) -> Tuple[np.ndarray, float]:
        """Draw an action for a single state.

        Returns:
            The action mean + std * z with z ~ N(0, I) and its log-density
        """
        mean = self.mean(state)
        noise = as_rng(rng).standard_normal(self.n_a)
        action = mean + self.std * noise
        return action, float(self.log_density(action, mean))

    def log_prob(self, states, actions) -> np.ndarray:
        """Log-densities of a batch, caching what `log_prob_backward` needs."""
        means = self.mean_net.forward(states)
        self._cached_actions = np.asarray(actions, dtype=float)
        self._cached_means = means
        return self.log_density(self._cached_actions, means)

    def log_prob_backward(self, grad_logp) -> List[np.ndarray]:
        """Parameter gradients of sum_i g_i * log pi(a_i|s_i) given g = dLoss/dlogp."""
        if self._cached_actions is None:
            raise StaleCacheError("log_prob_backward called without a preceding log_prob")
        grad_logp = np.asarray(grad_logp, dtype=float).reshape(-1, 1)
        var = self.std ** 2
        diff = self._cached_actions - self._cached_means
        grad_mean = grad_logp * diff / var
        grad_log_std = np.sum(grad_logp * (diff ** 2 / var - 1.0), axis=0)
        self._cached_actions = None
        self._cached_means = None
        return [*self.mean_net.backward(grad_mean), grad_log_std]

    def state_dict(self, prefix: str = "") -> Dict[str, np.ndarray]:
        state = self.mean_net.state_dict(f"{prefix}mean.")
        state[f"{prefix}log_std"] = self.log_std
        return state

    @classmethod
    def from_state_dict(cls, state: Dict[str, np.ndarray], prefix: str = "") -> 'GaussianPolicy':
        mean_net = Mlp.from_state_dict(state, f"{prefix}mean.")
        policy = cls(mean_net.sizes[0], mean_net.sizes[-1], hidden=mean_net.sizes[1:-1], rng=0)
        policy.mean_net = mean_net
        policy.log_std = np.asarray(state[f"{prefix}log_std"], dtype=float).copy()
        return policy


Network = Union[Mlp, GaussianPolicy]


def save_checkpoint(path: Union[str, Path], networks: Dict[str, Network]) -> Path:
    """Write networks to a versioned .npz archive of shapes and parameters."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays: Dict[str, np.ndarray] = {"format_version": np.array(CHECKPOINT_VERSION)}
    for name, net in networks.items():
        kind = "policy" if isinstance(net, GaussianPolicy) else "mlp"
        arrays[f"{name}/kind"] = np.array(kind)
        arrays.update(net.state_dict(f"{name}/"))
    with open(path, "wb") as handle:
        np.savez(handle, **arrays)
    logger.debug(f"Saved checkpoint with {len(networks)} network(s) to {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> Dict[str, Network]:
    with np.load(path, allow_pickle=False) as archive:
        state = {key: archive[key] for key in archive.files}
    version = int(state.pop("format_version", -1))
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(f"Checkpoint {path} has version {version}, expected {CHECKPOINT_VERSION}")
    names = sorted({key.split("/", 1)[0] for key in state if key.endswith("/kind")})
    networks: Dict[str, Network] = {}
    for name in names:
        kind = str(state[f"{name}/kind"])
        if kind == "policy":
            networks[name] = GaussianPolicy.from_state_dict(state, f"{name}/")
        else:
            networks[name] = Mlp.from_state_dict(state, f"{name}/")
    return networks
