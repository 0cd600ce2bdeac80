"""Averaged value iteration on a ROMDP.

The Bellman backup averages over the empirical reduced policy instead of
taking a maximum:

    V(s) = sum_a pi(a|s) * [C(s, a) + gamma * sum_s' T(s, a, s') * V(s')]
"""
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from gensafe.abstraction import RomdpModel
from gensafe.errors import NonConvergenceError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ReducedValueFunction:
    values: np.ndarray
    iterations_run: int
    final_delta: float

    def __getitem__(self, reduced_state: int) -> float:
        return float(self.values[reduced_state])


def policy_averaged(model: RomdpModel) -> Tuple[np.ndarray, np.ndarray]:
    """Transition matrix and expected cost under the reduced policy.

    Returns:
        (M, b) with M[s, s'] = sum_a pi(a|s) T(s, a, s') and b[s] = sum_a pi(a|s) C(s, a)
    """
    transition = np.einsum("sa,sat->st", model.reduced_policy, model.transition)
    cost = np.sum(model.reduced_policy * model.reduced_cost, axis=1)
    return transition, cost


def averaged_backup(model: RomdpModel, values: np.ndarray) -> np.ndarray:
    """One synchronous application of the averaged Bellman operator."""
    transition, cost = policy_averaged(model)
    return cost + model.discount * transition @ values


def value_iteration(model: RomdpModel, tolerance: float = 1e-4, max_iters: int = 10_000) -> ReducedValueFunction:
    """Compute V^r by in-place sweeps over the reduced states in ascending order.

    Args:
        model: ROMDP whose transition and policy rows are stochastic
        tolerance: Stop once no value changes by more than this in a sweep
        max_iters: Maximum number of sweeps

    Raises:
        ValueError: If the discount is not in [0, 1) or a table row is not stochastic
        NonConvergenceError: If `max_iters` sweeps did not converge; carries the last values
    """
    if not 0.0 <= model.discount < 1.0:
        raise ValueError(f"Value iteration needs a discount below 1, got {model.discount}")
    if not np.allclose(model.transition.sum(axis=2), 1.0) or not np.allclose(model.reduced_policy.sum(axis=1), 1.0):
        raise ValueError("ROMDP transition and policy rows must sum to 1")

    transition, cost = policy_averaged(model)
    gamma = model.discount
    values = np.zeros(model.k_s)
    delta = np.inf
    for sweep in range(1, max_iters + 1):
        delta = 0.0
        for state in range(model.k_s):
            updated = cost[state] + gamma * transition[state] @ values
            delta = max(delta, abs(updated - values[state]))
            values[state] = updated
        if delta < tolerance:
            logger.debug(f"Value iteration converged after {sweep} sweeps (delta {delta:.3g})")
            return ReducedValueFunction(values, sweep, float(delta))
    raise NonConvergenceError(f"Value iteration did not converge within {max_iters} sweeps (delta {delta:.3g})",
                              values=values, delta=float(delta))
