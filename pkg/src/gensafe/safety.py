"""Action correction against the ROMDP cost constraints.

A proposed action a_t is replaced by the closest action a_m whose reduced
action satisfies

    C^r(s^r, a^r) <= d_s                                    (immediate)
    C^r(s^r, a^r) + gamma * sum_s' T^r(s^r, a^r, s') V(s') <= d   (future)

The search is a particle swarm. Both constraints depend on the action only
through its grid cell, so the swarm's answer is refined by projecting a_t
onto every cell box and keeping the best projection.
"""
import logging
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple, Union

import numpy as np

from gensafe.abstraction import RomdpModel
from gensafe.config import PsoSection
from gensafe.data import DataSample, Dataset
from gensafe.errors import ShapeMismatchError, require_finite
from gensafe.planner import ReducedValueFunction
from gensafe.tinynet import RngLike, as_rng

logger = logging.getLogger(__name__)

# Offset separating infeasible from feasible objectives in the reported history
INFEASIBLE_OFFSET = 1e9
# Fraction of a cell width kept clear of its faces when projecting into it
CELL_MARGIN = 1e-9


class ConstraintValues(NamedTuple):
    immediate: float
    future: float
    feasible: bool


@dataclass(eq=False)
class CorrectionProblem:
    """One correction request.

    `reduced_state` may be given directly; otherwise it is computed from
    `state` with the model's state abstraction.
    """
    state: Optional[np.ndarray]
    action: np.ndarray
    model: RomdpModel
    values: Union[ReducedValueFunction, np.ndarray]
    immediate_limit: float
    future_limit: float
    discount: Optional[float] = None
    reduced_state: Optional[int] = None
    _constraints: Optional[Tuple[np.ndarray, np.ndarray]] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.immediate_limit <= 0 or self.future_limit <= 0:
            raise ValueError(f"Cost limits must be positive, got d_s={self.immediate_limit}, d={self.future_limit}")
        self.action = require_finite("Action", self.action)
        values = self.values.values if isinstance(self.values, ReducedValueFunction) else self.values
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != (self.model.k_s,):
            raise ShapeMismatchError(f"Value table has shape {self.values.shape}, "
                                     f"ROMDP has {self.model.k_s} reduced states")
        if self.discount is None:
            self.discount = self.model.discount
        if self.reduced_state is None:
            if self.state is None:
                raise ValueError("Either a state or a reduced state is required")
            self.reduced_state = self.model.abstract_state(self.state)

    def cell_constraints(self) -> Tuple[np.ndarray, np.ndarray]:
        """Immediate and future constraint values for every reduced action."""
        if self._constraints is None:
            s = self.reduced_state
            immediate = self.model.reduced_cost[s]
            future = immediate + self.discount * self.model.transition[s] @ self.values
            self._constraints = (immediate, future)
        return self._constraints

    def cell_violations(self) -> np.ndarray:
        immediate, future = self.cell_constraints()
        return np.maximum(0.0, immediate - self.immediate_limit) + np.maximum(0.0, future - self.future_limit)


def constraint_eval(problem: CorrectionProblem, action) -> ConstraintValues:
    """Left-hand sides of the immediate and future constraints at `action`."""
    action = require_finite("Action", action)
    reduced_action = problem.model.abstract_action(action)
    immediate, future = problem.cell_constraints()
    imm, fut = float(immediate[reduced_action]), float(future[reduced_action])
    return ConstraintValues(imm, fut, imm <= problem.immediate_limit and fut <= problem.future_limit)


@dataclass(frozen=True)
class CorrectionReport:
    feasible: bool
    distance: float
    immediate: float
    future: float
    short_circuit: bool
    reduced_state: int
    reduced_action: int
    best_history: Tuple[float, ...] = ()


def _better(feasible_a, objective_a, feasible_b, objective_b):
    """Elementwise: is (a) strictly better than (b)? Feasibility first, then objective."""
    return np.logical_or(np.logical_and(feasible_a, np.logical_not(feasible_b)),
                         np.logical_and(np.equal(feasible_a, feasible_b), objective_a < objective_b))


def correct_action(problem: CorrectionProblem, pso: Optional[PsoSection] = None,
                   rng: RngLike = None) -> Tuple[np.ndarray, CorrectionReport]:
    """Find the action closest to the proposal that satisfies both constraints.

    If the proposal is feasible it is returned unchanged. If no feasible
    action exists, the action minimizing ||a - a_t||^2 + rho * violation is
    returned and the report is flagged infeasible.

    Args:
        problem: The correction request
        pso: Swarm parameters
        rng: Seed or generator for the swarm

    Returns:
        (a_m, report)
    """
    pso = pso or PsoSection()
    grid = problem.model.grid
    if grid is None:
        raise ValueError("Action correction needs a ROMDP with an action grid")
    low, high = np.array(grid.low), np.array(grid.high)
    proposal = problem.action
    if proposal.shape != (grid.n_a,):
        raise ShapeMismatchError(f"Expected an action of width {grid.n_a}, got shape {proposal.shape}")
    immediate, future = problem.cell_constraints()
    violation = problem.cell_violations()
    feasible_cells = violation == 0.0

    start = np.clip(proposal, low, high)
    start_cell = int(grid.index(start)[0])
    if feasible_cells[start_cell]:
        corrected = proposal.copy() if np.array_equal(start, proposal) else start
        return corrected, CorrectionReport(True, float(np.linalg.norm(corrected - proposal)),
                                           float(immediate[start_cell]), float(future[start_cell]),
                                           True, problem.reduced_state, start_cell)

    def evaluate(points: np.ndarray):
        cells = grid.index(points)
        distance = np.sum((points - proposal) ** 2, axis=1)
        return feasible_cells[cells], distance + pso.penalty * violation[cells], cells

    generator = as_rng(rng)
    width = high - low
    max_velocity = 0.5 * width
    positions = np.clip(start + generator.uniform(-width, width, size=(pso.particles, grid.n_a)), low, high)
    positions[0] = start
    velocities = generator.uniform(-max_velocity, max_velocity, size=positions.shape)
    feasible, objective, _ = evaluate(positions)
    best_positions, best_feasible, best_objective = positions.copy(), feasible.copy(), objective.copy()
    leader = _leader(best_feasible, best_objective)
    history: List[float] = [_report_value(best_feasible[leader], best_objective[leader])]

    for _ in range(pso.iterations):
        r1 = generator.random(positions.shape)
        r2 = generator.random(positions.shape)
        velocities = (pso.inertia * velocities
                      + pso.cognitive * r1 * (best_positions - positions)
                      + pso.social * r2 * (best_positions[leader] - positions))
        velocities = np.clip(velocities, -max_velocity, max_velocity)
        positions = np.clip(positions + velocities, low, high)
        feasible, objective, _ = evaluate(positions)
        improved = _better(feasible, objective, best_feasible, best_objective)
        best_positions[improved] = positions[improved]
        best_feasible[improved] = feasible[improved]
        best_objective[improved] = objective[improved]
        leader = _leader(best_feasible, best_objective)
        history.append(_report_value(best_feasible[leader], best_objective[leader]))

    corrected = best_positions[leader]
    corrected_feasible, corrected_objective = bool(best_feasible[leader]), float(best_objective[leader])
    margin = CELL_MARGIN * grid.widths
    for cell in range(grid.n_cells):
        lower, upper = grid.cell_box(cell)
        candidate = np.clip(proposal, np.maximum(lower + margin, low), np.minimum(upper - margin, high))
        candidate_feasible, candidate_objective, _ = evaluate(candidate[None, :])
        if _better(candidate_feasible[0], candidate_objective[0], corrected_feasible, corrected_objective):
            corrected = candidate
            corrected_feasible, corrected_objective = bool(candidate_feasible[0]), float(candidate_objective[0])

    cell = int(grid.index(corrected)[0])
    if not corrected_feasible:
        logger.debug(f"No feasible action in reduced state {problem.reduced_state}; "
                     f"returning least-violating action (violation {violation[cell]:.3g})")
    return corrected, CorrectionReport(corrected_feasible, float(np.linalg.norm(corrected - proposal)),
                                       float(immediate[cell]), float(future[cell]), False,
                                       problem.reduced_state, cell, tuple(history))


def _leader(feasible: np.ndarray, objective: np.ndarray) -> int:
    if feasible.any():
        return int(np.flatnonzero(feasible)[np.argmin(objective[feasible])])
    return int(np.argmin(objective))


def _report_value(feasible: bool, objective: float) -> float:
    return float(objective) if feasible else INFEASIBLE_OFFSET + float(objective)


@dataclass
class SafetyLayer:
    """The current ROMDP, its values and the limits used to correct actions.

    Holds no model until the first rebuild, in which case `correct` is never called.
    """
    immediate_limit: float
    future_limit: float
    pso: PsoSection = field(default_factory=PsoSection)
    rng: RngLike = None
    model: Optional[RomdpModel] = None
    values: Optional[ReducedValueFunction] = None

    def __post_init__(self):
        self.rng = as_rng(self.rng)

    @property
    def ready(self) -> bool:
        return self.model is not None and self.values is not None

    def update_model(self, model: RomdpModel, values: ReducedValueFunction) -> None:
        self.model = model
        self.values = values

    def correct(self, state, action) -> Tuple[np.ndarray, CorrectionReport]:
        if not self.ready:
            raise RuntimeError("Safety layer has no ROMDP yet")
        problem = CorrectionProblem(state, action, self.model, self.values, self.immediate_limit,
                                    self.future_limit)
        return correct_action(problem, self.pso, self.rng)


def manage_dataset(dataset: Dataset, epoch_dataset: Dataset, sample: DataSample) -> Tuple[Dataset, Dataset]:
    """Append a sample to D and D^e; D evicts its oldest sample when full.

    D^e is only cleared at the end of an epoch, see `end_epoch`.
    """
    dataset.append(sample)
    epoch_dataset.append(sample)
    return dataset, epoch_dataset


def end_epoch(epoch_dataset: Dataset) -> None:
    epoch_dataset.clear()
