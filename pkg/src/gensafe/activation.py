"""Dynamic activation of the safety layer.

`update_activation` is the pure hysteresis rule: an active layer is switched
off once the monitored signal drops below the deactivate threshold and an
inactive layer is switched back on once the signal rises above the
reactivate threshold. `ActivationMachine` holds the current status with
named states and entry/exit callbacks.
"""
import logging
import threading
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Union

import numpy as np

from gensafe.config import ActivationSection
from gensafe.errors import NumericDomainError

logger = logging.getLogger(__name__)

ACTIVE = "active"
INACTIVE = "inactive"


@dataclass(frozen=True)
class ActivationState:
    active: bool
    deactivate_threshold: float
    reactivate_threshold: float
    last_loss: Optional[float] = None

    def __post_init__(self):
        if self.reactivate_threshold <= self.deactivate_threshold:
            raise ValueError(f"Reactivate threshold {self.reactivate_threshold} must exceed "
                             f"deactivate threshold {self.deactivate_threshold}")


def update_activation(state: ActivationState, loss: float) -> ActivationState:
    """Apply the hysteresis rule for one observed loss value.

    Raises:
        NumericDomainError: If the loss is NaN or infinite
    """
    if not np.isfinite(loss):
        raise NumericDomainError(f"Activation signal must be finite, got {loss}")
    active = state.active
    if active and loss < state.deactivate_threshold:
        active = False
    elif not active and loss > state.reactivate_threshold:
        active = True
    return replace(state, active=active, last_loss=float(loss))


class ActivationPhase:
    """A named status of the safety layer with entry and exit callbacks."""

    def __init__(self, name: str, machine: 'ActivationMachine'):
        self.name = name
        self.machine = machine
        self._entry_callbacks: List[Callable[[], None]] = []
        self._exit_callbacks: List[Callable[[], None]] = []

    def on_entry(self, func: Callable) -> Callable:
        """Decorator to register a function to be called when entering this phase."""
        self._entry_callbacks.append(func)
        return func

    def on_exit(self, func: Callable) -> Callable:
        """Decorator to register a function to be called when leaving this phase."""
        self._exit_callbacks.append(func)
        return func

    def enter(self):
        for callback in self._entry_callbacks:
            try:
                callback()
            except Exception as e:
                logger.error(f"Error in entry callback for phase {self.name}: {e}")

    def exit(self):
        for callback in self._exit_callbacks:
            try:
                callback()
            except Exception as e:
                logger.error(f"Error in exit callback for phase {self.name}: {e}")


class ActivationMachine:
    """Tracks whether the safety layer is active.

    The monitored signal is chosen by `config.signal`:
      - "vc_loss": the cost value head's fitting loss, with hysteresis
      - "episode_cost": the epoch's mean episode cost, with hysteresis
      - "epochs": switch off for good after `deactivate_after_epochs` epochs

    Example:
        machine = ActivationMachine(config.activation)

        @machine.phases["inactive"].on_entry
        def note():
            print("layer off")

        machine.observe(vc_loss=0.01, episode_cost=3.0, epoch=4)
    """

    def __init__(self, config: Optional[ActivationSection] = None, force_inactive: bool = False):
        self.config = config or ActivationSection()
        self.force_inactive = force_inactive
        self.phases: Dict[str, ActivationPhase] = {}
        self.current_phase: Optional[ActivationPhase] = None
        self.switches: List[str] = []
        self._lock = threading.Lock()
        self._state = ActivationState(not force_inactive, self.config.deactivate_threshold,
                                      self.config.reactivate_threshold)

        initial = INACTIVE if force_inactive else ACTIVE
        for name in (initial, ACTIVE if force_inactive else INACTIVE):
            self.add_phase(name)
        self.phases[INACTIVE].on_entry(lambda: logger.info("Deactivating safety layer"))
        self.phases[ACTIVE].on_entry(lambda: logger.info("Reactivating safety layer"))

    def add_phase(self, name: str) -> ActivationPhase:
        if name in self.phases:
            raise ValueError(f"Phase '{name}' already exists")
        phase = ActivationPhase(name, self)
        self.phases[name] = phase
        if self.current_phase is None:
            self.current_phase = phase
        return phase

    @property
    def state(self) -> ActivationState:
        return self._state

    @property
    def active(self) -> bool:
        with self._lock:
            return self.current_phase.name == ACTIVE

    def transition_to(self, target: Union[str, ActivationPhase]):
        if isinstance(target, ActivationPhase):
            target = target.name
        with self._lock:
            if target not in self.phases:
                raise ValueError(f"Phase '{target}' does not exist")
            target_phase = self.phases[target]
            if self.current_phase == target_phase:
                return
            logger.debug(f'Transitioning to phase "{target}"')
            self.current_phase.exit()
            self.current_phase = target_phase
            self.switches.append(target)
        target_phase.enter()

    def observe(self, vc_loss: Optional[float] = None, episode_cost: Optional[float] = None,
                epoch: Optional[int] = None) -> bool:
        """Feed one epoch's signals and return whether the layer is active afterwards."""
        if self.force_inactive:
            return False
        signal = self.config.signal
        if signal == "epochs":
            if epoch is None:
                raise ValueError("The 'epochs' activation signal needs the epoch number")
            active = self._state.active and epoch < self.config.deactivate_after_epochs
            self._state = replace(self._state, active=active)
        else:
            value = vc_loss if signal == "vc_loss" else episode_cost
            if value is None:
                raise ValueError(f"Activation signal '{signal}' was not provided")
            self._state = update_activation(self._state, value)
        self.transition_to(ACTIVE if self._state.active else INACTIVE)
        return self._state.active
