import logging
from unittest.mock import Mock

import pytest

from gensafe.activation import ACTIVE, INACTIVE, ActivationMachine, ActivationState, update_activation
from gensafe.config import ActivationSection
from gensafe.errors import NumericDomainError


def state(active=True, deactivate=0.05, reactivate=0.15):
    return ActivationState(active, deactivate, reactivate)


class TestUpdateActivation:

    def test_deactivates_below_threshold(self):
        """Test that an active layer switches off below the deactivate threshold."""
        assert not update_activation(state(True), 0.04).active

    def test_stays_active_inside_band(self):
        """Test that values between the thresholds do not switch an active layer off."""
        assert update_activation(state(True), 0.1).active
        assert update_activation(state(True), 0.05).active

    def test_reactivates_above_threshold(self):
        """Test that an inactive layer switches back on above the reactivate threshold."""
        assert update_activation(state(False), 0.2).active

    def test_stays_inactive_inside_band(self):
        """Test that values between the thresholds do not switch an inactive layer on."""
        assert not update_activation(state(False), 0.1).active
        assert not update_activation(state(False), 0.15).active

    def test_records_last_loss(self):
        """Test that the observed value is kept."""
        assert update_activation(state(), 0.3).last_loss == 0.3

    def test_scripted_sequence(self):
        """Test a loss trace that switches off once and never back on."""
        current = state(True)
        history = []
        for loss in (0.5, 0.3, 0.1, 0.06, 0.04, 0.08, 0.12, 0.02):
            current = update_activation(current, loss)
            history.append(current.active)
        assert history == [True, True, True, True, False, False, False, False]

    def test_non_finite_loss(self):
        """Test that NaN and infinite losses are rejected."""
        for loss in (float("nan"), float("inf")):
            with pytest.raises(NumericDomainError):
                update_activation(state(), loss)

    def test_thresholds_must_be_ordered(self):
        """Test that the reactivate threshold must exceed the deactivate threshold."""
        with pytest.raises(ValueError, match="must exceed"):
            state(deactivate=0.2, reactivate=0.1)


class TestActivationMachine:

    def test_starts_active(self):
        """Test the initial phase."""
        machine = ActivationMachine()
        assert machine.active
        assert machine.current_phase.name == ACTIVE
        assert set(machine.phases) == {ACTIVE, INACTIVE}

    def test_observe_switches_and_logs(self, caplog):
        """Test that switching off and on runs the entry callbacks and logs the switch."""
        machine = ActivationMachine(ActivationSection(signal="vc_loss"))
        with caplog.at_level(logging.INFO, logger="gensafe.activation"):
            assert machine.observe(vc_loss=0.5) is True
            assert machine.observe(vc_loss=0.01) is False
            assert machine.observe(vc_loss=0.2) is True
        messages = [r.getMessage() for r in caplog.records]
        assert messages == ["Deactivating safety layer", "Reactivating safety layer"]
        assert machine.switches == [INACTIVE, ACTIVE]

    def test_user_callbacks(self):
        """Test that callbacks registered on the phases are called on transitions."""
        machine = ActivationMachine()
        entered, left = Mock(), Mock()
        machine.phases[INACTIVE].on_entry(entered)
        machine.phases[ACTIVE].on_exit(left)
        machine.observe(vc_loss=0.0)
        entered.assert_called_once()
        left.assert_called_once()

    def test_failing_callback_is_logged(self, caplog):
        """Test that an exception in a callback does not break the transition."""
        machine = ActivationMachine()

        @machine.phases[INACTIVE].on_entry
        def broken():
            raise RuntimeError("boom")

        machine.observe(vc_loss=0.0)
        assert not machine.active
        assert "Error in entry callback for phase inactive: boom" in caplog.text

    def test_episode_cost_signal(self):
        """Test that the episode cost can drive the hysteresis instead of the loss."""
        machine = ActivationMachine(ActivationSection(signal="episode_cost", deactivate_threshold=1.0,
                                                      reactivate_threshold=5.0))
        assert machine.observe(vc_loss=0.0, episode_cost=3.0) is True
        assert machine.observe(vc_loss=9.0, episode_cost=0.5) is False
        assert machine.observe(episode_cost=6.0) is True

    def test_epochs_signal(self):
        """Test the fixed schedule: active for the first epochs, then off for good."""
        machine = ActivationMachine(ActivationSection(signal="epochs", deactivate_after_epochs=3))
        assert [machine.observe(epoch=e) for e in (1, 2, 3, 4, 5)] == [True, True, False, False, False]

    def test_missing_signal(self):
        """Test that the monitored signal must be provided."""
        machine = ActivationMachine(ActivationSection(signal="episode_cost"))
        with pytest.raises(ValueError, match="'episode_cost' was not provided"):
            machine.observe(vc_loss=0.1)

    def test_force_inactive(self):
        """Test that a forced-off layer never switches on."""
        machine = ActivationMachine(force_inactive=True)
        assert not machine.active
        assert machine.observe(vc_loss=10.0) is False
        assert machine.switches == []

    def test_duplicate_phase(self):
        """Test that adding a duplicate phase raises error."""
        machine = ActivationMachine()
        with pytest.raises(ValueError, match="Phase 'active' already exists"):
            machine.add_phase(ACTIVE)

    def test_unknown_phase(self):
        """Test that transitioning to an unknown phase raises error."""
        machine = ActivationMachine()
        with pytest.raises(ValueError, match="Phase 'paused' does not exist"):
            machine.transition_to("paused")

    def test_same_phase_transition(self):
        """Test that staying in the same phase runs no callbacks."""
        machine = ActivationMachine()
        machine.phases[ACTIVE].enter = Mock()
        machine.phases[ACTIVE].exit = Mock()
        machine.transition_to(ACTIVE)
        machine.phases[ACTIVE].enter.assert_not_called()
        machine.phases[ACTIVE].exit.assert_not_called()
