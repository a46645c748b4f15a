"""Flat-array surface over the fabric engine for external training loops.

Five calls: create a handle from a scenario file, push batch×11 actions at
the policy rate, step the 60 Hz engine (substeps = action repeat), read the
fabric state back as one batch×3n array, and close.

Buffer contract: the handle owns exactly two per-step buffers. set_actions
copies the incoming array into the action buffer (one copy per policy
step); read_state fills and returns the same state buffer every call, so
callers that need a snapshot across steps must copy it themselves. No other
per-step copies are made and no object graph crosses the boundary.

Results are numerically identical to native CLI rollouts driven by the same
action sequence: stepping goes through the same engine kernels.
"""

from __future__ import annotations

import numpy as np

from fabricore.engine import ActionCommand
from fabricore.errors import ConfigurationError
from fabricore.scenario import load_scenario

__version__ = "0.1.0"

ACTION_DIM = 11


class ClosedHandleError(RuntimeError):
    """Operation on a closed engine handle."""


class EngineHandle:
    """Engine plus a batch of fabric states; create via `create()`."""

    def __init__(self, scenario_path, batch: int):
        if batch < 1:
            raise ConfigurationError("batch must be >= 1")
        scenario = load_scenario(scenario_path)
        if scenario.engine_config.mode != "pca_pose":
            raise ConfigurationError("bindings expose the 11-D action space (pca_pose scenarios)")
        self._engine = scenario.build_engine()
        self._states = [scenario.initial_state(self._engine) for _ in range(batch)]
        self.batch = batch
        self.dof_count = self._engine.dof_count
        self._actions: list[ActionCommand] | None = None
        self._action_buffer = np.zeros((batch, ACTION_DIM))
        self._state_buffer = np.zeros((batch, 3 * self.dof_count))
        self._closed = False

    def _check_open(self):
        if self._closed:
            raise ClosedHandleError("engine handle is closed")


def create(scenario_path, batch: int = 1) -> EngineHandle:
    """Build an engine from a scenario file and a batch of initial states."""
    return EngineHandle(scenario_path, batch)


def set_actions(handle: EngineHandle, actions) -> None:
    """Stage one 11-D action per batch element; shape must be (batch, 11).

    On a shape error the staged actions and states are left unchanged.
    """
    handle._check_open()
    arr = np.asarray(actions, dtype=np.float64)
    if arr.shape != (handle.batch, ACTION_DIM):
        raise ConfigurationError(
            f"actions must have shape ({handle.batch}, {ACTION_DIM}), got {arr.shape}"
        )
    if not np.isfinite(arr).all():
        raise ConfigurationError("actions must be finite")
    np.copyto(handle._action_buffer, arr)
    handle._actions = [ActionCommand.from_array(row) for row in handle._action_buffer]


def step(handle: EngineHandle, substeps: int = 4) -> None:
    """Advance every batch element `substeps` 60 Hz engine steps.

    Actions staged by the last set_actions are held for all substeps (the
    policy-rate action repeat).
    """
    handle._check_open()
    if substeps < 1:
        raise ConfigurationError("substeps must be >= 1")
    if handle._actions is None:
        raise ConfigurationError("set_actions must be called before step")
    for _ in range(substeps):
        handle._states = handle._engine.step_batch(handle._states, handle._actions)


def read_state(handle: EngineHandle) -> np.ndarray:
    """Fabric state as (batch, 3n): q_f, q̇_f, q̈_f concatenated per row.

    Returns the handle's reused state buffer (see the buffer contract).
    """
    handle._check_open()
    n = handle.dof_count
    buf = handle._state_buffer
    for i, state in enumerate(handle._states):
        buf[i, 0:n] = state.q
        buf[i, n : 2 * n] = state.qd
        buf[i, 2 * n : 3 * n] = state.qdd
    return buf


def close(handle: EngineHandle) -> None:
    """Release the handle; idempotent. Further calls on it raise."""
    if handle._closed:
        return
    handle._closed = True
    handle._states = []
    handle._actions = None
