"""Bin-packing supervisor: the GRASP/TRANSPORT/RELEASE/RETURN cycle with a
fault-recovery interrupt.

While grasping, the policy's command passes through. Once the predicted
object height clears the lift threshold, the last issued PCA action is
frozen and the fabric is commanded to a pose over the bin; a finger-opening
PCA command releases the object, and a nominal command returns the robot.
A palm swinging too high signals policy collapse from any phase and forces
a timed recovery to the nominal pose before re-engaging.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..engine import ActionCommand
from ..errors import ConfigurationError

GRASP = "GRASP"
TRANSPORT = "TRANSPORT"
RELEASE = "RELEASE"
RETURN = "RETURN"
FAULT_RECOVER = "FAULT_RECOVER"
PHASES = (GRASP, TRANSPORT, RELEASE, RETURN, FAULT_RECOVER)


@dataclass
class BinPackConfig:
    z_lift_threshold: float = 0.25  # object height that triggers transport
    palm_fault_height: float = 0.8  # palm height indicating collapse
    transport_duration: float = 2.0
    release_duration: float = 0.5
    return_duration: float = 1.5
    fault_duration: float = 2.0
    bin_pos: np.ndarray = field(default_factory=lambda: np.array([0.3, -0.55, 0.45]))
    bin_rpy: np.ndarray = field(default_factory=lambda: np.zeros(3))
    release_pca: np.ndarray = field(default_factory=lambda: np.zeros(5))  # finger-opening command
    nominal_pos: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.0, 0.4]))
    nominal_rpy: np.ndarray = field(default_factory=lambda: np.zeros(3))
    nominal_pca: np.ndarray = field(default_factory=lambda: np.zeros(5))

    def __post_init__(self):
        for name in ("transport_duration", "release_duration", "return_duration", "fault_duration"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be > 0")


@dataclass
class BinPackInputs:
    object_height: float  # ẑ from the object-position prediction
    palm_height: float
    time: float  # seconds, monotonically increasing


@dataclass
class BinPackState:
    phase: str = GRASP
    phase_start: float = 0.0
    frozen_pca: np.ndarray | None = None


def _enter(state: BinPackState, phase: str, now: float):
    state.phase = phase
    state.phase_start = now


def bin_pack_state_machine(
    inputs: BinPackInputs,
    state: BinPackState,
    cfg: BinPackConfig,
    policy_action: ActionCommand | None = None,
) -> tuple[BinPackState, ActionCommand | None]:
    """Advance one tick; returns (state, command override).

    In GRASP the override is None (the policy's own action drives the
    fabric); every other phase emits an explicit ActionCommand.
    """
    now = inputs.time

    def elapsed() -> float:
        return now - state.phase_start

    if state.phase != FAULT_RECOVER and inputs.palm_height > cfg.palm_fault_height:
        _enter(state, FAULT_RECOVER, now)

    if state.phase == GRASP:
        if inputs.object_height > cfg.z_lift_threshold:
            if policy_action is None:
                raise ConfigurationError("transport transition needs the policy action to freeze")
            state.frozen_pca = policy_action.pca.copy()
            _enter(state, TRANSPORT, now)
        else:
            return state, None

    if state.phase == TRANSPORT:
        if elapsed() >= cfg.transport_duration:
            _enter(state, RELEASE, now)
        else:
            return state, ActionCommand(cfg.bin_pos, cfg.bin_rpy, state.frozen_pca)

    if state.phase == RELEASE:
        if elapsed() >= cfg.release_duration:
            _enter(state, RETURN, now)
        else:
            return state, ActionCommand(cfg.bin_pos, cfg.bin_rpy, cfg.release_pca)

    if state.phase == RETURN:
        if elapsed() >= cfg.return_duration:
            _enter(state, GRASP, now)
            return state, None
        return state, ActionCommand(cfg.nominal_pos, cfg.nominal_rpy, cfg.nominal_pca)

    # FAULT_RECOVER: hold the nominal command, then re-engage grasping
    if elapsed() >= cfg.fault_duration:
        _enter(state, GRASP, now)
        return state, None
    return state, ActionCommand(cfg.nominal_pos, cfg.nominal_rpy, cfg.nominal_pca)
