"""Stateful grasping reward and reset predicate.

Every term is non-negative. Distance-style terms pay out only when the
error drops below its episode-historical minimum, so idling earns nothing
and each term's cumulative total is bounded by its initial error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError


@dataclass
class RewardConfig:
    w_to_obj: float = 5.0
    w_lift: float = 50.0
    w_lifted: float = 50.0
    w_to_goal: float = 1000.0
    w_reached: float = 40.0
    w_success: float = 100.0
    z_lifted_offset: float = 0.2  # m above the table counts as lifted
    d_success: float = 0.1  # m
    t_success: int = 15  # consecutive reached steps
    t_max: int = 150  # episode step budget (15 Hz steps)
    fingertip_aggregate: str = "mean"  #: mean | max | sum over the 4 tips

    def __post_init__(self):
        for name in ("w_to_obj", "w_lift", "w_lifted", "w_to_goal", "w_reached", "w_success"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if self.d_success <= 0 or self.t_success <= 0 or self.t_max <= 0:
            raise ConfigurationError("thresholds must be > 0")
        if self.fingertip_aggregate not in ("mean", "max", "sum"):
            raise ConfigurationError("fingertip_aggregate must be mean, max, or sum")


@dataclass
class RewardObservation:
    fingertips: np.ndarray  # (4, 3) m
    object_pos: np.ndarray  # (3,) m
    goal_pos: np.ndarray  # (3,) m
    z_table: float

    def __post_init__(self):
        self.fingertips = np.asarray(self.fingertips, dtype=np.float64).reshape(4, 3)
        self.object_pos = np.asarray(self.object_pos, dtype=np.float64)
        self.goal_pos = np.asarray(self.goal_pos, dtype=np.float64)


@dataclass
class EpisodeState:
    """Per-episode reward bookkeeping; e_smallest values never increase."""

    to_obj_smallest: float | None = None
    lift_smallest: float | None = None
    to_goal_smallest: float | None = None
    lifted: bool = False
    lifted_rewarded: bool = False
    consecutive_reached: int = 0
    t: int = 0
    success: bool = False
    done: bool = False
    last_breakdown: dict = field(default_factory=dict)


def minimize_reward(e: float, smallest: float | None) -> tuple[float, float]:
    """r = max(e_smallest − e, 0); the running minimum then absorbs e.

    `smallest=None` means first observation: it initializes to e (reward 0).
    """
    if not np.isfinite(e):
        raise ConfigurationError("error term must be finite")
    if smallest is None:
        smallest = float(e)
    r = max(smallest - e, 0.0)
    return r, min(smallest, float(e))


def _fingertip_error(obs: RewardObservation, cfg: RewardConfig) -> float:
    d = np.linalg.norm(obs.fingertips - obs.object_pos, axis=1)
    if cfg.fingertip_aggregate == "max":
        return float(d.max())
    if cfg.fingertip_aggregate == "sum":
        return float(d.sum())
    return float(d.mean())


def compute_reward(
    obs: RewardObservation, state: EpisodeState, cfg: RewardConfig
) -> tuple[float, EpisodeState]:
    """One reward step: r = Σ wᵢ rᵢ with lift gating and one-shot bonuses.

    Mutates and returns `state`; the per-term weighted breakdown lands in
    `state.last_breakdown` for audits.
    """
    state.t += 1
    z_lifted = obs.z_table + cfg.z_lifted_offset
    lifted_now = float(obs.object_pos[2]) > z_lifted

    r_to_obj, state.to_obj_smallest = minimize_reward(
        _fingertip_error(obs, cfg), state.to_obj_smallest
    )

    lift_err = z_lifted - float(obs.object_pos[2])
    r_lift_raw, state.lift_smallest = minimize_reward(lift_err, state.lift_smallest)
    r_lift = r_lift_raw * (0.0 if lifted_now else 1.0)

    r_lifted = 0.0
    if lifted_now and not state.lifted_rewarded:
        r_lifted = 1.0
        state.lifted_rewarded = True
    state.lifted = state.lifted or lifted_now

    goal_err = float(np.linalg.norm(obs.goal_pos - obs.object_pos))
    r_to_goal_raw, state.to_goal_smallest = minimize_reward(goal_err, state.to_goal_smallest)
    r_to_goal = r_to_goal_raw * (1.0 if lifted_now else 0.0)

    reached = goal_err < cfg.d_success
    r_reached = 1.0 if reached else 0.0
    state.consecutive_reached = state.consecutive_reached + 1 if reached else 0

    r_success = 0.0
    if state.consecutive_reached == cfg.t_success and not state.success:
        r_success = float(cfg.t_max - state.t)
        state.success = True

    breakdown = {
        "to_obj": cfg.w_to_obj * r_to_obj,
        "lift": cfg.w_lift * r_lift,
        "lifted": cfg.w_lifted * r_lifted,
        "to_goal": cfg.w_to_goal * r_to_goal,
        "reached": cfg.w_reached * r_reached,
        "success": cfg.w_success * r_success,
    }
    state.last_breakdown = breakdown
    return float(sum(breakdown.values())), state


def check_reset(obs: RewardObservation, state: EpisodeState, cfg: RewardConfig) -> bool:
    """reset = any(object below table, success granted, time limit hit)."""
    return bool(
        float(obs.object_pos[2]) < obs.z_table or state.success or state.t > cfg.t_max
    )
