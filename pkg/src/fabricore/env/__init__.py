"""Simulator-agnostic MDP arithmetic: rewards, resets, sampling, noise,
domain randomization, depth augmentation, and the bin-packing state machine.

The toolkit consumes trajectories; it never produces object dynamics.
"""

from .binpack import (  # noqa: F401
    BinPackConfig,
    BinPackInputs,
    BinPackState,
    PHASES,
    bin_pack_state_machine,
)
from .depth import DepthAugConfig, apply_sticks, depth_augment  # noqa: F401
from .reward import (  # noqa: F401
    EpisodeState,
    RewardConfig,
    RewardObservation,
    check_reset,
    compute_reward,
    minimize_reward,
)
from .sampling import (  # noqa: F401
    DEFAULT_DR_TABLE,
    CorrelatedPoseNoise,
    InitialSample,
    InitialStateBounds,
    PoseNoiseConfig,
    WrenchConfig,
    apply_pose_noise,
    sample_correlated_pose_noise,
    sample_domain_randomization,
    sample_initial_state,
    sample_wrench,
)
