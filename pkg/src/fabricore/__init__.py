"""Geometric-fabric motion generation with an eigengrasp action space and
RL-environment tooling, verifiable at desk scale without a simulator."""

from .collision import (  # noqa: F401
    BoxObstacle,
    CollisionWorld,
    DistanceQuery,
    HalfspaceObstacle,
    SphereObstacle,
    query_all,
    signed_distance,
)
from .engine import (  # noqa: F401
    ActionCommand,
    CspaceTarget,
    EngineConfig,
    FabricEngine,
    FabricState,
    Trajectory,
    effective_accel_limits,
    limit_accel_jerk,
    pullback_resolve,
)
from .errors import (  # noqa: F401
    BatchEngineFault,
    ConfigurationError,
    EngineFault,
    OptimizationError,
    SamplingError,
)
from .kinematics import (  # noqa: F401
    JointState,
    KinematicModel,
    curvature_term,
    forward_points,
    jacobian,
    load_model,
)
from .retarget import PcaBasis, fit_pca, retarget_trace, saturate  # noqa: F401
from .scenario import Scenario, data_path, load_scenario  # noqa: F401
from .terms import (  # noqa: F401
    AttractionConfig,
    CollisionTermConfig,
    FabricTermOutput,
    JointLimitConfig,
    attraction_forced,
    attraction_geometric_hd2,
    collision_forcing,
    collision_geometric,
    cspace_damping,
    joint_limit_repulsion,
)

__version__ = "0.1.0"
