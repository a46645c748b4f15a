"""Scenario files: one JSON document wiring a robot model, world primitives,
fabric gains, engine parameters, and an action source into a reproducible
experiment. Unknown keys are rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .collision import BoxObstacle, CollisionWorld, HalfspaceObstacle, SphereObstacle
from .engine import (
    MODE_CSPACE,
    MODE_PCA_POSE,
    ActionBounds,
    ActionCommand,
    CspaceTarget,
    EngineConfig,
    FabricEngine,
    RandomActionSource,
    ScriptedActionSource,
)
from .errors import ConfigurationError
from .kinematics import KinematicModel, load_model
from .retarget import PcaBasis
from .terms import AttractionConfig, CollisionTermConfig, JointLimitConfig

_VEC3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_NUM_ARRAY = {"type": "array", "items": {"type": "number"}, "minItems": 1}

_OBSTACLE_SCHEMA = {
    "oneOf": [
        {
            "type": "object",
            "properties": {"kind": {"const": "box"}, "center": _VEC3, "half_extents": _VEC3, "rpy": _VEC3},
            "required": ["kind", "center", "half_extents"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"kind": {"const": "sphere"}, "center": _VEC3, "radius": {"type": "number"}},
            "required": ["kind", "center", "radius"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"kind": {"const": "halfspace"}, "point": _VEC3, "normal": _VEC3},
            "required": ["kind", "point", "normal"],
            "additionalProperties": False,
        },
    ]
}

_GAIN_SCHEMAS = {
    "collision": {
        "type": "object",
        "properties": {k: {"type": "number"} for k in ("k_g", "k_f", "b", "beta", "alpha1", "alpha2", "d_cutoff")},
        "additionalProperties": False,
    },
    "attraction": {
        "type": "object",
        "properties": {k: {"type": "number"} for k in ("m", "k_a", "alpha_a", "b")},
        "additionalProperties": False,
    },
    "joint_limit": {
        "type": "object",
        "properties": {"k_b": {"type": "number"}, "b": {"type": "number"}, "g": {"oneOf": [{"type": "number"}, _NUM_ARRAY]}},
        "additionalProperties": False,
    },
}

_ACTION_ENTRY = {
    "oneOf": [
        {
            "type": "object",
            "properties": {"palm_pos": _VEC3, "palm_rpy": _VEC3, "pca": {"type": "array", "items": {"type": "number"}, "minItems": 5, "maxItems": 5}},
            "required": ["palm_pos", "palm_rpy", "pca"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"q_target": _NUM_ARRAY},
            "required": ["q_target"],
            "additionalProperties": False,
        },
    ]
}

SCENARIO_SCHEMA = {
    "type": "object",
    "properties": {
        "robot": {"type": "string"},
        "world": {
            "type": "object",
            "properties": {
                "d_min": {"type": "number"},
                "obstacles": {"type": "array", "items": _OBSTACLE_SCHEMA},
            },
            "additionalProperties": False,
        },
        "fabric": {
            "type": "object",
            "properties": {
                "mode": {"enum": [MODE_PCA_POSE, MODE_CSPACE]},
                "palm_frame": {"type": "string"},
                "pca_basis": {"type": "string"},
                "hand_offset": {"type": "integer"},
                "posture_target": _NUM_ARRAY,
                "self_pairs": {
                    "type": "array",
                    "items": {"type": "array", "items": {"type": "string"}, "minItems": 2, "maxItems": 2},
                },
                "cspace_damping": {"type": "number"},
                "terms": {
                    "type": "object",
                    "properties": {
                        "collision": _GAIN_SCHEMAS["collision"],
                        "pca_attraction": _GAIN_SCHEMAS["attraction"],
                        "pose_attraction": _GAIN_SCHEMAS["attraction"],
                        "posture": _GAIN_SCHEMAS["attraction"],
                        "cspace_attraction": _GAIN_SCHEMAS["attraction"],
                        "joint_limit": _GAIN_SCHEMAS["joint_limit"],
                    },
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "engine": {
            "type": "object",
            "properties": {
                "dt": {"type": "number"},
                "action_repeat": {"type": "integer"},
                "lambda_reg": {"type": "number"},
            },
            "additionalProperties": False,
        },
        "initial_state": {
            "type": "object",
            "properties": {"q": _NUM_ARRAY, "qd": _NUM_ARRAY},
            "additionalProperties": False,
        },
        "actions": {
            "type": "object",
            "properties": {
                "script": {"type": "array", "items": _ACTION_ENTRY, "minItems": 1},
                "random": {
                    "type": "object",
                    "properties": {
                        "palm_pos_low": _VEC3,
                        "palm_pos_high": _VEC3,
                        "palm_rpy_low": _VEC3,
                        "palm_rpy_high": _VEC3,
                        "pca_low": {"type": "number"},
                        "pca_high": {"type": "number"},
                        "q_scale": {"type": "number"},
                    },
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "steps": {"type": "integer", "minimum": 1},
        "outputs": {
            "type": "object",
            "properties": {"trajectory_csv": {"type": "string"}, "summary_json": {"type": "string"}},
            "additionalProperties": False,
        },
    },
    "required": ["robot", "fabric"],
    "additionalProperties": False,
}


def data_path(relative: str) -> Path:
    """Path to a bundled data file (robots/, scenarios/, hand/, traces/)."""
    root = resources.files("fabricore") / "data"
    return Path(str(root / relative))


def _resolve_path(ref: str, base: Path | None) -> Path:
    p = Path(ref)
    if p.is_absolute() and p.exists():
        return p
    if base is not None and (base / p).exists():
        return base / p
    bundled = data_path(ref)
    if bundled.exists():
        return bundled
    raise ConfigurationError(f"cannot resolve path {ref!r}")


def _build_obstacle(doc: dict):
    kind = doc["kind"]
    if kind == "box":
        return BoxObstacle(
            np.asarray(doc["center"], float),
            np.asarray(doc["half_extents"], float),
            np.asarray(doc.get("rpy", [0, 0, 0]), float),
        )
    if kind == "sphere":
        return SphereObstacle(np.asarray(doc["center"], float), float(doc["radius"]))
    return HalfspaceObstacle(np.asarray(doc["point"], float), np.asarray(doc["normal"], float))


@dataclass
class Scenario:
    model: KinematicModel
    world: CollisionWorld
    engine_config: EngineConfig
    initial_q: np.ndarray | None
    initial_qd: np.ndarray | None
    actions_doc: dict
    steps: int
    outputs: dict
    source_path: Path | None

    def build_engine(self) -> FabricEngine:
        return FabricEngine(self.model, self.world, self.engine_config)

    def initial_state(self, engine: FabricEngine):
        return engine.initial_state(self.initial_q, self.initial_qd)

    def action_source(self, seed: int):
        """Scripted sources ignore the seed; random sources are seeded."""
        if "script" in self.actions_doc:
            entries = []
            for e in self.actions_doc["script"]:
                if "q_target" in e:
                    entries.append(CspaceTarget(np.asarray(e["q_target"], float)))
                else:
                    entries.append(ActionCommand(e["palm_pos"], e["palm_rpy"], e["pca"]))
            return ScriptedActionSource(entries)
        rnd = self.actions_doc.get("random", {})
        if self.engine_config.mode == MODE_CSPACE:
            source = RandomActionSource(seed, mode=MODE_CSPACE, n=self.model.dof_count)
            scale = rnd.get("q_scale")
            if scale is not None:
                lo = self.model.lower_limits
                hi = self.model.upper_limits
                rng = source.rng

                def sample(_state):
                    mid = 0.5 * (lo + hi)
                    half = 0.5 * (hi - lo) * scale
                    return CspaceTarget(rng.uniform(mid - half, mid + half))

                return sample
            return source
        bounds = ActionBounds()
        for name in ("palm_pos_low", "palm_pos_high", "palm_rpy_low", "palm_rpy_high"):
            if name in rnd:
                setattr(bounds, name, np.asarray(rnd[name], float))
        if "pca_low" in rnd:
            bounds.pca_low = np.full(5, float(rnd["pca_low"]))
        if "pca_high" in rnd:
            bounds.pca_high = np.full(5, float(rnd["pca_high"]))
        return RandomActionSource(seed, bounds)


def scenario_from_dict(doc: dict, base: Path | None = None) -> Scenario:
    try:
        jsonschema.validate(doc, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigurationError(f"scenario schema violation: {exc.message}") from exc

    model = load_model(_resolve_path(doc["robot"], base))
    world_doc = doc.get("world", {})
    world = CollisionWorld(
        [_build_obstacle(o) for o in world_doc.get("obstacles", [])],
        d_min=world_doc.get("d_min", 0.015),
    )

    fab = doc["fabric"]
    terms_doc = fab.get("terms", {})
    col_doc = dict(terms_doc.get("collision", {}))
    col_doc["d_min"] = world.d_min
    jl_doc = dict(terms_doc.get("joint_limit", {}))

    def attraction(name, default_ka):
        params = dict(terms_doc.get(name, {}))
        params.setdefault("k_a", default_ka)
        return AttractionConfig(**params)

    mode = fab.get("mode", MODE_PCA_POSE)
    pca_components = None
    if mode == MODE_PCA_POSE:
        if "pca_basis" not in fab:
            raise ConfigurationError("pca_pose scenarios need fabric.pca_basis")
        basis = PcaBasis.load(_resolve_path(fab["pca_basis"], base))
        pca_components = basis.components

    engine_doc = doc.get("engine", {})
    config = EngineConfig(
        dt=engine_doc.get("dt", 1.0 / 60.0),
        action_repeat=engine_doc.get("action_repeat", 4),
        lambda_reg=engine_doc.get("lambda_reg", 1e-6),
        mode=mode,
        collision=CollisionTermConfig(**col_doc),
        pca_attraction=attraction("pca_attraction", 40.0),
        pose_attraction=attraction("pose_attraction", 40.0),
        posture=attraction("posture", 1.0),
        cspace_attraction=attraction("cspace_attraction", 40.0),
        joint_limit=JointLimitConfig(**jl_doc),
        cspace_damping=fab.get("cspace_damping", 2.0),
        palm_frame=fab.get("palm_frame"),
        pca_components=pca_components,
        hand_offset=fab.get("hand_offset", 7),
        posture_target=np.asarray(fab["posture_target"], float) if "posture_target" in fab else None,
        self_pairs=tuple(tuple(p) for p in fab.get("self_pairs", [])),
    )

    init = doc.get("initial_state", {})
    outputs = doc.get("outputs", {})
    outputs.setdefault("trajectory_csv", "trajectory.csv")
    outputs.setdefault("summary_json", "summary.json")
    return Scenario(
        model=model,
        world=world,
        engine_config=config,
        initial_q=np.asarray(init["q"], float) if "q" in init else None,
        initial_qd=np.asarray(init["qd"], float) if "qd" in init else None,
        actions_doc=doc.get("actions", {"random": {}}),
        steps=doc.get("steps", 300),
        outputs=outputs,
        source_path=base,
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"scenario {path} is not valid JSON: {exc}") from exc
    return scenario_from_dict(doc, base=path.parent)
