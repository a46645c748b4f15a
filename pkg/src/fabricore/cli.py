"""Command-line entry point wiring the modules into reproducible experiments.

Subcommands: rollout, bench, retarget, fit-pca, env-audit, gen-traces.
Exit codes: 0 ok, 2 configuration error, 3 runtime fault. The FABRICORE_LOG
environment variable sets the logging level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import retarget as rt
from .engine import Trajectory
from .env.reward import EpisodeState, RewardConfig, RewardObservation, check_reset, compute_reward
from .errors import ConfigurationError, EngineFault
from .kinematics import load_model
from .scenario import Scenario, load_scenario

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def run_rollout(scenario: Scenario, seed: int, steps: int | None, out_dir: Path, plot: bool = False) -> dict:
    engine = scenario.build_engine()
    state = scenario.initial_state(engine)
    source = scenario.action_source(seed)
    n_steps = steps if steps is not None else scenario.steps
    traj = engine.run_policy_rate(state, source, n_steps)

    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / scenario.outputs["trajectory_csv"]
    traj.write_csv(csv_path)
    arrays = traj.to_arrays()
    lower = engine.model.lower_limits
    upper = engine.model.upper_limits
    violations = int(
        ((arrays["q"] < lower - 1e-6) | (arrays["q"] > upper + 1e-6)).sum()
    )
    summary = {
        "seed": seed,
        "steps": traj.n_steps,
        "min_dist": traj.summary()["min_dist"],
        "limit_violations": violations,
        "clamp_count": traj.summary()["clamp_count"],
        "max_alpha": traj.summary()["max_alpha"],
        "trajectory_csv": str(csv_path),
    }
    with open(out_dir / scenario.outputs["summary_json"], "w") as f:
        json.dump(summary, f, indent=1)
    if plot:
        _plot_trajectory(traj, out_dir / "trajectory.svg")
    return summary


def _plot_trajectory(traj: Trajectory, path: Path):
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    arrays = traj.to_arrays()
    fig, ax = plt.subplots(figsize=(8, 4))
    for j in range(arrays["q"].shape[1]):
        ax.plot(arrays["t"], arrays["q"][:, j], lw=0.8)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("q [rad]")
    ax.set_title("joint position targets")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def run_bench(scenario: Scenario, batch_sizes, duration: float, seed: int) -> dict:
    engine = scenario.build_engine()
    rng = np.random.default_rng(seed)
    base = scenario.initial_state(engine)
    report = {
        "dofs": engine.dof_count,
        "spheres": len(engine.model.collision_spheres),
        "obstacles": len(engine.world),
        "machine": {
            "platform": platform.platform(),
            "python": sys.version.split()[0],
            "processor": platform.processor() or "unknown",
        },
        "batches": [],
    }
    for batch in batch_sizes:
        states = []
        for _ in range(batch):
            jitter = 0.02 * rng.standard_normal(engine.dof_count)
            q = np.clip(base.q + jitter, engine.model.lower_limits, engine.model.upper_limits)
            states.append(engine.initial_state(q))
        source = scenario.action_source(seed)
        action = source(states[0])
        actions = [action] * batch
        # settle the transient so the figure reflects the steady loop rate
        for _ in range(30):
            states = engine.step_batch(states, actions)
        steps_done = 0
        t0 = time.perf_counter()
        while time.perf_counter() - t0 < duration:
            states = engine.step_batch(states, actions)
            steps_done += batch
        elapsed = time.perf_counter() - t0
        report["batches"].append(
            {"batch": batch, "fabric_steps_per_s": steps_done / elapsed, "steps": steps_done}
        )
    return report


AUDIT_COLUMNS = (
    ["t", "obj_x", "obj_y", "obj_z", "goal_x", "goal_y", "goal_z", "z_table"]
    + [f"ft{i}_{c}" for i in range(4) for c in ("x", "y", "z")]
)


def run_env_audit(trajectory_csv: Path, cfg: RewardConfig) -> dict:
    with open(trajectory_csv) as f:
        header = f.readline().strip().split(",")
        if header != AUDIT_COLUMNS:
            raise ConfigurationError(
                f"audit CSV header must be {','.join(AUDIT_COLUMNS)}"
            )
        rows = [np.array([float(v) for v in line.split(",")]) for line in f if line.strip()]
    state = EpisodeState()
    totals = {k: 0.0 for k in ("to_obj", "lift", "lifted", "to_goal", "reached", "success")}
    total = 0.0
    reset_step = None
    for row in rows:
        obs = RewardObservation(
            fingertips=row[8:20].reshape(4, 3),
            object_pos=row[1:4],
            goal_pos=row[4:7],
            z_table=row[7],
        )
        r, state = compute_reward(obs, state, cfg)
        total += r
        for k, v in state.last_breakdown.items():
            totals[k] += v
        if reset_step is None and check_reset(obs, state, cfg):
            reset_step = state.t
            break
    return {
        "steps": state.t,
        "totals": totals,
        "total_reward": total,
        "success": state.success,
        "reset_step": reset_step,
    }


def _add_common(parser):
    parser.add_argument("--seed", type=int, default=0, help="run seed (default 0)")
    parser.add_argument("--out", type=Path, default=Path("out"), help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fabricore")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rollout", help="run a scenario and write trajectory CSV + summary JSON")
    p.add_argument("--scenario", type=Path, required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--plot", action="store_true", help="also write an SVG of the joint targets")
    _add_common(p)

    p = sub.add_parser("bench", help="fabric stepping throughput per batch size")
    p.add_argument("--scenario", type=Path, required=True)
    p.add_argument("--batch", type=str, default="1,64,1024", help="comma-separated batch sizes")
    p.add_argument("--duration", type=float, default=2.0, help="seconds per batch size")
    _add_common(p)

    p = sub.add_parser("retarget", help="retarget fingertip traces to hand joint trajectories")
    p.add_argument("--traces", type=Path, required=True)
    p.add_argument("--hand", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output dataset CSV")

    p = sub.add_parser("fit-pca", help="fit the eigengrasp basis from a joint dataset")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--out", type=Path, required=True, help="output basis JSON")

    p = sub.add_parser("env-audit", help="replay a trajectory CSV through the reward ledger")
    p.add_argument("--trajectory", type=Path, required=True)
    p.add_argument("--config", type=Path, default=None, help="reward config JSON overrides")
    p.add_argument("--out", type=Path, default=None, help="optional JSON report path")

    p = sub.add_parser("gen-traces", help="generate synthetic fingertip traces")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--traces", type=int, default=12)
    p.add_argument("--points", type=int, default=16)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("FABRICORE_LOG", "WARNING").upper())
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EngineFault, OSError) as exc:
        print(f"runtime fault: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def _dispatch(args) -> int:
    if args.command == "rollout":
        scenario = load_scenario(args.scenario)
        summary = run_rollout(scenario, args.seed, args.steps, args.out, plot=args.plot)
        print(json.dumps(summary, indent=1))
        return EXIT_OK

    if args.command == "bench":
        scenario = load_scenario(args.scenario)
        try:
            batches = [int(b) for b in args.batch.split(",") if b]
        except ValueError as exc:
            raise ConfigurationError(f"bad --batch list {args.batch!r}") from exc
        report = run_bench(scenario, batches, args.duration, args.seed)
        print(json.dumps(report, indent=1))
        return EXIT_OK

    if args.command == "retarget":
        hand = load_model(args.hand)
        traces = rt.load_traces(args.traces)
        rows = [rt.retarget_trace(trace, hand) for trace in traces]
        rt.save_dataset(np.vstack(rows), args.out)
        print(f"wrote {args.out} ({sum(r.shape[0] for r in rows)} rows)")
        return EXIT_OK

    if args.command == "fit-pca":
        dataset = rt.load_dataset(args.dataset)
        basis = rt.fit_pca(dataset, k=args.k)
        basis.save(args.out)
        print(
            f"wrote {args.out} (k={args.k}, explained variance "
            f"{basis.explained_variance_ratio:.4f})"
        )
        return EXIT_OK

    if args.command == "env-audit":
        overrides = {}
        if args.config is not None:
            with open(args.config) as f:
                overrides = json.load(f)
        try:
            cfg = RewardConfig(**overrides)
        except TypeError as exc:
            raise ConfigurationError(f"bad reward config: {exc}") from exc
        report = run_env_audit(args.trajectory, cfg)
        print(json.dumps(report, indent=1))
        if args.out is not None:
            with open(args.out, "w") as f:
                json.dump(report, f, indent=1)
        return EXIT_OK

    if args.command == "gen-traces":
        args.out.mkdir(parents=True, exist_ok=True)
        traces = rt.synthetic_traces(args.seed, args.traces, args.points)
        for i, trace in enumerate(traces):
            rt.save_trace(trace, args.out / f"trace_{i:03d}.json")
        print(f"wrote {len(traces)} traces to {args.out}")
        return EXIT_OK

    raise ConfigurationError(f"unknown command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
