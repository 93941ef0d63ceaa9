"""One-shot scenario runs, receding-horizon driving, and results files.

Wall time covers solver iterations only; scenario generation and file writes
are excluded.  Floats are written with repr so identical runs produce
byte-identical rows (wall_time_ms is the one column exempt from that
guarantee).
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import solver_batch, solver_multiagent, solver_priest, solver_single
from ..basis import AxisBoundary, Trajectory, build_basis, straight_line_coeffs
from ..geometry import EllipsoidShape, ObstacleTrack
from .metrics import RunMetrics, check_collision_free, eval_metrics
from .scenarios import Scenario, agent_boundaries, predict_obstacles

SOLVERS = ("single", "batch", "priest", "cem", "multiagent")

RESULTS_COLUMNS = (
    "scenario_id",
    "solver",
    "seed",
    "success",
    "smoothness",
    "tracking",
    "arc_length",
    "iters",
    "residual_final",
    "min_clearance",
    "wall_time_ms",
)


@dataclass
class RunRecord:
    scenario_id: str
    solver: str
    seed: int
    metrics: RunMetrics
    trajectory_path: str | None = None


@dataclass
class MpcResult:
    records: list
    success: bool
    reached_goal: bool
    collided: bool
    executed: Trajectory | None


def _desired_line(scenario: Scenario, basis):
    start = np.asarray(scenario.boundary.start, dtype=float)
    goal = np.asarray(scenario.boundary.goal, dtype=float)
    frac = np.linspace(0.0, 1.0, basis.n_p)[:, None]
    return start[None, :] + frac * (goal - start)[None, :]


def _point_boundaries(scenario: Scenario):
    start = scenario.boundary.start
    goal = scenario.boundary.goal
    return tuple(AxisBoundary(p0=start[k], p1=goal[k]) for k in range(scenario.dim))


def _workspace_box(scenario: Scenario, pad: float = 4.0):
    pts = [scenario.boundary.start, scenario.boundary.goal] + [o.center for o in scenario.obstacles]
    pts = np.asarray(pts, dtype=float)
    return pts.min(axis=0) - pad, pts.max(axis=0) + pad


def _barn_c1(scenario: Scenario):
    start = np.asarray(scenario.boundary.start, dtype=float)
    goal = np.asarray(scenario.boundary.goal, dtype=float)

    def c1(traj: Trajectory) -> float:
        return solver_priest.barn_cost(traj.pos, traj.vel, traj.acc, start, goal)

    return c1


def _inflated_tracks(scenario: Scenario, timestamps, plan_margin: float, t_now: float = 0.0):
    """Obstacle tracks inflated for planning.

    The solvers converge onto the constraint boundary to within residual
    tolerance; a small inflation makes the returned trajectories clear the
    raw scenario geometry strictly.
    """
    tracks = predict_obstacles(scenario, timestamps, t_now=t_now)
    if plan_margin == 0.0:
        return tracks
    return [
        ObstacleTrack(centers=t.centers, shape=EllipsoidShape(t.shape.a + plan_margin, t.shape.b + plan_margin))
        for t in tracks
    ]


def single_problem_from_scenario(scenario: Scenario, basis, plan_margin: float = 0.05):
    return solver_single.SingleProblem(
        basis=basis,
        boundary=_point_boundaries(scenario),
        desired=_desired_line(scenario, basis),
        obstacles=_inflated_tracks(scenario, basis.grid.timestamps, plan_margin),
    )


def batch_problem_from_scenario(scenario: Scenario, basis, n_batch: int = 100, plan_margin: float = 0.05):
    if scenario.dim != 2:
        raise ValueError("the batch solver is planar")
    offsets = tuple(scenario.robot.footprint_offsets) or (0.0,)
    goal_dir = np.asarray(scenario.boundary.goal) - np.asarray(scenario.boundary.start)
    heading = float(np.arctan2(goal_dir[1], goal_dir[0]))
    return solver_batch.BatchProblem(
        basis=basis,
        boundary=_point_boundaries(scenario),
        psi_boundary=(heading, heading),
        desired=_desired_line(scenario, basis),
        obstacles=_inflated_tracks(scenario, basis.grid.timestamps, plan_margin),
        footprint=solver_batch.FootprintSpec(offsets=offsets),
        v_max=scenario.robot.v_max,
        a_max=scenario.robot.a_max,
        n_batch=n_batch,
    )


def priest_setup_from_scenario(scenario: Scenario, basis, rho: float = 1.0, plan_margin: float = 0.05):
    s_min, s_max = _workspace_box(scenario)
    return solver_priest.ProjectionSetup(
        basis=basis,
        boundary=_point_boundaries(scenario),
        obstacles=_inflated_tracks(scenario, basis.grid.timestamps, plan_margin),
        v_max=scenario.robot.v_max,
        a_max=scenario.robot.a_max,
        s_min=s_min,
        s_max=s_max,
        rho=rho,
    )


def multiagent_problem_from_scenario(scenario: Scenario, basis):
    if scenario.kind != "square-antipodal":
        raise ValueError("the multiagent solver expects a square-antipodal scenario")
    roster = agent_boundaries(scenario)
    boundaries = [tuple(AxisBoundary(p0=float(s[k]), p1=float(g[k])) for k in range(3)) for s, g in roster]
    shape = EllipsoidShape(a=scenario.robot.shape[0], b=scenario.robot.shape[1])
    return solver_multiagent.MultiAgentProblem(basis=basis, boundaries=boundaries, agent_shape=shape)


def default_sampling_distribution(scenario: Scenario, basis, spread: float = 0.6):
    """Straight-line mean with isotropic coefficient covariance."""
    start = np.asarray(scenario.boundary.start, dtype=float)
    goal = np.asarray(scenario.boundary.goal, dtype=float)
    mean = straight_line_coeffs(basis, start, goal).ravel()
    cov = np.eye(mean.size) * spread**2
    return solver_priest.SamplingDistribution(mu=mean, sigma_mat=cov)


def run_scenario(scenario: Scenario, solver: str, seed: int, iters: int, out_dir=None) -> RunRecord:
    """Solve one scenario with one solver and assemble a RunRecord."""
    if solver not in SOLVERS:
        raise ValueError(f"unknown solver {solver!r}; choose from {SOLVERS}")
    h = scenario.horizon
    basis = build_basis(h.t0, h.tf, h.n_p, degree=10)
    desired = _desired_line(scenario, basis)

    # success is the direct geometric check (a run with no collisions);
    # convergence is reported separately through residual_final
    psi = None
    if solver == "single":
        problem = single_problem_from_scenario(scenario, basis)
        t_start = time.perf_counter()
        sol = solver_single.solve_single(problem, solver_single.SingleParams(max_iter=iters))
        wall_ms = 1000.0 * (time.perf_counter() - t_start)
        traj = sol.trajectory
        residual = sol.residual_norm
        iterations = sol.iterations
        success, _ = check_collision_free(traj, scenario, margin=0.0)
    elif solver == "batch":
        problem = batch_problem_from_scenario(scenario, basis)
        t_start = time.perf_counter()
        ranked = solver_batch.solve_batch_opt(problem, solver_batch.BatchParams(max_iter=iters), seed=seed)
        wall_ms = 1000.0 * (time.perf_counter() - t_start)
        idx = ranked.best_index if ranked.best_index is not None else int(np.argmin(ranked.residual_max))
        traj = ranked.trajectories[idx]
        psi = traj.psi
        residual = float(ranked.residual_norm[idx])
        iterations = ranked.iterations
        success, _ = check_collision_free(traj, scenario, margin=0.0)
    elif solver in ("priest", "cem"):
        setup = priest_setup_from_scenario(scenario, basis)
        dist = default_sampling_distribution(scenario, basis)
        c1 = _barn_c1(scenario)
        if solver == "priest":
            params = solver_priest.PriestParams(n_outer=iters, seed=seed)
            t_start = time.perf_counter()
            result = solver_priest.priest_optimize(setup, c1, dist, params)
            wall_ms = 1000.0 * (time.perf_counter() - t_start)
            traj = result.best.trajectory
            residual = float(result.best.residual)
            iterations = params.n_outer
        else:
            params = solver_priest.CemParams(iterations=iters, seed=seed)
            t_start = time.perf_counter()
            result = solver_priest.cem_optimize(setup, c1, dist, params)
            wall_ms = 1000.0 * (time.perf_counter() - t_start)
            traj = result.best_trajectory
            residual = float(solver_priest.residual_score(setup, result.best_xi))
            iterations = params.iterations
        ok, _ = check_collision_free(traj, scenario, margin=0.0)
        success = bool(ok)
    else:  # multiagent
        problem = multiagent_problem_from_scenario(scenario, basis)
        shape = problem.agent_shape
        t_start = time.perf_counter()
        sol = solver_multiagent.solve_joint(problem, solver_multiagent.JointParams(max_iter=iters))
        wall_ms = 1000.0 * (time.perf_counter() - t_start)
        traj = sol.trajectories[0]
        residual = sol.residual_norm
        iterations = sol.iterations
        success = bool(sol.min_pair_distance >= 2.0 * shape.a)

    metrics = eval_metrics(traj, scenario, desired)
    metrics.success = success
    metrics.iters = iterations
    metrics.residual_final = residual
    metrics.wall_time_ms = wall_ms
    if solver == "multiagent":
        metrics.min_clearance = sol.min_pair_distance - 2.0 * shape.a

    record = RunRecord(scenario_id=scenario.scenario_id, solver=solver, seed=seed, metrics=metrics)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        dump = out_dir / f"{scenario.scenario_id}_{solver}_{seed}_traj.csv"
        write_trajectory_csv(dump, traj, dim=scenario.dim, psi=psi)
        record.trajectory_path = str(dump)
        write_results_csv(out_dir / "results.csv", [record])
    return record


def write_trajectory_csv(path, traj: Trajectory, dim: int, psi=None) -> None:
    """Dump columns t, x, y, z, psi (blank z for planar, blank psi if absent)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "y", "z", "psi"])
        for i, t in enumerate(traj.t):
            row = [repr(float(t)), repr(float(traj.pos[i, 0])), repr(float(traj.pos[i, 1]))]
            row.append(repr(float(traj.pos[i, 2])) if dim == 3 else "")
            row.append(repr(float(psi[i])) if psi is not None else "")
            writer.writerow(row)


def _format_value(key, value):
    if key == "success":
        return "true" if value else "false"
    if key in ("scenario_id", "solver"):
        return str(value)
    if key in ("seed", "iters"):
        return str(int(value))
    return repr(float(value))


def write_results_csv(path, records: list, append: bool = True) -> None:
    path = Path(path)
    fresh = not (append and path.exists())
    mode = "w" if fresh else "a"
    with open(path, mode, newline="") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(RESULTS_COLUMNS)
        for rec in records:
            row = {
                "scenario_id": rec.scenario_id,
                "solver": rec.solver,
                "seed": rec.seed,
                **rec.metrics.__dict__,
            }
            writer.writerow([_format_value(col, row[col]) for col in RESULTS_COLUMNS])


def read_results_csv(path) -> list:
    """Parse a results file back into (scenario_id, solver, seed, RunMetrics) records."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            metrics = RunMetrics(
                smoothness=float(row["smoothness"]),
                tracking=float(row["tracking"]),
                arc_length=float(row["arc_length"]),
                success=row["success"] == "true",
                iters=int(row["iters"]),
                residual_final=float(row["residual_final"]),
                min_clearance=float(row["min_clearance"]),
                wall_time_ms=float(row["wall_time_ms"]),
            )
            out.append(RunRecord(scenario_id=row["scenario_id"], solver=row["solver"], seed=int(row["seed"]), metrics=metrics))
    return out


def _current_obstacle_positions(scenario: Scenario, t_abs: float) -> list:
    positions = []
    for obs in scenario.obstacles:
        positions.append(np.asarray(obs.center) + np.asarray(obs.velocity) * t_abs)
    return positions


def _in_collision_now(scenario: Scenario, pos: np.ndarray, t_abs: float) -> bool:
    for obs, c in zip(scenario.obstacles, _current_obstacle_positions(scenario, t_abs)):
        delta = pos - c
        if scenario.dim == 3:
            quad = delta[0] ** 2 / obs.a**2 + delta[1] ** 2 / obs.a**2 + delta[2] ** 2 / obs.b**2
        else:
            quad = delta[0] ** 2 / obs.a**2 + delta[1] ** 2 / obs.b**2
        if quad < 1.0:
            return True
    return False


def receding_horizon_run(
    scenario: Scenario,
    solver: str = "single",
    step_budget: int = 40,
    n_steps: int = 30,
    goal_radius: float = 0.5,
    exec_fraction: float = 0.1,
    seed: int = 0,
) -> MpcResult:
    """Receding-horizon loop: re-predict obstacles, warm-start multipliers,
    execute the first trajectory segment.

    step_budget caps solver iterations per control loop.  Terminates on goal
    proximity or collision of the executed path; failures are recorded, not
    raised.
    """
    if solver not in ("single", "batch"):
        raise ValueError("receding-horizon driving supports the single and batch solvers")
    h = scenario.horizon
    basis = build_basis(h.t0, h.tf, h.n_p, degree=10)
    n_exec = max(1, int(round(exec_fraction * basis.n_p)))
    dt = basis.grid.dt

    goal = np.asarray(scenario.boundary.goal, dtype=float)
    pos = np.asarray(scenario.boundary.start, dtype=float).copy()
    vel = np.zeros(scenario.dim)
    acc = np.zeros(scenario.dim)
    t_abs = 0.0

    records: list[RunRecord] = []
    executed_pos = [pos.copy()]
    executed_t = [0.0]
    collided = _in_collision_now(scenario, pos, t_abs)
    reached = False
    warm_state = None

    for step in range(n_steps):
        if collided or reached:
            break
        tracks = _inflated_tracks(scenario, basis.grid.timestamps, plan_margin=0.05, t_now=t_abs)
        boundary = tuple(
            AxisBoundary(p0=pos[k], v0=vel[k], a0=acc[k], p1=goal[k]) for k in range(scenario.dim)
        )
        frac = np.linspace(0.0, 1.0, basis.n_p)[:, None]
        desired = pos[None, :] + frac * (goal - pos)[None, :]

        t_start = time.perf_counter()
        if solver == "single":
            problem = solver_single.SingleProblem(basis=basis, boundary=boundary, desired=desired, obstacles=tracks)
            params = solver_single.SingleParams(max_iter=step_budget)
            if warm_state is not None:
                warm_state.iteration = 0
            sol = solver_single.solve_single(problem, params, state=warm_state)
            warm_state = sol.state
            traj = sol.trajectory
            residual = sol.residual_norm
        else:
            offsets = tuple(scenario.robot.footprint_offsets) or (0.0,)
            heading = float(np.arctan2(goal[1] - pos[1], goal[0] - pos[0]))
            problem = solver_batch.BatchProblem(
                basis=basis,
                boundary=boundary,
                psi_boundary=(heading, heading),
                desired=desired,
                obstacles=tracks,
                footprint=solver_batch.FootprintSpec(offsets=offsets),
                v_max=scenario.robot.v_max,
                a_max=scenario.robot.a_max,
                n_batch=50,
            )
            params = solver_batch.BatchParams(max_iter=step_budget)
            if warm_state is not None:
                warm_state.iteration = 0
            ranked = solver_batch.solve_batch_opt(problem, params, seed=seed, state=warm_state)
            warm_state = ranked.state
            idx = ranked.best_index if ranked.best_index is not None else int(np.argmin(ranked.residual_max))
            traj = ranked.trajectories[idx]
            residual = float(ranked.residual_norm[idx])
        wall_ms = 1000.0 * (time.perf_counter() - t_start)

        # execute the first segment against the true obstacle motion
        for i in range(1, n_exec + 1):
            pos = traj.pos[i].copy()
            vel = traj.vel[i].copy()
            acc = traj.acc[i].copy()
            t_abs += dt
            executed_pos.append(pos.copy())
            executed_t.append(t_abs)
            if _in_collision_now(scenario, pos, t_abs):
                collided = True
                break
            if np.linalg.norm(pos - goal) <= goal_radius:
                reached = True
                break

        metrics = eval_metrics(traj, scenario, desired)
        metrics.iters = step_budget
        metrics.residual_final = residual
        metrics.wall_time_ms = wall_ms
        metrics.success = reached and not collided
        records.append(
            RunRecord(scenario_id=f"{scenario.scenario_id}#step{step}", solver=solver, seed=seed, metrics=metrics)
        )

    success = reached and not collided
    if records:
        records[-1].metrics.success = success
    executed = None
    if len(executed_pos) > 1:
        p = np.vstack(executed_pos)
        v = np.gradient(p, np.asarray(executed_t), axis=0)
        a = np.gradient(v, np.asarray(executed_t), axis=0)
        executed = Trajectory(t=np.asarray(executed_t), pos=p, vel=v, acc=a)
    return MpcResult(records=records, success=success, reached_goal=reached, collided=collided, executed=executed)
