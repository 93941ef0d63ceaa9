import numpy as np
import pytest

from trajopt.basis import Trajectory
from trajopt.bench import (
    Boundary,
    Horizon,
    RobotSpec,
    RunMetrics,
    RunRecord,
    Scenario,
    ScenarioObstacle,
    agent_boundaries,
    check_collision_free,
    eval_metrics,
    from_json,
    gen_scenario,
    load_scenario,
    predict_obstacles,
    read_results_csv,
    receding_horizon_run,
    run_scenario,
    save_scenario,
    to_json,
    write_results_csv,
)


def _trajectory_from_positions(t, pos):
    pos = np.asarray(pos, dtype=float)
    vel = np.gradient(pos, t, axis=0)
    acc = np.gradient(vel, t, axis=0)
    return Trajectory(t=np.asarray(t), pos=pos, vel=vel, acc=acc)


def empty_scenario(dim=2, n_p=50):
    return Scenario(
        kind="random-static",
        dim=dim,
        horizon=Horizon(t0=0.0, tf=5.0, n_p=n_p),
        robot=RobotSpec(shape=[0.0, 0.0], v_max=3.0, a_max=3.0),
        obstacles=[],
        boundary=Boundary(start=[0.0] * dim, goal=[5.0] + [0.0] * (dim - 1)),
        seed=0,
    )


class TestGenScenario:
    def test_square_antipodal_goals_are_rotations(self):
        scenario = gen_scenario("square-antipodal", {"n_agents": 4, "jitter": 0.0}, seed=1)
        roster = agent_boundaries(scenario)
        assert len(roster) == 4
        center = 0.5 * (np.asarray(scenario.boundary.start) + np.asarray(scenario.boundary.goal))
        for start, goal in roster:
            np.testing.assert_allclose(goal, 2.0 * center - start, atol=1e-12)

    def test_seed_repetition_identical(self):
        a = gen_scenario("corridor", seed=5)
        b = gen_scenario("corridor", seed=5)
        assert to_json(a) == to_json(b)

    def test_random_static_respects_clearance(self):
        scenario = gen_scenario("random-static", {"n_o": 10, "clearance": 1.5}, seed=2)
        assert len(scenario.obstacles) == 10
        start = np.asarray(scenario.boundary.start)
        goal = np.asarray(scenario.boundary.goal)
        for obs in scenario.obstacles:
            c = np.asarray(obs.center)
            assert np.linalg.norm(c - start) >= 1.5
            assert np.linalg.norm(c - goal) >= 1.5

    def test_probe_puts_sampling_mean_inside_obstacle(self):
        scenario = gen_scenario("all-infeasible-probe", seed=3)
        start = np.asarray(scenario.boundary.start)
        goal = np.asarray(scenario.boundary.goal)
        blocker = scenario.obstacles[0]
        # the straight line passes through the blocker
        line = start + np.linspace(0, 1, 200)[:, None] * (goal - start)
        d = np.hypot(line[:, 0] - blocker.center[0], line[:, 1] - blocker.center[1])
        assert d.min() < blocker.a

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            gen_scenario("no-such-kind", seed=0)


class TestScenarioJson:
    def test_round_trip(self):
        scenario = gen_scenario("dynamic-flow", seed=7)
        assert to_json(from_json(to_json(scenario))) == to_json(scenario)

    def test_file_round_trip(self, tmp_path):
        scenario = gen_scenario("barn-like", seed=9)
        path = tmp_path / "scn.json"
        save_scenario(scenario, path)
        loaded = load_scenario(path)
        assert to_json(loaded) == to_json(scenario)

    def test_schema_keys_exact(self):
        import json

        raw = json.loads(to_json(gen_scenario("corridor", seed=0)))
        assert set(raw) == {"kind", "dim", "horizon", "robot", "obstacles", "boundary", "seed"}
        assert set(raw["horizon"]) == {"t0", "tf", "n_p"}
        assert set(raw["robot"]) == {"shape", "v_max", "a_max", "footprint_offsets"}
        assert set(raw["boundary"]) == {"start", "goal"}
        for obs in raw["obstacles"]:
            assert set(obs) == {"a", "b", "center", "velocity"}


class TestEvalMetrics:
    def test_stationary_trajectory(self):
        scenario = empty_scenario()
        t = np.linspace(0.0, 5.0, 50)
        traj = Trajectory(t=t, pos=np.ones((50, 2)), vel=np.zeros((50, 2)), acc=np.zeros((50, 2)))
        m = eval_metrics(traj, scenario)
        assert m.smoothness == 0.0
        assert m.arc_length == 0.0

    def test_straight_constant_velocity(self):
        scenario = empty_scenario()
        t = np.linspace(0.0, 5.0, 50)
        pos = np.column_stack([t, np.zeros(50)])
        traj = Trajectory(t=t, pos=pos, vel=np.tile([1.0, 0.0], (50, 1)), acc=np.zeros((50, 2)))
        m = eval_metrics(traj, scenario)
        assert m.smoothness == 0.0
        assert m.arc_length == pytest.approx(5.0)

    def test_unit_circle_arc_length(self):
        scenario = empty_scenario()
        theta = np.linspace(0.0, 2.0 * np.pi, 2000)
        pos = np.column_stack([np.cos(theta), np.sin(theta)])
        traj = _trajectory_from_positions(theta, pos)
        m = eval_metrics(traj, scenario)
        assert abs(m.arc_length - 2.0 * np.pi) / (2.0 * np.pi) < 0.01


class TestCheckCollisionFree:
    def test_through_center_fails_with_positive_violation(self):
        scenario = empty_scenario()
        scenario.obstacles = [ScenarioObstacle(a=0.5, b=0.5, center=[2.5, 0.0], velocity=[0.0, 0.0])]
        t = np.linspace(0.0, 5.0, 50)
        pos = np.column_stack([t, np.zeros(50)])
        traj = _trajectory_from_positions(t, pos)
        ok, worst = check_collision_free(traj, scenario)
        assert not ok
        assert worst > 0.0

    def test_empty_obstacles_pass(self):
        scenario = empty_scenario()
        t = np.linspace(0.0, 5.0, 10)
        traj = _trajectory_from_positions(t, np.column_stack([t, np.zeros(10)]))
        ok, _ = check_collision_free(traj, scenario)
        assert ok

    def test_boundary_tangency_at_zero_margin(self):
        scenario = empty_scenario()
        scenario.obstacles = [ScenarioObstacle(a=0.5, b=0.5, center=[2.5, -0.5], velocity=[0.0, 0.0])]
        t = np.linspace(0.0, 5.0, 51)
        pos = np.column_stack([np.linspace(0, 5, 51), np.zeros(51)])  # grazes the top at (2.5, 0)
        traj = _trajectory_from_positions(t, pos)
        ok, worst = check_collision_free(traj, scenario, margin=0.0)
        assert ok
        assert abs(worst) <= 1e-9


class TestPredictObstacles:
    def test_zero_velocity_constant(self):
        scenario = empty_scenario()
        scenario.obstacles = [ScenarioObstacle(a=0.5, b=0.5, center=[1.0, 2.0], velocity=[0.0, 0.0])]
        tracks = predict_obstacles(scenario, np.linspace(0, 5, 11))
        np.testing.assert_array_equal(tracks[0].centers, np.tile([1.0, 2.0], (11, 1)))

    def test_unit_velocity_advances(self):
        scenario = empty_scenario(dim=3)
        scenario.obstacles = [ScenarioObstacle(a=0.5, b=0.5, center=[0.0, 0.0, 0.0], velocity=[1.0, 0.0, 0.0])]
        tracks = predict_obstacles(scenario, np.linspace(0, 4, 5))
        np.testing.assert_allclose(tracks[0].centers[2], [2.0, 0.0, 0.0])

    def test_matches_hand_kinematics(self):
        rng = np.random.default_rng(0)
        v = rng.normal(size=2)
        c = rng.normal(size=2)
        scenario = empty_scenario()
        scenario.obstacles = [ScenarioObstacle(a=0.5, b=0.5, center=list(c), velocity=list(v))]
        ts = np.linspace(0.0, 5.0, 13)
        tracks = predict_obstacles(scenario, ts, t_now=1.5)
        for i, t in enumerate(ts):
            np.testing.assert_allclose(tracks[0].centers[i], c + v * (1.5 + t), atol=1e-12)


class TestResultsCsv:
    def test_round_trip(self, tmp_path):
        metrics = RunMetrics(
            smoothness=1.2345678901234567,
            tracking=0.1,
            arc_length=12.0,
            success=True,
            iters=42,
            residual_final=1e-9,
            min_clearance=0.25,
            wall_time_ms=17.5,
        )
        rec = RunRecord(scenario_id="corridor-0", solver="single", seed=3, metrics=metrics)
        path = tmp_path / "results.csv"
        write_results_csv(path, [rec])
        out = read_results_csv(path)
        assert len(out) == 1
        assert out[0].scenario_id == rec.scenario_id
        assert out[0].solver == rec.solver
        assert out[0].seed == rec.seed
        assert out[0].metrics == metrics


class TestRunScenario:
    def test_single_solver_end_to_end(self, tmp_path):
        scenario = gen_scenario("corridor", {"n_o": 4, "n_p": 60}, seed=0)
        rec = run_scenario(scenario, solver="single", seed=0, iters=300, out_dir=tmp_path)
        assert rec.metrics.success
        assert (tmp_path / "results.csv").exists()
        assert rec.trajectory_path is not None
        header = open(rec.trajectory_path).readline().strip()
        assert header == "t,x,y,z,psi"

    def test_unknown_solver_rejected(self):
        scenario = gen_scenario("corridor", seed=0)
        with pytest.raises(ValueError):
            run_scenario(scenario, solver="nope", seed=0, iters=5)

    def test_determinism_modulo_wall_time(self, tmp_path):
        scenario = gen_scenario("random-static", {"n_o": 5, "n_p": 60}, seed=1)
        r1 = run_scenario(scenario, solver="priest", seed=4, iters=3)
        r2 = run_scenario(scenario, solver="priest", seed=4, iters=3)
        m1, m2 = r1.metrics, r2.metrics
        m1.wall_time_ms = m2.wall_time_ms = 0.0
        assert m1 == m2


class TestRecedingHorizon:
    def test_empty_world_reaches_goal(self):
        scenario = empty_scenario(n_p=40)
        result = receding_horizon_run(scenario, solver="single", step_budget=20, n_steps=25)
        assert result.success
        assert result.reached_goal and not result.collided
        assert len(result.records) >= 1
        assert result.records[-1].metrics.success

    def test_start_in_collision_fails_immediately(self):
        scenario = empty_scenario(n_p=40)
        scenario.obstacles = [ScenarioObstacle(a=1.0, b=1.0, center=[0.0, 0.0], velocity=[0.0, 0.0])]
        result = receding_horizon_run(scenario, solver="single", step_budget=10, n_steps=5)
        assert not result.success
        assert result.collided
        assert result.records == []

    def test_dynamic_flow_success_rate_definition(self):
        seeds = range(3)
        outcomes = []
        for seed in seeds:
            scenario = gen_scenario("dynamic-flow", {"n_o": 3, "n_p": 40, "tf": 8.0}, seed=seed)
            result = receding_horizon_run(scenario, solver="single", step_budget=25, n_steps=25)
            outcomes.append(result.success)
        rate = sum(outcomes) / len(outcomes)
        assert 0.0 <= rate <= 1.0
        assert rate == pytest.approx(np.mean(outcomes))


class TestCli:
    def test_gen_run_report_flow(self, tmp_path):
        from trajopt.bench.cli import main

        scn = tmp_path / "scenario.json"
        assert main(["gen", "--kind", "corridor", "--seed", "0", "--out", str(scn)]) == 0
        out1 = tmp_path / "run1"
        assert main(["run", "--scenario", str(scn), "--solver", "single", "--seed", "0", "--iters", "200", "--out", str(out1)]) == 0
        summary = tmp_path / "summary.csv"
        assert main(["report", "--in", str(tmp_path), "--out", str(summary)]) == 0
        text = summary.read_text().splitlines()
        assert text[0].startswith("scenario_id,solver,runs")
        assert len(text) == 2

    def test_identical_invocations_byte_identical_modulo_wall(self, tmp_path):
        from trajopt.bench.cli import main

        scn = tmp_path / "scenario.json"
        main(["gen", "--kind", "corridor", "--seed", "1", "--out", str(scn)])
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            main(["run", "--scenario", str(scn), "--solver", "single", "--seed", "2", "--iters", "150", "--out", str(out)])
            rows = (out / "results.csv").read_text().splitlines()
            stripped = ["," .join(r.split(",")[:-1]) for r in rows]  # drop wall_time_ms
            outs.append("\n".join(stripped).encode())
        assert outs[0] == outs[1]
