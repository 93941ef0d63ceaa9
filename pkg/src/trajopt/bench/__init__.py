from .metrics import RunMetrics, check_collision_free, clearance_lower_bound, eval_metrics
from .runner import (
    MpcResult,
    RESULTS_COLUMNS,
    RunRecord,
    read_results_csv,
    receding_horizon_run,
    run_scenario,
    write_results_csv,
    write_trajectory_csv,
)
from .scenarios import (
    KINDS,
    Boundary,
    Horizon,
    RobotSpec,
    Scenario,
    ScenarioObstacle,
    agent_boundaries,
    from_json,
    gen_scenario,
    load_scenario,
    predict_obstacles,
    save_scenario,
    to_json,
)

__all__ = [
    "Boundary",
    "Horizon",
    "KINDS",
    "MpcResult",
    "RESULTS_COLUMNS",
    "RobotSpec",
    "RunMetrics",
    "RunRecord",
    "Scenario",
    "ScenarioObstacle",
    "agent_boundaries",
    "check_collision_free",
    "clearance_lower_bound",
    "eval_metrics",
    "from_json",
    "gen_scenario",
    "load_scenario",
    "predict_obstacles",
    "read_results_csv",
    "receding_horizon_run",
    "run_scenario",
    "save_scenario",
    "to_json",
    "write_results_csv",
    "write_trajectory_csv",
]
