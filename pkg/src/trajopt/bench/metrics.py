"""Run metrics and direct constraint checking against raw scenario geometry."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..basis import Trajectory
from .scenarios import Scenario, predict_obstacles


@dataclass
class RunMetrics:
    smoothness: float
    tracking: float
    arc_length: float
    success: bool
    iters: int
    residual_final: float
    min_clearance: float
    wall_time_ms: float


def eval_metrics(trajectory: Trajectory, scenario: Scenario, desired: np.ndarray | None = None) -> RunMetrics:
    """Smoothness / tracking / arc-length metrics of a sampled trajectory.

    Solver-specific fields (success, iters, residual, wall time) are filled
    by the runner; they default to zero here.
    """
    acc = trajectory.acc
    smoothness = float(np.sum(acc**2))
    if desired is None:
        tracking = 0.0
    else:
        desired = np.asarray(desired, dtype=float)
        tracking = float(np.sum((trajectory.pos - desired) ** 2))
    seg = np.diff(trajectory.pos, axis=0)
    arc_length = float(np.sum(np.linalg.norm(seg, axis=1)))
    _, worst = check_collision_free(trajectory, scenario, margin=0.0)
    min_clear = clearance_lower_bound(trajectory, scenario)
    return RunMetrics(
        smoothness=smoothness,
        tracking=tracking,
        arc_length=arc_length,
        success=False,
        iters=0,
        residual_final=0.0,
        min_clearance=min_clear,
        wall_time_ms=0.0,
    )


def _scaled_distances(trajectory: Trajectory, scenario: Scenario) -> np.ndarray:
    """Ellipsoidal distance (1 on the boundary) per obstacle and sample."""
    tracks = predict_obstacles(scenario, trajectory.t)
    pos = trajectory.pos
    out = np.empty((len(tracks), pos.shape[0]))
    for j, track in enumerate(tracks):
        delta = pos - track.centers
        if scenario.dim == 3:
            quad = delta[:, 0] ** 2 / track.shape.a**2 + delta[:, 1] ** 2 / track.shape.a**2 + delta[:, 2] ** 2 / track.shape.b**2
        else:
            quad = delta[:, 0] ** 2 / track.shape.a**2 + delta[:, 1] ** 2 / track.shape.b**2
        out[j] = np.sqrt(quad)
    return out


def check_collision_free(trajectory: Trajectory, scenario: Scenario, margin: float = 0.0) -> tuple[bool, float]:
    """Direct evaluation of the raw quadratic separation constraints.

    margin is expressed on the scaled-distance axis: every sample must have
    ellipsoidal distance >= 1 + margin.  Returns (ok, worst_violation) where
    worst_violation > 0 quantifies the deepest incursion (negative values
    mean slack).
    """
    if not scenario.obstacles:
        return True, -math.inf
    dists = _scaled_distances(trajectory, scenario)
    worst = float(np.max(1.0 + margin - dists))
    return worst <= 0.0, worst


def clearance_lower_bound(trajectory: Trajectory, scenario: Scenario) -> float:
    """Conservative metric clearance in meters.

    (scaled distance - 1) * min(a, b) is exact for spheres and a lower bound
    for ellipsoids; returns +inf with no obstacles.
    """
    if not scenario.obstacles:
        return math.inf
    dists = _scaled_distances(trajectory, scenario)
    semi = np.array([[min(o.a, o.b)] for o in scenario.obstacles])
    return float(np.min((dists - 1.0) * semi))
