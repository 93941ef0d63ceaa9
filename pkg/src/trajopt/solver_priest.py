"""Projection-guided sampling optimization with a plain CEM baseline.

Sampled coefficient vectors are individually projected toward the feasible
set before their cost is evaluated, so the sampling distribution receives a
useful signal even when every raw sample is infeasible.  The projection is
an alternating scheme on

    min 0.5 ||xi_bar - xi||^2   s.t.  A xi_bar = b_eq,
                                      F_tilde xi_bar = e_tilde(alpha, beta, d),
                                      G xi_bar <= tau

where the collision / velocity / acceleration constraints are in polar form
(closed-form alpha/beta/d sub-steps) and the affine workspace bounds get a
clipped slack.  The saddle matrix of the coefficient step is independent of
the sample being projected, so one cached factor serves the whole batch for
every inner iteration.

The cost functional is treated as a black box evaluated pointwise on sampled
trajectories; nothing here differentiates it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import qpcore
from .basis import AxisBoundary, BasisSet, Trajectory, boundary_matrix
from .geometry import D_CAP, ObstacleTrack

_SPEED_EPS = 1e-6


@dataclass
class PriestParams:
    n_outer: int = 13
    n_batch: int = 110
    n_constraint_elite: int = 80
    n_elite: int = 20
    n_inner: int = 30
    sigma: float = 0.7
    gamma: float = -1.0
    residual_weight: float = 1.0
    seed: int | None = 0

    def __post_init__(self):
        if not (self.n_elite <= self.n_constraint_elite <= self.n_batch):
            raise ValueError("need n_elite <= n_constraint_elite <= n_batch")
        if not (0.0 < self.sigma <= 1.0):
            raise ValueError("learning rate sigma must lie in (0, 1]")
        if self.gamma == 0.0:
            raise ValueError("gamma must be nonzero")


@dataclass
class CemParams:
    n_batch: int = 110
    n_elite: int = 20
    iterations: int = 13
    seed: int | None = 0
    penalty_weight: float = 1.0

    def __post_init__(self):
        if self.n_elite > self.n_batch:
            raise ValueError("need n_elite <= n_batch")


@dataclass
class SamplingDistribution:
    mu: np.ndarray
    sigma_mat: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma_mat = np.asarray(self.sigma_mat, dtype=float)
        if not np.allclose(self.sigma_mat, self.sigma_mat.T, atol=1e-10):
            raise ValueError("covariance must be symmetric")

    def draw(self, n: int, rng) -> np.ndarray:
        return rng.multivariate_normal(self.mu, self.sigma_mat, size=n, method="svd")


@dataclass
class ProjectedSample:
    original: np.ndarray
    projected: np.ndarray
    residual: float
    trajectory: Trajectory
    aug_cost: float | None = None


class ProjectionSetup:
    """Constant matrices and obstacle data for projecting onto one scene.

    Workspace bounds, velocity and acceleration limits are optional; with
    everything absent the projection reduces to the minimum-change
    correction onto the boundary equalities.
    """

    def __init__(
        self,
        basis: BasisSet,
        boundary: tuple[AxisBoundary, ...],
        obstacles: list[ObstacleTrack] | None = None,
        v_max: float | None = None,
        a_max: float | None = None,
        s_min=None,
        s_max=None,
        rho: float = 1.0,
        start_orders=(0, 1, 2),
        end_orders=(0,),
    ):
        self.basis = basis
        self.boundary = boundary
        self.dim = len(boundary)
        self.obstacles = obstacles or []
        self.v_max = v_max
        self.a_max = a_max
        self.s_min = None if s_min is None else np.asarray(s_min, dtype=float)
        self.s_max = None if s_max is None else np.asarray(s_max, dtype=float)
        self.rho = rho

        m, n_p, dim = basis.n_var, basis.n_p, self.dim
        self.m = m
        n_o = len(self.obstacles)
        self.n_o = n_o

        blocks = []
        if n_o:
            blocks.append(np.tile(basis.P, (n_o, 1)))
        if v_max is not None:
            blocks.append(basis.Pdot)
        if a_max is not None:
            blocks.append(basis.Pddot)
        axis_block = np.vstack(blocks) if blocks else np.zeros((0, m))
        F_tilde = np.zeros((dim * axis_block.shape[0], dim * m))
        for k in range(dim):
            F_tilde[k * axis_block.shape[0] : (k + 1) * axis_block.shape[0], k * m : (k + 1) * m] = axis_block
        self.F_tilde = F_tilde

        if self.s_min is not None and self.s_max is not None:
            bound_block = np.vstack([-basis.P, basis.P])
            G = np.zeros((dim * 2 * n_p, dim * m))
            tau = np.zeros(dim * 2 * n_p)
            for k in range(dim):
                G[k * 2 * n_p : (k + 1) * 2 * n_p, k * m : (k + 1) * m] = bound_block
                tau[k * 2 * n_p : k * 2 * n_p + n_p] = -self.s_min[k]
                tau[k * 2 * n_p + n_p : (k + 1) * 2 * n_p] = self.s_max[k]
            self.G, self.tau = G, tau
        else:
            self.G = np.zeros((0, dim * m))
            self.tau = np.zeros(0)

        self.F = np.vstack([self.F_tilde, self.G])
        B = boundary_matrix(basis, start_orders, end_orders)
        self.A = np.zeros((dim * B.shape[0], dim * m))
        for k in range(dim):
            self.A[k * B.shape[0] : (k + 1) * B.shape[0], k * m : (k + 1) * m] = B
        self.b_eq = np.concatenate([bc.values(start_orders, end_orders) for bc in boundary])

        if n_o:
            self.obs_pos = np.stack([o.centers for o in self.obstacles])  # (n_o, n_p, dim)
            self.obs_a = np.array([o.shape.a for o in self.obstacles])
            self.obs_b = np.array([o.shape.b for o in self.obstacles])

        self.factor = qpcore.factorize(np.eye(dim * m) + rho * self.F.T @ self.F, self.A)
        self.n_factorizations = 1

    # -- sampling helpers ----------------------------------------------------

    def axis_samples(self, xis: np.ndarray, mat: np.ndarray) -> np.ndarray:
        """Apply one basis matrix per axis: (N, dim*m) -> (N, dim, n_p)."""
        xis = np.atleast_2d(xis)
        out = np.empty((xis.shape[0], self.dim, mat.shape[0]))
        for k in range(self.dim):
            out[:, k, :] = xis[:, k * self.m : (k + 1) * self.m] @ mat.T
        return out

    def trajectory_of(self, xi: np.ndarray) -> Trajectory:
        xi = np.asarray(xi)
        return Trajectory(
            t=self.basis.grid.timestamps,
            pos=self.axis_samples(xi, self.basis.P)[0].T,
            vel=self.axis_samples(xi, self.basis.Pdot)[0].T,
            acc=self.axis_samples(xi, self.basis.Pddot)[0].T,
        )

    def _polar_targets(self, xis: np.ndarray) -> np.ndarray:
        """e_tilde rows for each sample, matching the F_tilde layout."""
        n = xis.shape[0]
        pos = self.axis_samples(xis, self.basis.P)
        vel = self.axis_samples(xis, self.basis.Pdot)
        acc = self.axis_samples(xis, self.basis.Pddot)
        per_axis = [[] for _ in range(self.dim)]

        if self.n_o:
            deltas = pos[:, None, :, :] - self.obs_pos.transpose(0, 2, 1)[None, :, :, :]  # (N, n_o, dim, n_p)
            a = self.obs_a[None, :, None]
            b = self.obs_b[None, :, None]
            dx, dy = deltas[:, :, 0], deltas[:, :, 1]
            if self.dim == 3:
                dz = deltas[:, :, 2]
                alpha = np.arctan2(dy, dx)
                beta = np.arctan2(np.hypot(dx / a, dy / a), dz / b)
                d = np.clip(np.sqrt(dx**2 / a**2 + dy**2 / a**2 + dz**2 / b**2), 1.0, D_CAP)
                obs_xyz = self.obs_pos.transpose(0, 2, 1)[None]
                per_axis[0].append((obs_xyz[:, :, 0] + a * d * np.cos(alpha) * np.sin(beta)).reshape(n, -1))
                per_axis[1].append((obs_xyz[:, :, 1] + a * d * np.sin(alpha) * np.sin(beta)).reshape(n, -1))
                per_axis[2].append((obs_xyz[:, :, 2] + b * d * np.cos(beta)).reshape(n, -1))
            else:
                # scaled angle keeps the planar-ellipse reconstruction exact
                alpha = np.arctan2(dy / b, dx / a)
                d = np.clip(np.hypot(dx / a, dy / b), 1.0, D_CAP)
                obs_xy = self.obs_pos.transpose(0, 2, 1)[None]
                per_axis[0].append((obs_xy[:, :, 0] + a * d * np.cos(alpha)).reshape(n, -1))
                per_axis[1].append((obs_xy[:, :, 1] + b * d * np.sin(alpha)).reshape(n, -1))

        for limit, samples in ((self.v_max, vel), (self.a_max, acc)):
            if limit is None:
                continue
            if self.dim == 3:
                vx, vy, vz = samples[:, 0], samples[:, 1], samples[:, 2]
                alpha = np.arctan2(vy, vx)
                beta = np.arctan2(np.hypot(vx, vy), vz)
                d = np.clip(np.sqrt(vx**2 + vy**2 + vz**2) / limit, 0.0, 1.0)
                per_axis[0].append(limit * d * np.cos(alpha) * np.sin(beta))
                per_axis[1].append(limit * d * np.sin(alpha) * np.sin(beta))
                per_axis[2].append(limit * d * np.cos(beta))
            else:
                vx, vy = samples[:, 0], samples[:, 1]
                alpha = np.arctan2(vy, vx)
                d = np.clip(np.hypot(vx, vy) / limit, 0.0, 1.0)
                per_axis[0].append(limit * d * np.cos(alpha))
                per_axis[1].append(limit * d * np.sin(alpha))

        if self.F_tilde.shape[0] == 0:
            return np.zeros((n, 0))
        return np.hstack([np.hstack(parts) for parts in per_axis])


def project(
    setup: ProjectionSetup,
    samples: np.ndarray,
    n_inner: int = 30,
    residual_history: list | None = None,
) -> list[ProjectedSample]:
    """Project each sampled coefficient vector toward the feasible set.

    All samples share the cached saddle factor; the inner loop alternates
    closed-form polar updates, the slack clip, multiplier ascent, and the
    batched coefficient solve.  Pass a list as residual_history to collect
    the per-inner-iteration residual scores (shape (N_s,) each).
    """
    if n_inner < 1:
        raise ValueError("n_inner must be at least 1")
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    n = samples.shape[0]
    xi_bar = samples.copy()
    lam = np.zeros_like(samples)
    bs = np.tile(setup.b_eq, (n, 1))
    rho = setup.rho
    for _ in range(n_inner):
        e_tilde = setup._polar_targets(xi_bar)
        if setup.G.shape[0]:
            Gx = xi_bar @ setup.G.T
            slack = np.maximum(0.0, setup.tau[None, :] - Gx)
            e = np.hstack([e_tilde, setup.tau[None, :] - slack])
        else:
            e = e_tilde
        residual = xi_bar @ setup.F.T - e
        lam = lam - rho * (residual @ setup.F)
        q_lin = -(samples + lam + rho * (e @ setup.F))
        xi_bar, _ = qpcore.solve_batch(setup.factor, qpcore.BatchRHS(qs=q_lin, bs=bs))
        if residual_history is not None:
            residual_history.append(residual_scores(setup, xi_bar))

    scores = residual_scores(setup, xi_bar)
    return [
        ProjectedSample(
            original=samples[i],
            projected=xi_bar[i],
            residual=float(scores[i]),
            trajectory=setup.trajectory_of(xi_bar[i]),
        )
        for i in range(n)
    ]


def residual_scores(setup: ProjectionSetup, xis: np.ndarray) -> np.ndarray:
    """Constraint-violation score per sample: L2 norm of the stacked
    reformulated-equality residuals and clipped affine violations."""
    xis = np.atleast_2d(xis)
    parts = []
    if setup.F_tilde.shape[0]:
        parts.append(xis @ setup.F_tilde.T - setup._polar_targets(xis))
    if setup.G.shape[0]:
        parts.append(np.maximum(0.0, xis @ setup.G.T - setup.tau[None, :]))
    if not parts:
        return np.zeros(xis.shape[0])
    return np.linalg.norm(np.hstack(parts), axis=1)


def residual_score(setup: ProjectionSetup, xi_bar: np.ndarray) -> float:
    return float(residual_scores(setup, xi_bar)[0])


@dataclass
class PriestResult:
    best: ProjectedSample
    mu: np.ndarray
    sigma_mat: np.ndarray
    history: list
    params: PriestParams


def update_distribution(mu, sigma_mat, elite_xi, elite_costs, sigma, gamma):
    """Exponentially weighted mean/covariance refit with learning rate.

    Weights exp((cost - min cost) / gamma) favor low cost for gamma < 0; the
    min-cost shift only stabilizes the exponentials (the normalized weights
    are shift-invariant).
    """
    elite_xi = np.asarray(elite_xi, dtype=float)
    costs = np.asarray(elite_costs, dtype=float)
    weights = np.exp((costs - costs.min()) / gamma)
    wsum = weights.sum()
    weighted_mean = (weights[:, None] * elite_xi).sum(axis=0) / wsum
    new_mu = (1.0 - sigma) * mu + sigma * weighted_mean
    centered = elite_xi - new_mu[None, :]
    weighted_cov = (weights[:, None, None] * (centered[:, :, None] * centered[:, None, :])).sum(axis=0) / wsum
    new_sigma = (1.0 - sigma) * sigma_mat + sigma * weighted_cov
    return new_mu, new_sigma


def priest_optimize(
    setup: ProjectionSetup,
    c1,
    distribution: SamplingDistribution,
    params: PriestParams | None = None,
) -> PriestResult:
    """Projection-guided sampling loop.

    c1 is any callable Trajectory -> float (pointwise evaluation only).  The
    returned sample is the lowest-augmented-cost member of the final elite
    set; per-iteration bests are kept in the history.
    """
    params = params or PriestParams()
    rng = np.random.default_rng(params.seed)
    mu = distribution.mu.copy()
    sigma_mat = distribution.sigma_mat.copy()
    history = []
    best: ProjectedSample | None = None
    for _ in range(params.n_outer):
        samples = rng.multivariate_normal(mu, sigma_mat, size=params.n_batch, method="svd")
        projected = project(setup, samples, n_inner=params.n_inner)
        residuals = np.array([p.residual for p in projected])
        keep = np.argsort(residuals, kind="stable")[: params.n_constraint_elite]
        for i in keep:
            p = projected[i]
            p.aug_cost = float(c1(p.trajectory)) + params.residual_weight * p.residual
        scored = sorted((projected[i] for i in keep), key=lambda p: p.aug_cost)
        elites = scored[: params.n_elite]

        mu, sigma_mat = update_distribution(
            mu,
            sigma_mat,
            np.stack([p.projected for p in elites]),
            np.array([p.aug_cost for p in elites]),
            params.sigma,
            params.gamma,
        )

        best = elites[0]
        history.append(
            {
                "best_aug_cost": float(elites[0].aug_cost),
                "best_residual": float(elites[0].residual),
                "min_residual": float(residuals.min()),
            }
        )
    return PriestResult(best=best, mu=mu, sigma_mat=sigma_mat, history=history, params=params)


@dataclass
class CemResult:
    best_xi: np.ndarray
    best_cost: float
    best_trajectory: Trajectory
    mu: np.ndarray
    sigma_mat: np.ndarray
    history: list
    params: CemParams


def _cem_penalty(setup: ProjectionSetup, xis: np.ndarray) -> np.ndarray:
    """Linear max(0, g) penalties of the raw inequality constraints."""
    xis = np.atleast_2d(xis)
    n = xis.shape[0]
    total = np.zeros(n)
    pos = setup.axis_samples(xis, setup.basis.P)
    if setup.n_o:
        deltas = pos[:, None, :, :] - setup.obs_pos.transpose(0, 2, 1)[None, :, :, :]
        a = setup.obs_a[None, :, None]
        b = setup.obs_b[None, :, None]
        if setup.dim == 3:
            quad = deltas[:, :, 0] ** 2 / a**2 + deltas[:, :, 1] ** 2 / a**2 + deltas[:, :, 2] ** 2 / b**2
        else:
            quad = deltas[:, :, 0] ** 2 / a**2 + deltas[:, :, 1] ** 2 / b**2
        total += np.maximum(0.0, 1.0 - quad).sum(axis=(1, 2))
    if setup.v_max is not None:
        vel = setup.axis_samples(xis, setup.basis.Pdot)
        total += np.maximum(0.0, (vel**2).sum(axis=1) - setup.v_max**2).sum(axis=1)
    if setup.a_max is not None:
        acc = setup.axis_samples(xis, setup.basis.Pddot)
        total += np.maximum(0.0, (acc**2).sum(axis=1) - setup.a_max**2).sum(axis=1)
    if setup.G.shape[0]:
        total += np.maximum(0.0, xis @ setup.G.T - setup.tau[None, :]).sum(axis=1)
    return total


def cem_optimize(
    setup: ProjectionSetup,
    c1,
    distribution: SamplingDistribution,
    params: CemParams | None = None,
) -> CemResult:
    """Plain cross-entropy baseline: no projection, penalty-based evaluation,
    unweighted elite mean/covariance refit."""
    params = params or CemParams()
    rng = np.random.default_rng(params.seed)
    mu = distribution.mu.copy()
    sigma_mat = distribution.sigma_mat.copy()
    history = []
    best_xi, best_cost = None, np.inf
    for _ in range(params.iterations):
        samples = rng.multivariate_normal(mu, sigma_mat, size=params.n_batch, method="svd")
        costs = np.array([float(c1(setup.trajectory_of(x))) for x in samples])
        costs = costs + params.penalty_weight * _cem_penalty(setup, samples)
        order = np.argsort(costs, kind="stable")
        elites = samples[order[: params.n_elite]]
        mu = elites.mean(axis=0)
        centered = elites - mu[None, :]
        sigma_mat = (centered[:, :, None] * centered[:, None, :]).mean(axis=0)
        if costs[order[0]] < best_cost:
            best_cost = float(costs[order[0]])
            best_xi = samples[order[0]].copy()
        history.append({"best_cost": float(costs[order[0]]), "mean_cost": float(costs.mean())})
    return CemResult(
        best_xi=best_xi,
        best_cost=best_cost,
        best_trajectory=setup.trajectory_of(best_xi),
        mu=mu,
        sigma_mat=sigma_mat,
        history=history,
        params=params,
    )


def flatness_car(vel: np.ndarray, acc: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward speed and curvature of a planar trajectory.

    Curvature is undefined (NaN) where the speed is below threshold.
    vel/acc have shape (n_p, 2).
    """
    vel = np.asarray(vel, dtype=float)
    acc = np.asarray(acc, dtype=float)
    speed = np.hypot(vel[:, 0], vel[:, 1])
    kappa = np.full_like(speed, np.nan)
    ok = speed > _SPEED_EPS
    kappa[ok] = (acc[ok, 1] * vel[ok, 0] - acc[ok, 0] * vel[ok, 1]) / speed[ok] ** 3
    return speed, kappa


def barn_cost(pos: np.ndarray, vel: np.ndarray, acc: np.ndarray, line_start, line_end) -> float:
    """Clutter-navigation cost: squared accelerations, squared curvature, and
    squared orthogonal distance to the straight start-goal line.

    Curvature terms are skipped at samples with near-zero speed.
    """
    pos = np.asarray(pos, dtype=float)
    acc = np.asarray(acc, dtype=float)
    smooth = float(np.sum(acc[:, 0] ** 2 + acc[:, 1] ** 2))
    _, kappa = flatness_car(vel, acc)
    c_kappa = float(np.nansum(kappa**2))
    start = np.asarray(line_start, dtype=float)[:2]
    end = np.asarray(line_end, dtype=float)[:2]
    axis = end - start
    length = np.linalg.norm(axis)
    rel = pos[:, :2] - start
    if length < 1e-12:
        dist2 = (rel**2).sum(axis=1)
    else:
        u = axis / length
        along = rel @ u
        dist2 = (rel**2).sum(axis=1) - along**2
    c_p = float(np.sum(np.maximum(dist2, 0.0)))
    return smooth + c_kappa + c_p
