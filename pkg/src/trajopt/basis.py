"""Time-sampled polynomial basis matrices and trajectory evaluation.

Trajectories are represented as ``x(t) = P @ xi`` where ``P`` holds the
Bernstein basis of the requested degree on normalized time
``tau = (t - t0) / (tf - t0)`` evaluated on a uniform grid.  ``Pdot`` and
``Pddot`` carry the exact analytic first and second derivatives (the chain
rule brings in 1/T and 1/T**2 factors), so velocity and acceleration samples
are ``Pdot @ xi`` and ``Pddot @ xi``.

Bernstein polynomials span the same space as monomials of equal degree but
keep the Gram matrices well conditioned at the default degree 10 (monomial
Gram condition is ~1e14 there, which poisons every downstream saddle
system).

Everything here is immutable after construction and safe to share between
solver instances.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np


@dataclass(frozen=True)
class TimeGrid:
    """Uniform planning grid with n_p samples covering [t0, tf]."""

    t0: float
    tf: float
    n_p: int
    timestamps: np.ndarray

    def __post_init__(self):
        if self.tf <= self.t0:
            raise ValueError(f"horizon must satisfy tf > t0, got [{self.t0}, {self.tf}]")
        if self.n_p < 2:
            raise ValueError(f"need at least two planning steps, got n_p={self.n_p}")

    @property
    def duration(self) -> float:
        return self.tf - self.t0

    @property
    def dt(self) -> float:
        return (self.tf - self.t0) / (self.n_p - 1)


@dataclass(frozen=True)
class BasisSet:
    """Sampled basis matrices P, Pdot, Pddot of shape (n_p, degree + 1)."""

    grid: TimeGrid
    degree: int
    P: np.ndarray
    Pdot: np.ndarray
    Pddot: np.ndarray

    @property
    def n_var(self) -> int:
        return self.degree + 1

    @property
    def n_p(self) -> int:
        return self.grid.n_p


@dataclass(frozen=True)
class TrajectoryCoeffs:
    """Per-axis coefficient vectors, each of length degree + 1."""

    xi_x: np.ndarray
    xi_y: np.ndarray
    xi_z: np.ndarray | None = None
    xi_psi: np.ndarray | None = None


@dataclass(frozen=True)
class AxisSamples:
    pos: np.ndarray
    vel: np.ndarray
    acc: np.ndarray


@dataclass(frozen=True)
class TrajectorySamples:
    """Sampled position/velocity/acceleration per axis on the grid."""

    x: AxisSamples
    y: AxisSamples
    z: AxisSamples | None = None
    psi: AxisSamples | None = None


@dataclass
class Trajectory:
    """Dense trajectory samples used by metrics and the benchmark harness.

    pos/vel/acc have shape (n_p, dim); psi is optional heading samples.
    """

    t: np.ndarray
    pos: np.ndarray
    vel: np.ndarray
    acc: np.ndarray
    psi: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.pos.shape[1]


@dataclass(frozen=True)
class AxisBoundary:
    """Boundary values for one axis: position/velocity/acceleration at t0 and tf."""

    p0: float
    v0: float = 0.0
    a0: float = 0.0
    p1: float = 0.0
    v1: float = 0.0
    a1: float = 0.0

    def values(self, start_orders=(0, 1, 2), end_orders=(0, 1, 2)) -> np.ndarray:
        start = {0: self.p0, 1: self.v0, 2: self.a0}
        end = {0: self.p1, 1: self.v1, 2: self.a1}
        return np.array([start[o] for o in start_orders] + [end[o] for o in end_orders])


def _bernstein_matrix(tau: np.ndarray, degree: int) -> np.ndarray:
    return np.stack(
        [comb(degree, j) * tau**j * (1.0 - tau) ** (degree - j) for j in range(degree + 1)],
        axis=1,
    )


def _col(mat: np.ndarray, j: int) -> np.ndarray:
    return mat[:, j] if 0 <= j < mat.shape[1] else np.zeros(mat.shape[0])


def build_basis(t0: float, tf: float, n_p: int, degree: int) -> BasisSet:
    """Build sampled Bernstein basis matrices on a uniform grid.

    Basis functions are B(j, degree) on tau in [0, 1]; derivatives use the
    exact degree-reduction identities, rescaled to real time.
    """
    if tf <= t0:
        raise ValueError(f"horizon must satisfy tf > t0, got [{t0}, {tf}]")
    if n_p < 2:
        raise ValueError(f"need at least two planning steps, got n_p={n_p}")
    if degree < 0:
        raise ValueError(f"degree must be non-negative, got {degree}")

    timestamps = np.linspace(t0, tf, n_p)
    grid = TimeGrid(t0=float(t0), tf=float(tf), n_p=int(n_p), timestamps=timestamps)
    duration = tf - t0
    tau = (timestamps - t0) / duration
    n = degree

    P = _bernstein_matrix(tau, n)
    Pdot = np.zeros_like(P)
    Pddot = np.zeros_like(P)
    if n >= 1:
        lower1 = _bernstein_matrix(tau, n - 1)
        for j in range(n + 1):
            Pdot[:, j] = n * (_col(lower1, j - 1) - _col(lower1, j)) / duration
    if n >= 2:
        lower2 = _bernstein_matrix(tau, n - 2)
        for j in range(n + 1):
            Pddot[:, j] = (
                n * (n - 1) * (_col(lower2, j - 2) - 2.0 * _col(lower2, j - 1) + _col(lower2, j)) / duration**2
            )
    for m in (timestamps, P, Pdot, Pddot):
        m.setflags(write=False)
    return BasisSet(grid=grid, degree=int(degree), P=P, Pdot=Pdot, Pddot=Pddot)


def _eval_axis(basis: BasisSet, xi: np.ndarray) -> AxisSamples:
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (basis.n_var,):
        raise ValueError(f"coefficient length {xi.shape} does not match basis columns {basis.n_var}")
    return AxisSamples(pos=basis.P @ xi, vel=basis.Pdot @ xi, acc=basis.Pddot @ xi)


def eval_trajectory(basis: BasisSet, coeffs: TrajectoryCoeffs) -> TrajectorySamples:
    """Evaluate position/velocity/acceleration samples for each axis."""
    return TrajectorySamples(
        x=_eval_axis(basis, coeffs.xi_x),
        y=_eval_axis(basis, coeffs.xi_y),
        z=_eval_axis(basis, coeffs.xi_z) if coeffs.xi_z is not None else None,
        psi=_eval_axis(basis, coeffs.xi_psi) if coeffs.xi_psi is not None else None,
    )


def boundary_matrix(basis: BasisSet, start_orders=(0, 1, 2), end_orders=(0, 1, 2)) -> np.ndarray:
    """Equality rows pinning derivatives at the first/last grid sample.

    Row order matches AxisBoundary.values(start_orders, end_orders).
    """
    mats = {0: basis.P, 1: basis.Pdot, 2: basis.Pddot}
    rows = [mats[o][0] for o in start_orders] + [mats[o][-1] for o in end_orders]
    return np.vstack(rows)


def straight_line_coeffs(basis: BasisSet, start: np.ndarray, goal: np.ndarray) -> np.ndarray:
    """Least-squares coefficients of the straight constant-speed path per axis.

    Returns an array of shape (dim, n_var).  Exact for degree >= 1 since the
    line is affine in tau.
    """
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    line = start[None, :] + (goal - start)[None, :] * np.linspace(0.0, 1.0, basis.n_p)[:, None]
    sol, *_ = np.linalg.lstsq(basis.P, line, rcond=None)
    return sol.T


def fit_coeffs(basis: BasisSet, samples: np.ndarray) -> np.ndarray:
    """Least-squares coefficients reproducing the given position samples."""
    samples = np.asarray(samples, dtype=float)
    sol, *_ = np.linalg.lstsq(basis.P, samples, rcond=None)
    return sol
