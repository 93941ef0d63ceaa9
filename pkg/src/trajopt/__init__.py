"""Trajectory optimization solvers built on one computational kernel:
cached saddle-point factorizations applied to batches of right-hand sides.

Solver families:

- :mod:`trajopt.solver_single` -- single-robot alternating minimization with
  polar collision reformulation.
- :mod:`trajopt.solver_batch` -- batched multi-initialization optimization
  for a multi-circle footprint with heading.
- :mod:`trajopt.solver_priest` -- projection-guided sampling plus a plain
  cross-entropy baseline.
- :mod:`trajopt.solver_multiagent` -- joint multi-agent optimization with
  pairwise sphere constraints and a staged penalty schedule.

:mod:`trajopt.bench` provides scenarios, metrics, the receding-horizon
driver, and the ``trajopt`` CLI.
"""

from . import basis, bench, geometry, qpcore, solver_batch, solver_multiagent, solver_priest, solver_single

__version__ = "0.1.0"

__all__ = [
    "basis",
    "bench",
    "geometry",
    "qpcore",
    "solver_batch",
    "solver_multiagent",
    "solver_priest",
    "solver_single",
    "__version__",
]
