"""Factor-graph smoothing with solvers that never invert process or prior covariances."""

from .errors import *  # noqa: F401,F403
from .numeric import Precision, chol_solve, condition_number, qr_solve
from .problem import (
    CloneSchedule,
    LinearProblem,
    ObservationFactor,
    PriorFactor,
    PropagationFactor,
    VariableLayout,
    assemble_stacked,
    build_clone_schedule,
    eval_cost,
)
from .solvers import SOLVERS, Solution, solve, solve_batch, solve_bifm, solve_scbifm, solve_sqrt

__version__ = "0.1.0"
