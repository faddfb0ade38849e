"""The four interchangeable linear least-squares backends."""

from __future__ import annotations

from ..numeric import Precision
from ..problem import LinearProblem
from .base import Solution
from .batch import BatchSplit, default_split, solve_batch
from .bifm import solve_bifm
from .scbifm import solve_scbifm
from .sqrt import solve_sqrt

SOLVERS = {
    "sqrt": solve_sqrt,
    "batch": lambda p, precision=Precision.DOUBLE: solve_batch(p, None, precision),
    "bifm": solve_bifm,
    "scbifm": solve_scbifm,
}


def solve(p: LinearProblem, solver: str = "scbifm", precision: Precision | str = Precision.DOUBLE) -> Solution:
    try:
        fn = SOLVERS[solver]
    except KeyError:
        raise ValueError(f"unknown solver {solver!r}; choose from {sorted(SOLVERS)}") from None
    return fn(p, Precision.parse(precision))


__all__ = [
    "SOLVERS",
    "BatchSplit",
    "Solution",
    "default_split",
    "solve",
    "solve_batch",
    "solve_bifm",
    "solve_scbifm",
    "solve_sqrt",
]
