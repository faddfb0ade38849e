from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..numeric import Precision
from ..problem import LinearProblem, VariableLayout


@dataclass(frozen=True)
class Solution:
    """Stacked correction ``dx`` and, for Kalman-type solvers, per-state marginal covariances."""

    x: np.ndarray
    layout: VariableLayout
    precision: Precision
    marginals: Optional[tuple[np.ndarray, ...]] = None

    def __post_init__(self):
        if self.x.shape != (self.layout.total,):
            raise ValueError(f"solution length {self.x.shape} does not match layout total {self.layout.total}")

    def state(self, k: int) -> np.ndarray:
        return self.x[self.layout.slice(k)]

    def states(self) -> list[np.ndarray]:
        return self.layout.split(self.x)


class CastProblem:
    """Problem data rounded to the working precision, so no float64 array leaks into a solve."""

    def __init__(self, p: LinearProblem, precision: Precision):
        dt = precision.dtype
        self.problem = p
        self.precision = precision
        self.dtype = dt
        self.layout = p.layout
        self.N = p.N
        self.a0 = p.prior.residual.astype(dt)
        self.P0 = p.prior.cov.astype(dt)
        self.F = [f.F.astype(dt) for f in p.props]
        self.a = [f.residual.astype(dt) for f in p.props]
        self.Q = [f.cov.astype(dt) for f in p.props]
        self.obs = [
            ([(i, H.astype(dt)) for i, H in o.blocks], o.residual.astype(dt), o.cov.astype(dt))
            for o in p.obs
        ]

    def obs_at(self, k: int):
        """Observations anchored at time ``k`` as ``(blocks, c, R)`` triples, in list order."""
        return [ob for ob, o in zip(self.obs, self.problem.obs) if o.anchor == k]


def check_dtype(precision: Precision, *arrays) -> None:
    for a in arrays:
        if a.dtype != precision.dtype:
            raise AssertionError(f"precision leak: got {a.dtype}, expected {precision.dtype}")
