"""Gauss-Newton smoothing of nonlinear state-space models with additive noise.

The model is::

    X_0     = X^_0 + n_0,                   n_0 ~ N(0, P_0)
    X_{k+1} = f_k(X_k) + w_k,               w_k ~ N(0, Q_k)
    Z_j     = h_j(X_{i1}, X_{i2}, ...) + V_j,   V_j ~ N(0, R_j)

Each iteration linearizes about the current trajectory ``chi`` into a
:class:`~fgsmooth.problem.LinearProblem` for the correction ``dchi``, solves it
with any backend and applies ``chi <- chi + dchi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NonFiniteJacobian, SingularCovariance, SmoothingError, SolverError, SolverFailure
from .numeric import Precision
from .problem import LinearProblem, ObservationFactor, PriorFactor, PropagationFactor, VariableLayout, eval_cost
from .solvers import SOLVERS, solve


@dataclass(frozen=True)
class Dynamics:
    """Transition ``x_{k+1} = f(x_k) + w`` with ``w ~ N(0, Q)`` and Jacobian ``jac(x_k) = df/dx``."""

    f: Callable[[np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray], np.ndarray]
    Q: np.ndarray


@dataclass(frozen=True)
class Measurement:
    """Observation ``z = h(x_{i1}, x_{i2}, ...) + v`` with ``v ~ N(0, R)``.

    ``h`` and ``jac`` take the involved states as separate arguments, in the
    order of ``indices``; ``jac`` returns one block ``dh/dx_i`` per state.
    """

    indices: tuple[int, ...]
    h: Callable[..., np.ndarray]
    jac: Callable[..., Sequence[np.ndarray]]
    z: np.ndarray
    R: np.ndarray


@dataclass(frozen=True)
class NonlinearProblem:
    layout: VariableLayout
    prior_mean: np.ndarray
    P0: np.ndarray
    dynamics: tuple[Dynamics, ...]
    measurements: tuple[Measurement, ...]
    initial: np.ndarray

    def __post_init__(self):
        if len(self.dynamics) != self.layout.count - 1:
            raise ValueError(f"need {self.layout.count - 1} transitions, got {len(self.dynamics)}")
        if np.shape(self.initial) != (self.layout.total,):
            raise ValueError("initial guess does not match the layout")


@dataclass(frozen=True)
class GNConfig:
    """Gauss-Newton settings.

    ``threshold=None`` means ``1e-9 * (state dimension)``.  ``halving`` enables
    a guard that halves a step that would increase the cost, at most
    ``max_halvings`` times.
    """

    max_iterations: int = 50
    threshold: float | None = None
    solver: str = "batch"
    precision: Precision | str = Precision.DOUBLE
    halving: bool = False
    max_halvings: int = 4

    def __post_init__(self):
        if self.threshold is not None and not self.threshold > 0:
            raise ValueError("threshold must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}")
        object.__setattr__(self, "precision", Precision.parse(self.precision))


@dataclass(frozen=True)
class GNIteration:
    cost: float              # cost at the linearization point
    step_norm: float
    new_cost: float          # cost after the accepted step
    halvings: int = 0


@dataclass
class GNResult:
    x: np.ndarray
    trace: list[GNIteration] = field(default_factory=list)
    converged: bool = False

    @property
    def max_iterations_reached(self) -> bool:
        return not self.converged


def _finite(M, what: str) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    if not np.all(np.isfinite(M)):
        raise NonFiniteJacobian(f"{what} has non-finite entries")
    return M


def linearize(nlp: NonlinearProblem, chi) -> LinearProblem:
    """Linear problem in ``dchi`` about ``chi``.

    Residuals are ``a_0 = X^_0 - X_0``, ``a_{k+1} = f_k(X_k) - X_{k+1}`` and
    ``c_j = Z_j - h_j(chi)``; blocks are the Jacobians at ``chi``.
    """
    chi = np.asarray(chi, dtype=np.float64)
    L = nlp.layout
    xs = L.split(chi)
    prior = PriorFactor(np.asarray(nlp.prior_mean, dtype=float) - xs[0], nlp.P0)
    props = []
    for k, dyn in enumerate(nlp.dynamics):
        F = _finite(dyn.jac(xs[k]), f"Jacobian of transition {k}")
        props.append(PropagationFactor(k, F, np.asarray(dyn.f(xs[k]), dtype=float) - xs[k + 1], dyn.Q))
    obs = []
    for j, m in enumerate(nlp.measurements):
        args = [xs[i] for i in m.indices]
        blocks = [(i, _finite(H, f"Jacobian of measurement {j} w.r.t. state {i}"))
                  for i, H in zip(m.indices, m.jac(*args))]
        c = np.atleast_1d(np.asarray(m.z, dtype=float) - np.asarray(m.h(*args), dtype=float))
        obs.append(ObservationFactor(blocks, c, m.R))
    return LinearProblem(L, prior, props, obs)


def nonlinear_cost(nlp: NonlinearProblem, chi) -> float:
    """Negative log-likelihood (up to a constant and a factor 2); ``nan`` if a covariance is singular."""
    chi = np.asarray(chi, dtype=np.float64)
    try:
        return eval_cost(linearize(nlp, chi), np.zeros_like(chi))
    except SingularCovariance:
        return math.nan


def gn_solve(nlp: NonlinearProblem, cfg: GNConfig | None = None) -> GNResult:
    """Iterate ``chi <- chi + dchi`` until ``|dchi| < threshold`` or ``max_iterations``.

    Backend failures are re-raised as :class:`SolverFailure`; hitting the
    iteration limit only leaves ``converged`` false.
    """
    cfg = cfg or GNConfig()
    thr = cfg.threshold if cfg.threshold is not None else 1e-9 * nlp.layout.total
    chi = np.array(nlp.initial, dtype=np.float64)
    result = GNResult(chi)
    cost = nonlinear_cost(nlp, chi)
    for _ in range(cfg.max_iterations):
        lp = linearize(nlp, chi)
        try:
            dx = solve(lp, cfg.solver, cfg.precision).x.astype(np.float64)
        except SolverError as exc:
            raise SolverFailure(f"{cfg.solver} backend failed: {type(exc).__name__}: {exc}") from exc
        step = float(np.linalg.norm(dx))
        new = chi + dx
        new_cost = nonlinear_cost(nlp, new)
        halvings = 0
        while cfg.halving and halvings < cfg.max_halvings and new_cost > cost:
            dx = 0.5 * dx
            halvings += 1
            new = chi + dx
            new_cost = nonlinear_cost(nlp, new)
        chi = new
        result.trace.append(GNIteration(cost, step, new_cost, halvings))
        cost = new_cost
        if step < thr:
            result.converged = True
            break
    result.x = chi
    return result


def range_chain_problem(n_states: int = 5, dt: float = 0.5, d: float = 1.0, seed: int = 0,
                        noise: bool = True) -> tuple[NonlinearProblem, np.ndarray]:
    """Small nonlinear desk problem with range measurements.

    State ``(p, v)``.  Dynamics ``p' = p + dt v``, ``v' = v - dt * 0.5 * sin(p)``.
    Each state after the first is observed by its range ``sqrt(p^2 + d^2)`` to a
    beacon at lateral offset ``d``; one pairwise factor measures
    ``sqrt((p_j - p_i)^2 + d^2)`` between the second and last states.  The
    initial guess is dead reckoning from a perturbed initial state.

    Returns the problem and the true trajectory.
    """
    rng = np.random.default_rng(seed)
    g = 0.5
    layout = VariableLayout.uniform(n_states, 2)
    Q = np.diag([1e-3, 1e-2])
    P0 = np.diag([0.1, 0.1])
    R = np.array([[1e-2]])

    def f(x):
        return np.array([x[0] + dt * x[1], x[1] - dt * g * np.sin(x[0])])

    def f_jac(x):
        return np.array([[1.0, dt], [-dt * g * np.cos(x[0]), 1.0]])

    def rng_h(x):
        return np.array([math.hypot(x[0], d)])

    def rng_jac(x):
        return [np.array([[x[0] / math.hypot(x[0], d), 0.0]])]

    def pair_h(xi, xj):
        return np.array([math.hypot(xj[0] - xi[0], d)])

    def pair_jac(xi, xj):
        s = (xj[0] - xi[0]) / math.hypot(xj[0] - xi[0], d)
        return [np.array([[-s, 0.0]]), np.array([[s, 0.0]])]

    scale = 1.0 if noise else 0.0
    truth = [np.array([0.5, 1.0])]
    for _ in range(n_states - 1):
        truth.append(f(truth[-1]) + scale * rng.multivariate_normal(np.zeros(2), Q))
    prior_mean = truth[0] + scale * rng.multivariate_normal(np.zeros(2), P0)
    meas = []
    for k in range(1, n_states):
        z = rng_h(truth[k]) + scale * rng.normal(0.0, math.sqrt(R[0, 0]), 1)
        meas.append(Measurement((k,), rng_h, rng_jac, z, R))
    i, j = 1, n_states - 1
    z = pair_h(truth[i], truth[j]) + scale * rng.normal(0.0, math.sqrt(R[0, 0]), 1)
    meas.append(Measurement((i, j), pair_h, pair_jac, z, R))

    guess = [prior_mean + np.array([0.2, -0.2])]
    for _ in range(n_states - 1):
        guess.append(f(guess[-1]))
    dyn = tuple(Dynamics(f, f_jac, Q) for _ in range(n_states - 1))
    nlp = NonlinearProblem(layout, prior_mean, P0, dyn, tuple(meas), np.concatenate(guess))
    return nlp, np.concatenate(truth)
