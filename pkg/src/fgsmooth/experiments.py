"""Linear navigation toy problem and the conditioning experiments built on it.

State ``X = (b, v, p)``: accelerometer bias, velocity and position along a
line.  The dynamics and the two relative position fixes are::

    X_{k+1} = [[1, 0, 0], [-dt, 1, 0], [0, dt, 1]] X_k + (0, 1, 0) u_k + w_k
    Z_3 = p_3 - p_0 + V,    Z_4 = p_4 - p_2 + V

The ``sigma_*`` values are standard deviations.  Process noise is a random
walk over one step, so its standard deviations are ``sqrt(dt) * sigma`` and
``Q = diag(dt * sigma^2)``.  As ``dt`` shrinks, ``Q`` shrinks and the whitened
Jacobian becomes ill conditioned.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import SmoothingError
from .numeric import Precision, condition_number
from .problem import LinearProblem, ObservationFactor, PriorFactor, PropagationFactor, VariableLayout
from .solvers import SOLVERS, solve
from .solvers.sqrt import whitened_system

DEFAULT_DTS = (1e-1, 1e-2, 1e-3, 1e-4)
DEFAULT_SOLVERS = ("sqrt", "batch", "scbifm")
DEFAULT_PRECISIONS = ("single", "double")

_POS = np.array([0.0, 0.0, 1.0])
_INPUT = np.array([0.0, 1.0, 0.0])


@dataclass(frozen=True)
class ToyConfig:
    dt: float = 1e-2
    N: int = 4
    sigma_b: float = 1e-3
    sigma_acc: float = 1e-2
    sigma_int: float = 1e-3
    sigma_b0: float = 1e-2
    sigma_v0: float = 1.0
    sigma_p0: float = 1.0
    sigma_z: float = 0.1
    # true initial state, also used as the prior mean; defaults to one prior sigma per component
    x0: tuple[float, float, float] = (1e-2, 1.0, 1.0)
    u: float | tuple[float, ...] = 1.0
    noise: bool = False
    remove_p0: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.N < 4:
            raise ValueError("the toy graph needs N >= 4")
        stds = (self.sigma_b, self.sigma_acc, self.sigma_int, self.sigma_b0, self.sigma_v0, self.sigma_p0, self.sigma_z)
        if any(s < 0 for s in stds):
            raise ValueError("standard deviations must be non-negative")

    def inputs(self) -> np.ndarray:
        if np.ndim(self.u) == 0:
            return np.full(self.N, float(self.u))
        u = np.asarray(self.u, dtype=float)
        if u.shape != (self.N,):
            raise ValueError(f"need {self.N} inputs, got {u.shape}")
        return u


def transition(dt: float) -> np.ndarray:
    return np.array([[1.0, 0.0, 0.0], [-dt, 1.0, 0.0], [0.0, dt, 1.0]])


def process_noise_std(cfg: ToyConfig) -> np.ndarray:
    return math.sqrt(cfg.dt) * np.array([cfg.sigma_b, cfg.sigma_acc, cfg.sigma_int])


def process_noise_cov(cfg: ToyConfig) -> np.ndarray:
    return np.diag(process_noise_std(cfg) ** 2)


def prior_cov(cfg: ToyConfig) -> np.ndarray:
    return np.diag(np.array([cfg.sigma_b0, cfg.sigma_v0, cfg.sigma_p0]) ** 2)


@dataclass(frozen=True)
class ToyNoise:
    """Standard normal draws for one Monte-Carlo run; scaled per configuration."""

    x0: np.ndarray
    w: np.ndarray
    v: np.ndarray

    @classmethod
    def draw(cls, rng: np.random.Generator, N: int) -> "ToyNoise":
        return cls(rng.standard_normal(3), rng.standard_normal((N, 3)), rng.standard_normal(2))

    @classmethod
    def zero(cls, N: int) -> "ToyNoise":
        return cls(np.zeros(3), np.zeros((N, 3)), np.zeros(2))


def simulate(cfg: ToyConfig, noise: ToyNoise | None = None):
    """True trajectory ``(N+1, 3)`` and the two relative position measurements."""
    if noise is None:
        noise = ToyNoise.draw(np.random.default_rng(cfg.seed), cfg.N) if cfg.noise else ToyNoise.zero(cfg.N)
    F = transition(cfg.dt)
    u = cfg.inputs()
    x0_std = np.array([cfg.sigma_b0, cfg.sigma_v0, 0.0 if cfg.remove_p0 else cfg.sigma_p0])
    X = np.empty((cfg.N + 1, 3))
    X[0] = np.asarray(cfg.x0, dtype=float) + x0_std * noise.x0
    w_std = process_noise_std(cfg)
    for k in range(cfg.N):
        if k == 0 and cfg.remove_p0:
            # same arithmetic as the first propagation factor built by make_toy
            X[1] = F[:, :2] @ X[0, :2] + (_INPUT * u[0] + F[:, 2] * X[0, 2]) + w_std * noise.w[0]
        else:
            X[k + 1] = F @ X[k] + _INPUT * u[k] + w_std * noise.w[k]
    z3 = X[3, 2] - X[0, 2] + cfg.sigma_z * noise.v[0]
    z4 = X[4, 2] - X[2, 2] + cfg.sigma_z * noise.v[1]
    return X, (z3, z4)


def make_toy(cfg: ToyConfig, noise: ToyNoise | None = None) -> tuple[LinearProblem, np.ndarray]:
    """Build the linear problem (linearized about zero) and the stacked true trajectory.

    With ``remove_p0`` the known initial position is eliminated: ``X_0`` shrinks
    to ``(b_0, v_0)``, ``p_0`` moves into the first propagation residual, and
    ``Z_3`` becomes a unary fix on ``p_3``.
    """
    X, (z3, z4) = simulate(cfg, noise)
    F = transition(cfg.dt)
    Q = process_noise_cov(cfg)
    P0 = prior_cov(cfg)
    u = cfg.inputs()
    R = np.array([[cfg.sigma_z**2]])
    x0 = np.asarray(cfg.x0, dtype=float)
    H = _POS[None, :]

    props = []
    if cfg.remove_p0:
        p0 = x0[2]
        dims = (2,) + (3,) * cfg.N
        prior = PriorFactor(x0[:2], P0[:2, :2])
        props.append(PropagationFactor(0, F[:, :2], _INPUT * u[0] + F[:, 2] * p0, Q))
        obs3 = ObservationFactor([(3, H)], [z3 + p0], R)
        truth = np.concatenate([X[0, :2], X[1:].ravel()])
    else:
        dims = (3,) * (cfg.N + 1)
        prior = PriorFactor(x0, P0)
        props.append(PropagationFactor(0, F, _INPUT * u[0], Q))
        obs3 = ObservationFactor([(0, -H), (3, H)], [z3], R)
        truth = X.ravel()
    for k in range(1, cfg.N):
        props.append(PropagationFactor(k, F, _INPUT * u[k], Q))
    obs4 = ObservationFactor([(2, -H), (4, H)], [z4], R)
    return LinearProblem(VariableLayout(dims), prior, props, [obs3, obs4]), truth


def distance(x, ref) -> float:
    """Euclidean norm of the stacked state difference, evaluated in float64."""
    return float(np.linalg.norm(np.asarray(x, dtype=np.float64) - np.asarray(ref, dtype=np.float64)))


@dataclass(frozen=True)
class SweepRow:
    dt: float
    solver: str
    precision: str
    cond: float
    distance: float


@dataclass(frozen=True)
class MonteCarloRow:
    run: int
    dt: float
    solver: str
    precision: str
    distance: float


@dataclass
class SweepResult:
    sweep: list[SweepRow] = field(default_factory=list)
    monte_carlo: list[MonteCarloRow] = field(default_factory=list)

    def distance(self, dt: float, solver: str, precision: str) -> float:
        for r in self.sweep:
            if r.dt == dt and r.solver == solver and r.precision == precision:
                return r.distance
        raise KeyError((dt, solver, precision))

    def conditions(self) -> dict[float, float]:
        return {r.dt: r.cond for r in self.sweep}

    def averages(self) -> dict[tuple[float, str, str], float]:
        """Mean Monte-Carlo distance per ``(dt, solver, precision)``."""
        acc: dict[tuple[float, str, str], list[float]] = {}
        for r in self.monte_carlo:
            acc.setdefault((r.dt, r.solver, r.precision), []).append(r.distance)
        return {key: float(np.mean(v)) for key, v in acc.items()}


def _solve_distance(p, solver, precision, ref) -> float:
    try:
        return distance(solve(p, solver, precision).x, ref)
    except SmoothingError:
        return math.inf


def _check_names(solvers, precisions):
    for s in solvers:
        if s not in SOLVERS:
            raise ValueError(f"unknown solver {s!r}")
    return [Precision.parse(pr).value for pr in precisions]


def run_dt_sweep(dts: Iterable[float] = DEFAULT_DTS, solvers: Sequence[str] = DEFAULT_SOLVERS,
                 precisions: Sequence[str] = DEFAULT_PRECISIONS, cfg: ToyConfig | None = None) -> SweepResult:
    """Noise-free sweep: for each ``dt``, ``cond(A~)`` and every solver's distance to the true trajectory.

    With noise off and the prior mean at the true initial state, the true
    trajectory zeroes every residual and is therefore the exact minimizer.
    Solver failures are recorded as an infinite distance.
    """
    cfg = cfg or ToyConfig()
    precisions = _check_names(solvers, precisions)
    result = SweepResult()
    for dt in dts:
        c = replace(cfg, dt=float(dt), noise=False)
        p, truth = make_toy(c)
        cond = condition_number(whitened_system(p, Precision.DOUBLE)[0])
        for s in solvers:
            for pr in precisions:
                result.sweep.append(SweepRow(c.dt, s, pr, cond, _solve_distance(p, s, pr, truth)))
    return result


def run_monte_carlo(runs: int = 200, cfg: ToyConfig | None = None, dts: Iterable[float] = DEFAULT_DTS,
                    solvers: Sequence[str] = DEFAULT_SOLVERS, precisions: Sequence[str] = DEFAULT_PRECISIONS,
                    seed: int = 0) -> SweepResult:
    """Noisy runs; every distance is measured to the float64 robust batch solution.

    Run ``r`` draws its standard normals from child ``r`` of
    ``SeedSequence(seed)``, and the same draws are reused for every ``dt``, so
    the output depends only on ``seed`` and not on execution order.
    """
    cfg = cfg or ToyConfig()
    precisions = _check_names(solvers, precisions)
    dts = [float(dt) for dt in dts]
    children = np.random.SeedSequence(seed).spawn(runs)
    result = SweepResult()
    for run, child in enumerate(children):
        draws = ToyNoise.draw(np.random.default_rng(child), cfg.N)
        for dt in dts:
            p, _ = make_toy(replace(cfg, dt=dt, noise=True), draws)
            ref = solve(p, "batch", Precision.DOUBLE).x
            for s in solvers:
                for pr in precisions:
                    result.monte_carlo.append(MonteCarloRow(run, dt, s, pr, _solve_distance(p, s, pr, ref)))
    return result


SWEEP_HEADER = ("dt", "solver", "precision", "cond", "distance")
MONTE_CARLO_HEADER = ("run", "dt", "solver", "precision", "distance")


def fmt(x: float) -> str:
    """Scientific notation with 9 significant digits."""
    return f"{x:.8e}"


def write_sweep_csv(result: SweepResult, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for r in result.sweep:
        w.writerow([fmt(r.dt), r.solver, r.precision, fmt(r.cond), fmt(r.distance)])


def write_monte_carlo_csv(result: SweepResult, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(MONTE_CARLO_HEADER)
    for r in result.monte_carlo:
        w.writerow([r.run, fmt(r.dt), r.solver, r.precision, fmt(r.distance)])
