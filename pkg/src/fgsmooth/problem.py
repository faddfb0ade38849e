"""Linearized factor-graph least-squares problem.

The cost is::

    |x_0 - a_0|^2_{P_0}
      + sum_k |x_{k+1} - F_k x_k - a_{k+1}|^2_{Q_k}
      + sum_j |sum_{i in obs_j} H_i x_i - c_j|^2_{R_j}

where ``|e|^2_S = e^T S^-1 e``.  Covariances are stored as-is (not in
information or square-root form) so that singular ``P_0`` and ``Q_k`` stay
representable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .errors import DimensionMismatch, InvalidCovariance, ProblemError, SingularCovariance

PSD_TOL = 1e-9
SYM_TOL = 1e-6


def _frozen(a, ndim: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    if ndim == 2 and arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if ndim == 1 and arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != ndim:
        raise DimensionMismatch(f"{name}: expected {ndim}-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ProblemError(f"{name}: non-finite entries")
    arr.setflags(write=False)
    return arr


def check_psd(cov: np.ndarray, name: str, *, definite: bool = False) -> None:
    """Validate symmetry (1e-6 relative) and PSD-ness (min eigenvalue >= -1e-9 * trace)."""
    n = cov.shape[0]
    if cov.shape != (n, n):
        raise DimensionMismatch(f"{name}: covariance must be square, got {cov.shape}")
    scale = max(np.abs(cov).max(initial=0.0), np.finfo(float).tiny)
    if np.abs(cov - cov.T).max(initial=0.0) > SYM_TOL * scale:
        raise InvalidCovariance(f"{name}: covariance is not symmetric")
    if definite:
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise InvalidCovariance(f"{name}: covariance must be positive definite") from None
        return
    if n and np.linalg.eigvalsh(cov).min() < -PSD_TOL * max(np.trace(cov), 0.0):
        raise InvalidCovariance(f"{name}: covariance is not positive semidefinite")


@dataclass(frozen=True)
class VariableLayout:
    """Per-variable dimensions of the stacked state ``(X_0, ..., X_N)``."""

    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims or any(d <= 0 for d in dims):
            raise DimensionMismatch(f"variable dimensions must be positive, got {dims}")
        object.__setattr__(self, "dims", dims)

    @classmethod
    def uniform(cls, count: int, dim: int) -> "VariableLayout":
        return cls((dim,) * count)

    @property
    def count(self) -> int:
        return len(self.dims)

    @cached_property
    def offsets(self) -> tuple[int, ...]:
        return tuple(int(o) for o in np.concatenate([[0], np.cumsum(self.dims)]))

    @property
    def total(self) -> int:
        return self.offsets[-1]

    def slice(self, i: int) -> slice:
        return slice(self.offsets[i], self.offsets[i + 1])

    def split(self, x: np.ndarray) -> list[np.ndarray]:
        return [x[self.slice(i)] for i in range(self.count)]


@dataclass(frozen=True)
class PriorFactor:
    residual: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "residual", _frozen(self.residual, 1, "prior residual"))
        object.__setattr__(self, "cov", _frozen(self.cov, 2, "cov of prior"))


@dataclass(frozen=True)
class PropagationFactor:
    """Row ``x_{k+1} - F x_k = a`` with covariance ``Q``.

    In the linearized problem the known input ``u_k`` and the residual
    ``a_{k+1}`` are the same vector; ``u`` is kept as an alias.
    """

    k: int
    F: np.ndarray
    residual: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(self, "F", _frozen(self.F, 2, f"F_{self.k}"))
        object.__setattr__(self, "residual", _frozen(self.residual, 1, f"residual a_{self.k + 1}"))
        object.__setattr__(self, "cov", _frozen(self.cov, 2, f"cov of propagation {self.k}"))

    @property
    def u(self) -> np.ndarray:
        return self.residual


@dataclass(frozen=True)
class ObservationFactor:
    """Row ``sum_i H_i x_i = c`` with positive definite covariance ``R``.

    ``blocks`` is an ordered sequence of ``(state index, H_i)`` pairs; the
    largest index is the factor's anchor time.
    """

    blocks: tuple[tuple[int, np.ndarray], ...]
    residual: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        blocks = tuple((int(i), _frozen(H, 2, f"H_{i}")) for i, H in self.blocks)
        if not blocks:
            raise DimensionMismatch("observation factor involves no state")
        idx = [i for i, _ in blocks]
        if len(set(idx)) != len(idx):
            raise DimensionMismatch(f"observation involves repeated indices {idx}")
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "residual", _frozen(self.residual, 1, "observation residual"))
        object.__setattr__(self, "cov", _frozen(self.cov, 2, "cov of observation"))

    @property
    def indices(self) -> tuple[int, ...]:
        return tuple(i for i, _ in self.blocks)

    @property
    def anchor(self) -> int:
        return max(self.indices)

    @property
    def dim(self) -> int:
        return self.residual.shape[0]

    @property
    def is_unary(self) -> bool:
        return len(self.blocks) == 1


@dataclass(frozen=True)
class LinearProblem:
    layout: VariableLayout
    prior: PriorFactor
    props: tuple[PropagationFactor, ...]
    obs: tuple[ObservationFactor, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "props", tuple(sorted(self.props, key=lambda f: f.k)))
        object.__setattr__(self, "obs", tuple(self.obs))
        self.validate()

    @property
    def N(self) -> int:
        """Index of the last state."""
        return self.layout.count - 1

    @property
    def is_unary(self) -> bool:
        return all(o.is_unary for o in self.obs)

    def validate(self) -> None:
        dims = self.layout.dims
        p = self.prior
        if p.residual.shape != (dims[0],) or p.cov.shape != (dims[0], dims[0]):
            raise DimensionMismatch("prior dimensions do not match X_0")
        check_psd(p.cov, "prior")
        if [f.k for f in self.props] != list(range(self.N)):
            raise DimensionMismatch("need exactly one propagation factor per consecutive pair (k, k+1)")
        for f in self.props:
            d0, d1 = dims[f.k], dims[f.k + 1]
            if f.F.shape != (d1, d0) or f.residual.shape != (d1,) or f.cov.shape != (d1, d1):
                raise DimensionMismatch(f"propagation {f.k}: inconsistent block sizes")
            check_psd(f.cov, f"Q_{f.k}")
        for j, o in enumerate(self.obs):
            for i, H in o.blocks:
                if not 0 <= i <= self.N:
                    raise DimensionMismatch(f"observation {j} references missing state {i}")
                if H.shape != (o.dim, dims[i]):
                    raise DimensionMismatch(f"observation {j}: H_{i} has shape {H.shape}")
            if o.cov.shape != (o.dim, o.dim):
                raise DimensionMismatch(f"observation {j}: R has shape {o.cov.shape}")
            check_psd(o.cov, f"R_{j}", definite=True)

    def factor_rows(self):
        """Yield ``(blocks, residual, cov)`` for every factor, in stacking order.

        ``blocks`` is a list of ``(state index, coefficient matrix)``.
        """
        d0 = self.layout.dims[0]
        yield [(0, np.eye(d0))], self.prior.residual, self.prior.cov
        for f in self.props:
            yield [(f.k, -f.F), (f.k + 1, np.eye(self.layout.dims[f.k + 1]))], f.residual, f.cov
        for o in self.obs:
            yield list(o.blocks), o.residual, o.cov


def assemble_stacked(p: LinearProblem):
    """Dense ``(A, b, Sigma)`` with ``cost = |A x - b|^2_Sigma``.

    Rows are ordered prior, propagation factors by ``k``, then observations in
    list order.  ``Sigma = blkdiag(P_0, Q_0..Q_{N-1}, R_1..R_K)``.
    """
    layout = p.layout
    rows, rhs, covs = [], [], []
    for blocks, residual, cov in p.factor_rows():
        block = np.zeros((residual.shape[0], layout.total))
        for i, M in blocks:
            block[:, layout.slice(i)] += M
        rows.append(block)
        rhs.append(residual)
        covs.append(cov)
    return np.vstack(rows), np.concatenate(rhs), sla.block_diag(*covs)


def eval_cost(p: LinearProblem, dx) -> float:
    """Linearized cost ``|A dx - b|^2_Sigma`` evaluated factor by factor in float64.

    Raises SingularCovariance if any covariance block is not positive definite.
    """
    dx = np.asarray(dx, dtype=np.float64)
    xs = p.layout.split(dx)
    errors = [xs[0] - p.prior.residual]
    # x_{k+1} - (F x_k + a): the order in which a trajectory is usually simulated,
    # so a consistent trajectory gives exactly zero
    errors += [xs[f.k + 1] - (f.F @ xs[f.k] + f.residual) for f in p.props]
    errors += [sum(M @ xs[i] for i, M in o.blocks) - o.residual for o in p.obs]
    covs = [p.prior.cov] + [f.cov for f in p.props] + [o.cov for o in p.obs]
    total = 0.0
    for e, cov in zip(errors, covs):
        try:
            L = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise SingularCovariance("cost undefined for a singular covariance block") from None
        w = sla.solve_triangular(L, e, lower=True)
        total += float(w @ w)
    return total


@dataclass(frozen=True)
class CloneSchedule:
    """Stochastic-cloning bookkeeping for a fixed factor graph.

    Attributes
    ----------
    last_use : tuple of int
        For each state ``i``, the latest anchor time of a factor that involves
        ``i`` as a non-anchor state, or ``-1`` when ``i`` never needs a clone.
    """

    last_use: tuple[int, ...]

    @property
    def N(self) -> int:
        return len(self.last_use) - 1

    def update_slots(self, k: int) -> tuple[int, ...]:
        """Augmented-state layout at the update of time ``k``.

        Position 0 is the live state ``k``; clones follow, newest first.
        """
        clones = [i for i in range(k - 1, -1, -1) if self.last_use[i] >= k]
        return (k, *clones)

    def needs_clone(self, k: int) -> bool:
        return self.last_use[k] > k

    def slots(self, k: int) -> tuple[int, ...]:
        """Augmented-state layout ``I_k``: the update layout plus the clone of ``k`` if created."""
        u = self.update_slots(k)
        if self.needs_clone(k):
            return (k, k, *u[1:])
        return u

    def kept_positions(self, k: int) -> list[int]:
        """Positions of ``slots(k)`` that survive the discard step of the transition to ``k + 1``."""
        return [pos for pos, i in enumerate(self.slots(k)) if pos == 0 or self.last_use[i] >= k + 1]

    def retained_after(self, k: int) -> tuple[int, ...]:
        """Multiset of indices still held once the clones no longer needed after ``k`` are dropped."""
        return tuple(sorted(self.slots(k)[p] for p in self.kept_positions(k)))

    @property
    def sets(self) -> tuple[tuple[int, ...], ...]:
        """The multisets ``I_k`` in sorted order, e.g. ``(0, 2, 2)``."""
        return tuple(tuple(sorted(self.slots(k))) for k in range(self.N + 1))


def build_clone_schedule(p: LinearProblem | Sequence[ObservationFactor], n_states: int | None = None) -> CloneSchedule:
    """Minimal clone schedule: a clone of ``i`` lives until the last factor that uses it."""
    if isinstance(p, LinearProblem):
        obs, n = p.obs, p.layout.count
    else:
        obs, n = tuple(p), n_states
    last = [-1] * n
    for o in obs:
        a = o.anchor
        for i in o.indices:
            if i < a:
                last[i] = max(last[i], a)
    return CloneSchedule(tuple(last))
