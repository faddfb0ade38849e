"""Backward Information Filter, Forward Marginal (BIFM) smoother.

Forward: a Kalman filter in covariance form, started from the prior.
Backward: an information filter started from zero information at ``N``.
Fusion per state::

    X*      = (I + P_k J_k)^-1 (x_k + P_k y_k) = x_k + (I + P_k J_k)^-1 P_k (y_k - J_k x_k)
    P_{k|N} = (I + P_k J_k)^-1 P_k

the second form being the one evaluated.

Neither ``Q_k``, ``P_k`` nor ``J_k`` is ever inverted; the only inverses are of
``H P H^T + R``, ``R`` and the regularized ``I + J Q`` / ``I + P J``.

The prior enters the forward pass only (as its initialization), so it is
counted exactly once and may be singular.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from ..errors import NonUnaryFactor
from ..numeric import Precision, chol_solve, cholesky, lu_solve, symmetrize
from ..problem import LinearProblem
from .base import CastProblem, Solution, check_dtype


@dataclass(frozen=True)
class ForwardBelief:
    x: np.ndarray
    P: np.ndarray


@dataclass(frozen=True)
class BackwardBelief:
    y: np.ndarray
    J: np.ndarray


def kalman_update(x, P, H, R, c):
    """Joseph-form Kalman update of ``(x, P)`` with ``c = H x + v``, ``v ~ N(0, R)``."""
    PHt = P @ H.T
    S = symmetrize(H @ PHt + R)
    K = chol_solve(S, PHt.T).T
    x = x + K @ (c - H @ x)
    IKH = np.eye(P.shape[0], dtype=P.dtype) - K @ H
    P = symmetrize(IKH @ P @ IKH.T + K @ R @ K.T)
    return x, P


def information_update(y, J, H, R, c):
    """Add ``H^T R^-1 H`` and ``H^T R^-1 c`` to an information pair, via the Cholesky factor of ``R``."""
    L = cholesky(R)
    Hw = sla.solve_triangular(L, H, lower=True)
    cw = sla.solve_triangular(L, c, lower=True)
    return y + Hw.T @ cw, symmetrize(J + Hw.T @ Hw)


def information_propagate(y, J, F, Q, u):
    """Pull information back through ``x' = F x + u + w``, ``w ~ N(0, Q)``.

    ``J_prev = F^T (I + J Q)^-1 J F`` and ``y_prev = F^T (I + J Q)^-1 (y - J u)``.
    """
    M = np.eye(J.shape[0], dtype=J.dtype) + J @ Q
    G = lu_solve(M, np.column_stack([J, y - J @ u]))
    Jp = symmetrize(G[:, :-1])
    return F.T @ G[:, -1], symmetrize(F.T @ Jp @ F)


def fuse(fwd: ForwardBelief, bwd: BackwardBelief, precision: Precision | str | None = None):
    """Combine forward marginal and backward information into ``(X*, P_{k|N})``."""
    P, J = fwd.P, bwd.J
    if precision is not None:
        dt = Precision.parse(precision).dtype
        P, J = P.astype(dt), J.astype(dt)
        x, y = fwd.x.astype(dt), bwd.y.astype(dt)
    else:
        x, y = fwd.x, bwd.y
    M = np.eye(P.shape[0], dtype=P.dtype) + P @ J
    # (I + PJ)^-1 (x + Py) = x + (I + PJ)^-1 P (y - Jx); solving for the small
    # correction to the filtered mean loses less in low precision
    sol = lu_solve(M, np.column_stack([P @ (y - J @ x), P]))
    return x + sol[:, 0], symmetrize(sol[:, 1:])


def _require_unary(p: LinearProblem) -> None:
    for j, o in enumerate(p.obs):
        if not o.is_unary:
            raise NonUnaryFactor(f"observation {j} involves states {o.indices}; use the SC-BIFM solver")


def forward_pass(p: LinearProblem, precision: Precision | str = Precision.DOUBLE) -> list[ForwardBelief]:
    """Kalman filter beliefs ``N(x_k, P_k)`` given observations up to and including ``k``."""
    _require_unary(p)
    cp = CastProblem(p, Precision.parse(precision))
    x, P = cp.a0.copy(), cp.P0.copy()
    out = []
    for k in range(cp.N + 1):
        if k > 0:
            F = cp.F[k - 1]
            x = F @ x + cp.a[k - 1]
            P = symmetrize(F @ P @ F.T + cp.Q[k - 1])
        for blocks, c, R in cp.obs_at(k):
            x, P = kalman_update(x, P, blocks[0][1], R, c)
        out.append(ForwardBelief(x, P))
    return out


def backward_pass(p: LinearProblem, precision: Precision | str = Precision.DOUBLE) -> list[BackwardBelief]:
    """Information pairs ``(y_k, J_k)`` summarizing observations strictly after ``k``.

    ``J_N = 0`` and ``y_N = 0``.  The prior is not used here.
    """
    _require_unary(p)
    cp = CastProblem(p, Precision.parse(precision))
    dims = cp.layout.dims
    y = np.zeros(dims[-1], dtype=cp.dtype)
    J = np.zeros((dims[-1], dims[-1]), dtype=cp.dtype)
    out = [None] * (cp.N + 1)
    for k in range(cp.N, -1, -1):
        out[k] = BackwardBelief(y, J)
        if k == 0:
            break
        for blocks, c, R in cp.obs_at(k):
            y, J = information_update(y, J, blocks[0][1], R, c)
        y, J = information_propagate(y, J, cp.F[k - 1], cp.Q[k - 1], cp.a[k - 1])
    return out


def solve_bifm(p: LinearProblem, precision: Precision | str = Precision.DOUBLE) -> Solution:
    precision = Precision.parse(precision)
    fwd = forward_pass(p, precision)
    bwd = backward_pass(p, precision)
    xs, Ps = zip(*(fuse(f, b) for f, b in zip(fwd, bwd)))
    x = np.concatenate(xs)
    check_dtype(precision, x, *Ps)
    return Solution(x=x, layout=p.layout, precision=precision, marginals=tuple(Ps))
