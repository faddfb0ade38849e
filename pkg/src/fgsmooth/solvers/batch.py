"""Robust batch solver.

The factors are split into a square, invertible block ``(A1, b1, S1)`` whose
covariance may be singular and a block ``(A2, b2, S2)`` with positive definite
covariance.  With ``J = A2 A1^-1`` and ``K = S1 J^T (J S1 J^T + S2)^-1`` the
minimizer is::

    dx = A1^-1 ((I - K J) b1 + K b2) = A1^-1 (b1 + K (b2 - J b1))

so ``S1`` is never inverted; only ``J S1 J^T + S2`` is, and it is bounded
below by ``S2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from ..errors import IllPosed, NotPositiveDefinite
from ..numeric import Precision, chol_solve, symmetrize
from ..problem import LinearProblem
from .base import CastProblem, Solution, check_dtype


@dataclass(frozen=True)
class BatchSplit:
    """Factor indices (in ``LinearProblem.factor_rows`` order) assigned to each block.

    The default split is solved with block substitution through the chain
    structure of ``A1``; any other split falls back to a dense LU of ``A1``.
    """

    rows1: tuple[int, ...]
    rows2: tuple[int, ...]


def default_split(p: LinearProblem) -> BatchSplit:
    """Motion model and prior in block 1, every observation in block 2."""
    n1 = 1 + len(p.props)
    n2 = len(p.obs)
    if n2 == 0:
        try:
            np.linalg.cholesky(sla.block_diag(p.prior.cov, *[f.cov for f in p.props]))
        except np.linalg.LinAlgError:
            raise IllPosed("no observations and a singular prior/process covariance") from None
    return BatchSplit(tuple(range(n1)), tuple(range(n1, n1 + n2)))


class ChainInverse:
    """Applies ``A1^-1`` and ``A1^-T`` for the lower block-bidiagonal prior+propagation block."""

    def __init__(self, cp: CastProblem):
        self.layout = cp.layout
        self.F = cp.F
        self.dtype = cp.dtype

    def apply(self, r: np.ndarray) -> np.ndarray:
        """``A1^-1 r`` by forward substitution: ``x_0 = r_0``, ``x_{k+1} = F_k x_k + r_{k+1}``."""
        L = self.layout
        x = np.empty_like(r)
        x[L.slice(0)] = r[L.slice(0)]
        for k, F in enumerate(self.F):
            x[L.slice(k + 1)] = F @ x[L.slice(k)] + r[L.slice(k + 1)]
        return x

    def apply_transpose(self, w: np.ndarray) -> np.ndarray:
        """``A1^-T w`` by backward substitution: ``z_N = w_N``, ``z_k = w_k + F_k^T z_{k+1}``.

        Works column-wise when ``w`` is a matrix.
        """
        L = self.layout
        z = np.empty_like(w)
        N = L.count - 1
        z[L.slice(N)] = w[L.slice(N)]
        for k in range(N - 1, -1, -1):
            z[L.slice(k)] = w[L.slice(k)] + self.F[k].T @ z[L.slice(k + 1)]
        return z


def _observation_block(cp: CastProblem):
    L = cp.layout
    m = sum(c.shape[0] for _, c, _ in cp.obs)
    A2 = np.zeros((m, L.total), dtype=cp.dtype)
    b2 = np.zeros(m, dtype=cp.dtype)
    S2 = np.zeros((m, m), dtype=cp.dtype)
    r = 0
    for blocks, c, R in cp.obs:
        d = c.shape[0]
        for i, H in blocks:
            A2[r : r + d, L.slice(i)] += H
        b2[r : r + d] = c
        S2[r : r + d, r : r + d] = R
        r += d
    return A2, b2, S2


def gain_system(p: LinearProblem, precision: Precision | str = Precision.DOUBLE):
    """Return ``(J, S1_diag_blocks, JS1J^T + S2, S2)`` for diagnostics and tests."""
    precision = Precision.parse(precision)
    cp = CastProblem(p, precision)
    A2, _, S2 = _observation_block(cp)
    inv = ChainInverse(cp)
    J = inv.apply_transpose(A2.T).T
    S1 = [cp.P0, *cp.Q]
    return J, S1, _innovation(J, S1, S2, cp), S2


def _innovation(J, S1_blocks, S2, cp):
    L = cp.layout
    M = S2.copy()
    for i, S in enumerate(S1_blocks):
        Ji = J[:, L.slice(i)]
        M += Ji @ S @ Ji.T
    return symmetrize(M)


def solve_batch(p: LinearProblem, split: BatchSplit | None = None,
                precision: Precision | str = Precision.DOUBLE) -> Solution:
    precision = Precision.parse(precision)
    if split is None:
        split = default_split(p)
    n1 = 1 + len(p.props)
    if split.rows1 != tuple(range(n1)) or split.rows2 != tuple(range(n1, n1 + len(p.obs))):
        return _solve_dense_split(p, split, precision)
    cp = CastProblem(p, precision)
    L = cp.layout
    inv = ChainInverse(cp)
    b1 = np.concatenate([cp.a0, *cp.a]) if cp.a else cp.a0.copy()
    x1 = inv.apply(b1)
    if not cp.obs:
        check_dtype(precision, x1)
        return Solution(x=x1, layout=L, precision=precision)

    A2, b2, S2 = _observation_block(cp)
    J = inv.apply_transpose(A2.T).T          # A2 A1^-1, one backward sweep per observation row
    S1 = [cp.P0, *cp.Q]
    M = _innovation(J, S1, S2, cp)
    innov = b2 - A2 @ x1                     # b2 - J b1
    try:
        w = chol_solve(M, innov)
    except NotPositiveDefinite as exc:
        raise NotPositiveDefinite(f"J S1 J^T + S2 is not positive definite: {exc}") from None
    Jt_w = J.T @ w
    corr = np.concatenate([S @ Jt_w[L.slice(i)] for i, S in enumerate(S1)])
    x = inv.apply(b1 + corr)
    check_dtype(precision, x)
    return Solution(x=x, layout=L, precision=precision)


def _solve_dense_split(p: LinearProblem, split: BatchSplit, precision: Precision) -> Solution:
    dt = precision.dtype
    L = p.layout
    factors = list(p.factor_rows())
    if sorted(split.rows1 + split.rows2) != list(range(len(factors))):
        raise ValueError("split must partition the factor list")

    def stack(idx):
        rows, rhs, covs = [], [], []
        for j in idx:
            blocks, residual, cov = factors[j]
            block = np.zeros((residual.shape[0], L.total), dtype=dt)
            for i, M in blocks:
                block[:, L.slice(i)] += M.astype(dt)
            rows.append(block)
            rhs.append(residual.astype(dt))
            covs.append(cov.astype(dt))
        if not rows:
            return np.zeros((0, L.total), dt), np.zeros(0, dt), np.zeros((0, 0), dt)
        return np.vstack(rows), np.concatenate(rhs), sla.block_diag(*covs).astype(dt)

    A1, b1, S1 = stack(split.rows1)
    A2, b2, S2 = stack(split.rows2)
    if A1.shape[0] != L.total:
        raise IllPosed(f"A1 must be square: {A1.shape[0]} rows for {L.total} unknowns")
    try:
        lu = sla.lu_factor(A1, check_finite=True)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise IllPosed(f"A1 is not invertible: {exc}") from None
    if np.any(np.diag(lu[0]) == 0):
        raise IllPosed("A1 is singular")
    x1 = sla.lu_solve(lu, b1)
    if A2.shape[0] == 0:
        return Solution(x=x1, layout=L, precision=precision)
    J = sla.lu_solve(lu, A2.T, trans=1).T
    M = symmetrize(J @ S1 @ J.T + S2)
    w = chol_solve(M, b2 - A2 @ x1)
    x = sla.lu_solve(lu, b1 + S1 @ (J.T @ w))
    check_dtype(precision, x)
    return Solution(x=x, layout=L, precision=precision)
