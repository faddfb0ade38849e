"""Precision-generic dense kernels and conditioning diagnostics.

Every floating-point sensitive primitive used by the solvers lives here.  The
kernels never widen their inputs: a float32 array goes through the single
precision LAPACK routines and comes back as float32.
"""

from __future__ import annotations

import enum

import numpy as np
import scipy.linalg as sla

from .errors import NotPositiveDefinite, RankDeficient, SolverFailure


class Precision(enum.Enum):
    SINGLE = "single"
    DOUBLE = "double"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float32 if self is Precision.SINGLE else np.float64)

    @property
    def eps(self) -> float:
        return float(np.finfo(self.dtype).eps)

    @classmethod
    def parse(cls, value: "Precision | str | np.dtype | type") -> "Precision":
        """Accept a Precision, its name ("single"/"double"), or a numpy float dtype."""
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            try:
                return cls(value.lower())
            except ValueError:
                raise ValueError(f"unknown precision {value!r}") from None
        dt = np.dtype(value)
        if dt == np.float32:
            return cls.SINGLE
        if dt == np.float64:
            return cls.DOUBLE
        raise ValueError(f"unsupported dtype {dt}")


def _dtype_of(*arrays) -> np.dtype:
    return np.result_type(*[np.asarray(a).dtype for a in arrays])


def eye(n: int, dtype) -> np.ndarray:
    return np.eye(n, dtype=dtype)


def symmetrize(M: np.ndarray) -> np.ndarray:
    return (M + M.T) * M.dtype.type(0.5)


def qr_solve(A, b) -> np.ndarray:
    """Least-squares solution of ``A x = b`` by Householder QR.

    Solves ``R x = Q^T b`` by back-substitution, in the precision of the inputs.

    Raises
    ------
    RankDeficient
        If a diagonal entry of ``R`` is below ``eps * max|R_ii| * n``.
    """
    A = np.asarray(A)
    b = np.asarray(b)
    m, n = A.shape
    if m < n:
        raise RankDeficient(f"qr_solve needs m >= n, got {m}x{n}")
    Q, R = np.linalg.qr(A, mode="reduced")
    _check_rank(R)
    return sla.solve_triangular(R, Q.T @ b, lower=False)


def sqrt_information_factor(A) -> np.ndarray:
    """Upper-triangular ``R`` with ``R^T R = A^T A``, obtained from the QR of ``A``."""
    A = np.asarray(A)
    m, n = A.shape
    if m < n:
        raise RankDeficient(f"need at least {n} rows, got {m}")
    R = np.linalg.qr(A, mode="r")
    _check_rank(R)
    return R


def sqrt_information_solve(A, b) -> np.ndarray:
    """Solve the normal equations ``A^T A x = A^T b`` through the square-root factor.

    ``L = R^T`` comes from the QR factorization of ``A``; the information vector
    ``A^T b`` is formed explicitly and the two triangular systems ``L eta = A^T b``
    and ``L^T x = eta`` are solved by substitution.
    """
    A = np.asarray(A)
    b = np.asarray(b)
    R = sqrt_information_factor(A)
    eta = sla.solve_triangular(R, A.T @ b, trans="T", lower=False)
    return sla.solve_triangular(R, eta, lower=False)


def _check_rank(R: np.ndarray) -> None:
    diag = np.abs(np.diag(R))
    if diag.size == 0:
        return
    n = R.shape[1]
    tol = np.finfo(R.dtype).eps * diag.max() * n
    if not np.all(np.isfinite(diag)) or diag.min() < tol or diag.max() == 0:
        raise RankDeficient(f"min |R_ii| = {diag.min():.3e} below tolerance {tol:.3e}")


def cholesky(S) -> np.ndarray:
    """Lower-triangular Cholesky factor in the precision of ``S``."""
    S = np.asarray(S)
    if S.shape[0] == 0:
        return S.copy()
    if not np.all(np.isfinite(S)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None


def chol_solve(S, B) -> np.ndarray:
    """Solve ``S X = B`` for symmetric positive definite ``S``.

    ``B`` may be a vector or a matrix.  Raises NotPositiveDefinite when a pivot
    is not strictly positive.
    """
    S = np.asarray(S)
    B = np.asarray(B)
    if S.shape[0] == 0:
        return B.copy()
    try:
        c = sla.cho_factor(S, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NotPositiveDefinite(str(exc)) from None
    return sla.cho_solve(c, B)


def lu_solve(M, B) -> np.ndarray:
    """Solve a general (possibly nonsymmetric) square system ``M X = B``."""
    M = np.asarray(M)
    if M.shape[0] == 0:
        return np.asarray(B).copy()
    try:
        return np.linalg.solve(M, B)
    except np.linalg.LinAlgError as exc:
        raise SolverFailure(f"singular system: {exc}") from None


def whiten(cov, rows, rhs=None):
    """Apply ``L^-1`` (``cov = L L^T``) to a block of rows and optionally its right-hand side."""
    L = cholesky(cov)
    out = sla.solve_triangular(L, rows, lower=True)
    if rhs is None:
        return out
    return out, sla.solve_triangular(L, rhs, lower=True)


def condition_number(A) -> float:
    """Ratio of extreme singular values, always evaluated in float64.

    Returns ``inf`` when the smallest singular value is zero.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.size == 0:
        return 1.0
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] == 0.0 or A.shape[0] < A.shape[1]:
        return float("inf")
    return float(s[0] / s[-1])
