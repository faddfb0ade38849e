"""Square-root information smoother.

Every factor row is whitened by the inverse Cholesky factor of its own
covariance, the whitened Jacobian ``A~`` is factored by QR, and the normal
equations are solved through the resulting square-root information matrix
``L = R^T``: first ``L eta = A~^T b~``, then ``L^T dx = eta``.  This is the
standard information-form resolution, and the one that fails as process noise
covariances shrink.

``method="qr"`` instead solves ``R dx = Q^T b~`` directly from the QR factors,
which never touches ``A~^T`` and is correspondingly less sensitive to the
conditioning of ``A~``.
"""

from __future__ import annotations

import numpy as np

from ..errors import NotPositiveDefinite, SingularCovariance
from ..numeric import Precision, qr_solve, sqrt_information_solve, whiten
from ..problem import LinearProblem
from .base import CastProblem, Solution, check_dtype


def whitened_system(p: LinearProblem, precision: Precision | str = Precision.DOUBLE):
    """Return ``(A~, b~)`` built factor by factor in the requested precision.

    Raises
    ------
    SingularCovariance
        When a covariance block has no Cholesky factor in that precision.
    """
    precision = Precision.parse(precision)
    cp = CastProblem(p, precision)
    layout = p.layout
    dt = cp.dtype
    rows, rhs = [], []

    def add(blocks, residual, cov, what):
        block = np.zeros((residual.shape[0], layout.total), dtype=dt)
        for i, M in blocks:
            block[:, layout.slice(i)] += M
        try:
            wa, wb = whiten(cov, block, residual)
        except NotPositiveDefinite:
            raise SingularCovariance(f"cannot whiten {what}: covariance is not positive definite") from None
        rows.append(wa)
        rhs.append(wb)

    add([(0, np.eye(layout.dims[0], dtype=dt))], cp.a0, cp.P0, "prior")
    for f, F, a, Q in zip(p.props, cp.F, cp.a, cp.Q):
        add([(f.k, -F), (f.k + 1, np.eye(layout.dims[f.k + 1], dtype=dt))], a, Q, f"propagation {f.k}")
    for j, (blocks, c, R) in enumerate(cp.obs):
        add(blocks, c, R, f"observation {j}")
    A, b = np.vstack(rows), np.concatenate(rhs)
    check_dtype(precision, A, b)
    return A, b


SQRT_METHODS = {"information": sqrt_information_solve, "qr": qr_solve}


def solve_sqrt(p: LinearProblem, precision: Precision | str = Precision.DOUBLE,
               method: str = "information") -> Solution:
    """Whitened least squares; ``method`` is ``"information"`` (default) or ``"qr"``."""
    precision = Precision.parse(precision)
    try:
        kernel = SQRT_METHODS[method]
    except KeyError:
        raise ValueError(f"unknown method {method!r}; choose from {sorted(SQRT_METHODS)}") from None
    A, b = whitened_system(p, precision)
    x = kernel(A, b)
    check_dtype(precision, x)
    return Solution(x=x, layout=p.layout, precision=precision)
