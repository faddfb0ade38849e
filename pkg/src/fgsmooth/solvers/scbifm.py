"""BIFM on a stochastically cloned state (SC-BIFM).

Relative observations ``sum_i H_i x_i`` are handled by carrying clones of the
past states they involve.  The augmented state at time ``k`` is laid out as
``schedule.slots(k)``: the live state first, then clones, newest first.  The
stored forward belief at ``k`` is taken after the update at ``k`` and after
``X_k`` has been cloned (if some later factor needs it); the transition to
``k + 1`` then discards stale clones and propagates the live block.  Clones are
static during propagation.

The backward information filter runs the transposed transition: propagation
through ``F^T`` only, zero-padding where the forward pass discarded a clone,
and uncloning (summing the clone's information into its source) where the
forward pass created one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ScheduleMismatch
from ..numeric import Precision, symmetrize
from ..problem import CloneSchedule, LinearProblem, build_clone_schedule
from .base import CastProblem, Solution, check_dtype
from .bifm import BackwardBelief, ForwardBelief, fuse, information_propagate, information_update, kalman_update


@dataclass(frozen=True)
class AugmentedForwardBelief:
    indices: tuple[int, ...]
    x: np.ndarray
    P: np.ndarray


@dataclass(frozen=True)
class AugmentedBackwardBelief:
    indices: tuple[int, ...]
    y: np.ndarray
    J: np.ndarray


def _block_index(dims, slots, positions) -> np.ndarray:
    """Flat indices of the given slot positions in an augmented vector."""
    offsets = np.concatenate([[0], np.cumsum([dims[i] for i in slots])])
    if not positions:
        return np.zeros(0, dtype=int)
    return np.concatenate([np.arange(offsets[p], offsets[p + 1]) for p in positions])


def clone_create(b: AugmentedForwardBelief, dims) -> AugmentedForwardBelief:
    """Duplicate the live block to position 1: ``x <- C x``, ``P <- C P C^T``.

    The copy is fully correlated with its source.
    """
    slots = b.indices
    idx = _block_index(dims, slots, [0, *range(len(slots))])
    return AugmentedForwardBelief((slots[0], *slots), b.x[idx], b.P[np.ix_(idx, idx)])


def clone_discard_forward(b: AugmentedForwardBelief, keep: list[int], dims) -> AugmentedForwardBelief:
    """Marginalize out every slot not listed in ``keep`` (``x <- D x``, ``P <- D P D^T``)."""
    idx = _block_index(dims, b.indices, keep)
    return AugmentedForwardBelief(tuple(b.indices[p] for p in keep), b.x[idx], b.P[np.ix_(idx, idx)])


def unclone(y: np.ndarray, J: np.ndarray, d: int):
    """Transpose of cloning on information: fold the clone at position 1 into the live block.

    With the live block ``k`` and its clone ``l`` (both of size ``d`` at the
    front)::

        y_k  <- y_k + y_l
        J_kk <- J_kk + J_kl + J_lk + J_ll

    and the cross blocks with the remaining slots add up the same way.
    """
    k, l = slice(0, d), slice(d, 2 * d)
    y2 = np.concatenate([y[k] + y[l], y[2 * d :]])
    rows = np.concatenate([J[k] + J[l], J[2 * d :]])
    J2 = np.concatenate([rows[:, k] + rows[:, l], rows[:, 2 * d :]], axis=1)
    return y2, J2


def zero_pad(y: np.ndarray, J: np.ndarray, dims, slots, keep: list[int]):
    """Transpose of discarding: embed ``(y, J)`` into the larger layout, zeros elsewhere."""
    n = sum(dims[i] for i in slots)
    idx = _block_index(dims, slots, keep)
    y2 = np.zeros(n, dtype=y.dtype)
    J2 = np.zeros((n, n), dtype=J.dtype)
    y2[idx] = y
    J2[np.ix_(idx, idx)] = J
    return y2, J2


def augmented_observation(blocks, slots, dims, dtype, k: int) -> np.ndarray:
    """Place each ``H_i`` at the slot holding state ``i`` (the live block for ``i == k``)."""
    d_z = blocks[0][1].shape[0]
    n = sum(dims[i] for i in slots)
    Ht = np.zeros((d_z, n), dtype=dtype)
    offsets = np.concatenate([[0], np.cumsum([dims[i] for i in slots])])
    for i, H in blocks:
        if i == k:
            pos = 0
        else:
            cand = [p for p in range(1, len(slots)) if slots[p] == i]
            if not cand:
                raise ScheduleMismatch(f"state {i} has no clone available at time {k} (slots {slots})")
            pos = cand[0]
        Ht[:, offsets[pos] : offsets[pos + 1]] += H
    return Ht


def _update_slots_check(sched: CloneSchedule, p: LinearProblem) -> None:
    if sched.N != p.N:
        raise ScheduleMismatch(f"schedule covers {sched.N + 1} states, problem has {p.N + 1}")


def forward_pass_sc(p: LinearProblem, sched: CloneSchedule | None = None,
                    precision: Precision | str = Precision.DOUBLE) -> list[AugmentedForwardBelief]:
    """Kalman filter on the cloned state; element ``k`` is the belief over ``sched.slots(k)``."""
    sched = sched or build_clone_schedule(p)
    _update_slots_check(sched, p)
    cp = CastProblem(p, Precision.parse(precision))
    dims = cp.layout.dims
    b = AugmentedForwardBelief((0,), cp.a0.copy(), cp.P0.copy())
    out = []
    for k in range(cp.N + 1):
        if k > 0:
            b = clone_discard_forward(b, sched.kept_positions(k - 1), dims)
            b = _propagate(b, cp, k - 1, dims)
        if b.indices != sched.update_slots(k):
            raise ScheduleMismatch(f"layout {b.indices} at time {k}, expected {sched.update_slots(k)}")
        x, P = b.x, b.P
        for blocks, c, R in cp.obs_at(k):
            H = augmented_observation(blocks, b.indices, dims, cp.dtype, k)
            x, P = kalman_update(x, P, H, R, c)
        b = AugmentedForwardBelief(b.indices, x, P)
        if sched.needs_clone(k):
            b = clone_create(b, dims)
        out.append(b)
    return out


def _propagate(b: AugmentedForwardBelief, cp: CastProblem, k: int, dims) -> AugmentedForwardBelief:
    """Live block ``x <- F x + a``; clones unchanged; process noise on the live block only."""
    F, a, Q = cp.F[k], cp.a[k], cp.Q[k]
    d = dims[k]
    x, P = b.x, b.P
    live, rest = slice(0, d), slice(d, None)
    x2 = np.concatenate([F @ x[live] + a, x[rest]])
    Pll = F @ P[live, live] @ F.T + Q
    Plr = F @ P[live, rest]
    P2 = np.block([[Pll, Plr], [Plr.T, P[rest, rest]]])
    return AugmentedForwardBelief((k + 1, *b.indices[1:]), x2, symmetrize(P2))


def backward_pass_sc(p: LinearProblem, sched: CloneSchedule | None = None,
                     precision: Precision | str = Precision.DOUBLE) -> list[AugmentedBackwardBelief]:
    """Information over ``sched.slots(k)`` from observations strictly after ``k``."""
    sched = sched or build_clone_schedule(p)
    _update_slots_check(sched, p)
    cp = CastProblem(p, Precision.parse(precision))
    dims = cp.layout.dims
    N = cp.N
    slots = sched.slots(N)
    n = sum(dims[i] for i in slots)
    y = np.zeros(n, dtype=cp.dtype)
    J = np.zeros((n, n), dtype=cp.dtype)
    out = [None] * (N + 1)
    for k in range(N, -1, -1):
        out[k] = AugmentedBackwardBelief(slots, y, J)
        if k == 0:
            break
        if sched.needs_clone(k):
            y, J = unclone(y, J, dims[k])
        upd = sched.update_slots(k)
        for blocks, c, R in cp.obs_at(k):
            H = augmented_observation(blocks, upd, dims, cp.dtype, k)
            y, J = information_update(y, J, H, R, c)
        y, J = _propagate_back(y, J, cp, k - 1, dims)
        prev = sched.slots(k - 1)
        y, J = zero_pad(y, J, dims, prev, sched.kept_positions(k - 1))
        slots = prev
    return out


def _propagate_back(y, J, cp: CastProblem, k: int, dims):
    """Transpose of ``_propagate``: ``F~ = blkdiag(F_k, I)``, ``Q~ = blkdiag(Q_k, 0)``, ``u~ = (a, 0)``."""
    F, a, Q = cp.F[k], cp.a[k], cp.Q[k]
    d1, d0 = F.shape
    n = J.shape[0]
    r = n - d1
    Ft = np.zeros((n, d0 + r), dtype=cp.dtype)
    Ft[:d1, :d0] = F
    Ft[d1:, d0:] = np.eye(r, dtype=cp.dtype)
    Qt = np.zeros((n, n), dtype=cp.dtype)
    Qt[:d1, :d1] = Q
    ut = np.concatenate([a, np.zeros(r, dtype=cp.dtype)])
    return information_propagate(y, J, Ft, Qt, ut)


def solve_scbifm(p: LinearProblem, precision: Precision | str = Precision.DOUBLE) -> Solution:
    """Forward pass, backward pass, then fusion of each augmented pair; the live block is extracted.

    Only per-state marginals are returned; cross-covariances between states
    that never share an augmented state are not recovered.
    """
    precision = Precision.parse(precision)
    sched = build_clone_schedule(p)
    fwd = forward_pass_sc(p, sched, precision)
    bwd = backward_pass_sc(p, sched, precision)
    xs, Ps = [], []
    for k, (f, b) in enumerate(zip(fwd, bwd)):
        X, P = fuse(ForwardBelief(f.x, f.P), BackwardBelief(b.y, b.J))
        d = p.layout.dims[k]
        xs.append(X[:d])
        Ps.append(P[:d, :d])
    x = np.concatenate(xs)
    check_dtype(precision, x, *Ps)
    return Solution(x=x, layout=p.layout, precision=precision, marginals=tuple(Ps))
