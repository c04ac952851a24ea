"""
Change of variables from a general coupling ``sum_i A_i x_i = 0`` to a pure
sum constraint, and the conformal splitting of feasible directions into
two-block pieces.

Each block is written ``x_i = A_i^+ y_i + N_i z_i`` where ``N_i`` is an
orthonormal basis of ``ker A_i``. Then ``A_i x_i = y_i`` and the constraint
becomes ``sum_i y_i = 0`` while ``z_i`` is free.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, FeasibilityError, ReductionError
from .model import BlockPartition, ConstraintKind, LinearConstraints, Objective, Problem

SVD_RTOL = 1e-12


def pinv_and_null_basis(A):
    """
    ``(A^+, N, sigma)`` from one SVD, with ``N`` an orthonormal basis of ``ker A``.

    Singular values below ``1e-12 sigma_max`` count as zero. ``sigma`` holds
    the nonzero singular values.
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    U, s, Vt = np.linalg.svd(A, full_matrices=True)
    cutoff = SVD_RTOL * (s[0] if s.size else 0.0)
    r = int(np.sum(s > cutoff))
    pinv = (Vt[:r].T / s[:r]) @ U[:, :r].T
    return pinv, Vt[r:].T.copy(), s[:r]


def transformed_lipschitz(L_i, A_i):
    """
    Block constants of the lifted function: ``(L_i / sigma_min^2, L_i)`` for the
    ``y`` and ``z`` parts, with ``sigma_min`` the smallest nonzero singular value.
    """
    _, _, s = pinv_and_null_basis(A_i)
    if s.size == 0:
        raise ReductionError("A_i has no nonzero singular value")
    return L_i / s[-1] ** 2, float(L_i)


class LiftedObjective(Objective):
    """``g(y, z) = f(phi(y, z))`` on the interleaved layout ``(y_1, z_1, ..., y_b, z_b)``."""

    def __init__(self, reduced, objective):
        self.reduced = reduced
        self.inner = objective
        self.partition = reduced.partition
        self.block_lipschitz = np.maximum(reduced.lipschitz_y, reduced.lipschitz_z)

    def value(self, u):
        return self.inner.value(self.reduced.lift(u))

    def partial_grad(self, i, u):
        x = self.reduced.lift(u)
        gx = self.inner.partial_grad(i, x)
        return np.concatenate([self.reduced.pinvs[i].T @ gx, self.reduced.null_bases[i].T @ gx])


@dataclass
class ReducedProblem:
    """
    Per-block pseudo-inverses and null bases, the lifted problem in ``(y, z)``
    variables and the transformed Lipschitz constants.

    The reduced vector interleaves blocks as ``(y_1, z_1, ..., y_b, z_b)``;
    :meth:`to_stacked` reorders it to ``(y_1, ..., y_b, z_1, ..., z_b)``.
    """

    pinvs: list
    null_bases: list
    lipschitz_y: np.ndarray
    lipschitz_z: np.ndarray
    original: LinearConstraints
    m: int
    partition: BlockPartition = None
    problem: Problem = field(default=None, repr=False)

    @property
    def b(self):
        return len(self.pinvs)

    def lift(self, u):
        """``phi``: reduced point to original coordinates."""
        out = []
        for i, ui in enumerate(self.partition.split(np.asarray(u, dtype=np.float64))):
            out.append(self.pinvs[i] @ ui[:self.m] + self.null_bases[i] @ ui[self.m:])
        return np.concatenate(out)

    def project(self, x):
        """Inverse of ``lift`` on full-row-rank blocks: ``y_i = A_i x_i``, ``z_i = N_i^T x_i``."""
        out = []
        for i, xi in enumerate(self.original.partition.split(np.asarray(x, dtype=np.float64))):
            out.append(np.concatenate([self.original.blocks[i] @ xi, self.null_bases[i].T @ xi]))
        return np.concatenate(out)

    def to_stacked(self, u):
        blocks = self.partition.split(np.asarray(u, dtype=np.float64))
        return np.concatenate([ui[:self.m] for ui in blocks] + [ui[self.m:] for ui in blocks])


def reduce_problem(objective, constraints, x0=None):
    """
    Rewrite ``min f(x)`` s.t. ``sum_i A_i x_i = 0`` as
    ``min g(y, z)`` s.t. ``sum_i y_i = 0``.

    Parameters
    ----------
    objective : Objective
    constraints : LinearConstraints
    x0 : ndarray, optional
        Feasible start mapped into the reduced coordinates.

    Returns
    -------
    ReducedProblem
        Its ``problem`` attribute is a ready-to-run :class:`Problem` whose
        blocks are ``(y_i, z_i)`` coupled through ``[I_m 0]``.

    Raises
    ------
    ReductionError
        When some ``A_i`` does not have rank ``m``, in particular when
        ``m > n_i``; such a partition has to be coarsened first.
    """
    m = constraints.m
    pinvs, nulls, ly, lz = [], [], [], []
    L = np.asarray(objective.block_lipschitz, dtype=np.float64)
    for i, A in enumerate(constraints.blocks):
        if A.shape[1] < m:
            raise ReductionError(f"block {i} has {A.shape[1]} columns but there are {m} "
                                 "constraints; merge blocks so that n_i >= m")
        P, N, s = pinv_and_null_basis(A)
        if s.size != m:
            raise ReductionError(f"A_{i} has rank {s.size} < m = {m}")
        pinvs.append(P)
        nulls.append(N)
        ly.append(L[i] / s[-1] ** 2)
        lz.append(L[i])
    part = constraints.partition
    reduced = ReducedProblem(pinvs, nulls, np.array(ly), np.array(lz), constraints, m, part)
    eye = np.eye(m)
    rows = [np.hstack([eye, np.zeros((m, n - m))]) for n in part.block_sizes]
    cons = LinearConstraints(rows)
    start = None if x0 is None else reduced.project(x0)
    reduced.problem = Problem(LiftedObjective(reduced, objective), cons, x0=start,
                              name="reduced")
    return reduced


#%% CONFORMAL DECOMPOSITION

def _coefficients(constraints):
    if constraints.kind is ConstraintKind.SUM:
        return constraints.coefficients, constraints.partition.block_sizes[0]
    if constraints.kind is ConstraintKind.SINGLE_ROW and constraints.coefficients is not None:
        return constraints.coefficients, 1
    raise ConfigError("conformal decomposition needs a sum constraint or scalar single-row blocks")


def conformal_decompose(d, constraints, rtol=1e-10):
    """
    Split a feasible direction into two-block pieces conformal with it.

    Row by row, the entry with the smallest weighted magnitude ``|c_p d_p|``
    is cancelled against the opposite-sign entry of largest weighted
    magnitude; the pieces of each block pair are accumulated.

    Parameters
    ----------
    d : ndarray
        Direction with ``A d = 0``.
    constraints : LinearConstraints
        Sum constraint ``A_i = c_i I`` or scalar single-row blocks.

    Returns
    -------
    list of ((int, int), ndarray)
        Block pair ``(i, j)``, ``i < j``, and its full-length piece. The
        pieces sum to ``d``, each satisfies ``A d' = 0`` and
        ``d_c d'_c >= 0`` for every coordinate.

    Raises
    ------
    FeasibilityError
        If ``A d`` is not zero within ``rtol (1 + ||d||)``.
    """
    c, size = _coefficients(constraints)
    if np.any(c == 0):
        raise ConfigError("zero coefficients leave a block uncoupled")
    d = np.asarray(d, dtype=np.float64)
    b = constraints.b
    if d.shape != (b * size,):
        raise FeasibilityError(f"direction has length {d.size}, expected {b * size}")
    scale = float(np.linalg.norm(d))
    res = float(np.max(np.abs(constraints.product(d)), initial=0.0))
    if res > rtol * (1.0 + scale):
        raise FeasibilityError(f"direction is not feasible (residual {res:.3e})")

    D = d.reshape(b, size)
    pieces = {}
    for r in range(size):
        w = c * D[:, r]
        active = set(np.flatnonzero(w).tolist())
        while active:
            p = min(active, key=lambda t: abs(w[t]))
            partners = [t for t in active if w[t] * w[p] < 0]
            if not partners:
                break
            q = max(partners, key=lambda t: abs(w[t]))
            piece = pieces.setdefault((min(p, q), max(p, q)), np.zeros((b, size)))
            piece[p, r] += w[p] / c[p]
            piece[q, r] -= w[p] / c[q]
            w[q] += w[p]
            w[p] = 0.0
            active.discard(p)
            if w[q] == 0.0:
                active.discard(q)
        left = float(np.max(np.abs(w), initial=0.0))
        if left > rtol * max(scale, 1e-300):
            raise FeasibilityError(f"row {r} leaves an unmatched residual {left:.3e}")
    return [(pair, piece.ravel()) for pair, piece in sorted(pieces.items())]
