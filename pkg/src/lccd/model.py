"""
Core problem representation: blocks, coupling constraints, objectives, iterates.

The optimization problems handled by this package read

    min_x  f(x) + h(x)   subject to   A x = sum_i A_i x_i = 0,

where ``x`` is split into ``b`` contiguous blocks ``x_i`` of size ``n_i``.
"""

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, DimensionError

RANK_RTOL = 1e-10


#%% BLOCKS

@dataclass(frozen=True)
class BlockPartition:
    """
    Contiguous blocking of an ``n``-vector into ``b >= 2`` blocks.

    Parameters
    ----------
    block_sizes : sequence of int
        Positive block sizes ``n_i``.
    """

    block_sizes: tuple
    offsets: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.block_sizes)
        if len(sizes) < 2:
            raise ConfigError(f"need at least 2 blocks, got {len(sizes)}")
        if any(s <= 0 for s in sizes):
            raise ConfigError(f"block sizes must be positive, got {sizes}")
        object.__setattr__(self, "block_sizes", sizes)
        offsets = np.zeros(len(sizes) + 1, dtype=np.int64)
        np.cumsum(sizes, out=offsets[1:])
        offsets.setflags(write=False)
        object.__setattr__(self, "offsets", offsets)
        # python-level slices are much cheaper to use than numpy lookups
        object.__setattr__(
            self, "_slices",
            tuple(slice(int(a), int(z)) for a, z in zip(offsets[:-1], offsets[1:])))

    @classmethod
    def uniform(cls, b, size):
        return cls((size,) * b)

    @property
    def b(self):
        return len(self.block_sizes)

    @property
    def n(self):
        return int(self.offsets[-1])

    @property
    def is_uniform(self):
        return len(set(self.block_sizes)) == 1

    def slice(self, i):
        if not 0 <= i < self.b:
            raise IndexError(f"block index {i} out of range for {self.b} blocks")
        return self._slices[i]

    def split(self, x):
        """Return the list of block views of ``x``."""
        return [x[s] for s in self._slices]


def block_slice(x, i, partition):
    """
    View of the ``i``-th block of ``x``.

    Writing through the returned view modifies ``x``.
    """
    if len(x) != partition.n:
        raise DimensionError(f"vector has length {len(x)}, partition expects {partition.n}")
    return x[partition.slice(i)]


#%% CONSTRAINTS

class ConstraintKind(enum.Enum):
    GENERAL = "general"
    SUM = "sum"
    SINGLE_ROW = "single-row"


class LinearConstraints:
    """
    Coupling constraint ``sum_i A_i x_i = 0`` stored as dense per-block columns.

    Parameters
    ----------
    blocks : list of ndarray
        The ``m x n_i`` matrices ``A_i``.
    kind : ConstraintKind, optional
        ``SUM`` means ``A_i = c_i I``; ``SINGLE_ROW`` means ``m = 1``.
    coefficients : ndarray, optional
        The scalars ``c_i`` for the ``SUM`` kind (the only entry of ``A_i``
        for scalar ``SINGLE_ROW`` blocks).

    Notes
    -----
    For the ``GENERAL`` kind every ``A_i`` must have full row rank, otherwise
    pairwise updates cannot move; this is checked on construction with the
    singular value test ``sigma_min > 1e-10 sigma_max``.
    """

    def __init__(self, blocks, kind=ConstraintKind.GENERAL, coefficients=None):
        blocks = [np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in blocks]
        m = blocks[0].shape[0]
        if any(a.shape[0] != m for a in blocks):
            raise DimensionError("all A_i must have the same number of rows")
        for a in blocks:
            a.setflags(write=False)
        self.blocks = blocks
        self.kind = ConstraintKind(kind)
        self.m = m
        self.partition = BlockPartition(tuple(a.shape[1] for a in blocks))
        self.coefficients = None if coefficients is None else np.asarray(coefficients, dtype=np.float64)
        self._check()

    def _check(self):
        if self.kind is ConstraintKind.GENERAL:
            for i, a in enumerate(self.blocks):
                if not _full_row_rank(a):
                    raise ConfigError(
                        f"A_{i} ({a.shape[0]}x{a.shape[1]}) is not full row rank; "
                        "pairwise updates need full row rank blocks (use larger blocks)")
        elif self.kind is ConstraintKind.SINGLE_ROW:
            if self.m != 1:
                raise DimensionError(f"single-row constraints need m = 1, got {self.m}")
            for i, a in enumerate(self.blocks):
                if not np.any(a):
                    warnings.warn(f"A_{i} is identically zero", stacklevel=3)
        else:
            if self.coefficients is None:
                raise ConfigError("sum constraints need their coefficients c_i")
            if np.any(self.coefficients == 0):
                warnings.warn("sum constraint with a zero coefficient; that block is "
                              "decoupled and never moves", stacklevel=3)

    @classmethod
    def sum_constraint(cls, partition, coefficients=None):
        """``sum_i c_i x_i = 0`` for equally sized blocks (``c_i = 1`` by default)."""
        if not partition.is_uniform:
            raise DimensionError("sum constraints need equally sized blocks")
        c = np.ones(partition.b) if coefficients is None else np.asarray(coefficients, float)
        if c.shape != (partition.b,):
            raise DimensionError("one coefficient per block expected")
        size = partition.block_sizes[0]
        eye = np.eye(size)
        return cls([ci * eye for ci in c], kind=ConstraintKind.SUM, coefficients=c)

    @classmethod
    def single_row(cls, coefficients, partition=None):
        """One row ``a^T x = 0``; scalar blocks unless ``partition`` is given."""
        a = np.asarray(coefficients, dtype=np.float64).ravel()
        if partition is None:
            partition = BlockPartition((1,) * a.size)
        if a.size != partition.n:
            raise DimensionError(f"{a.size} coefficients for n = {partition.n}")
        blocks = [a[partition.slice(i)][None, :] for i in range(partition.b)]
        coef = a if all(s == 1 for s in partition.block_sizes) else None
        return cls(blocks, kind=ConstraintKind.SINGLE_ROW, coefficients=coef)

    @property
    def b(self):
        return self.partition.b

    @property
    def n(self):
        return self.partition.n

    @property
    def is_identity_sum(self):
        return (self.kind is ConstraintKind.SUM
                and np.all(self.coefficients == 1.0))

    def dense(self):
        return np.hstack(self.blocks)

    def product(self, x):
        """``A x`` accumulated blockwise."""
        if len(x) != self.n:
            raise DimensionError(f"vector has length {len(x)}, constraints expect {self.n}")
        if self.coefficients is not None:
            # A_i = c_i I (sum kind) or the scalar c_i (single row, scalar blocks)
            return self.coefficients @ np.asarray(x, dtype=np.float64).reshape(self.b, -1)
        out = np.zeros(self.m)
        for a, xi in zip(self.blocks, self.partition.split(x)):
            out += a @ xi
        return out


def _full_row_rank(a):
    if a.shape[0] > a.shape[1]:
        return False
    s = np.linalg.svd(a, compute_uv=False)
    return s.size > 0 and s[-1] > RANK_RTOL * s[0]


def feasibility_residual(constraints, x):
    """Return ``||A x||_inf`` computed from the per-block products."""
    return float(np.max(np.abs(constraints.product(np.asarray(x, dtype=np.float64))), initial=0.0))


def feasibility_tolerance(x, rtol=1e-8):
    return rtol * (1.0 + float(np.max(np.abs(x), initial=0.0)))


#%% OBJECTIVES

class Objective:
    """
    Smooth part ``f`` of the problem, accessed through block oracles.

    Subclasses implement :meth:`value` and :meth:`partial_grad` and set
    ``partition`` and ``block_lipschitz``. Problems with the finite-sum
    structure ``f = (1/N) sum_l f_l`` also set ``n_components`` and implement
    :meth:`component_value` and :meth:`component_partial_grad`.

    Some oracles (the SVM dual) keep a cache derived from the iterate; engines
    call :meth:`sync` once, then :meth:`notify_update` after every block
    increment, and :meth:`refresh` periodically to bound drift.
    """

    partition = None
    block_lipschitz = None
    n_components = 1
    grad_bound = None

    def value(self, x):
        raise NotImplementedError

    def partial_grad(self, i, x):
        raise NotImplementedError

    def gradient(self, x):
        return np.concatenate([self.partial_grad(i, x) for i in range(self.partition.b)])

    def component_value(self, l, x):
        if self.n_components == 1:
            return self.value(x)
        raise NotImplementedError

    def component_partial_grad(self, l, i, x):
        if self.n_components == 1:
            return self.partial_grad(i, x)
        raise NotImplementedError

    def component_gradient(self, l, x):
        return np.concatenate([self.component_partial_grad(l, i, x)
                               for i in range(self.partition.b)])

    def delta_value(self, x, i, d_i, j, d_j):
        """``f(x + U_i d_i + U_j d_j) - f(x)``, or None when not cheaply available."""
        return None

    def current_value(self, x):
        """Objective at the tracked iterate ``x``; may use internal caches."""
        return self.value(x)

    def sync(self, x):
        pass

    def notify_update(self, i, d_i):
        pass

    def refresh(self, x):
        pass


class QuadraticObjective(Objective):
    """
    ``f(x) = 1/2 x^T Q x + q^T x + c0`` with symmetric positive semidefinite ``Q``.

    Block Lipschitz constants are the largest eigenvalues of the diagonal
    blocks ``Q_ii``.
    """

    def __init__(self, Q, q, partition, c0=0.0):
        Q = np.asarray(Q, dtype=np.float64)
        q = np.asarray(q, dtype=np.float64)
        if Q.shape != (partition.n, partition.n) or q.shape != (partition.n,):
            raise DimensionError("Q, q do not match the partition")
        self.Q = 0.5 * (Q + Q.T)
        self.q = q
        self.c0 = float(c0)
        self.partition = partition
        self._rows = [self.Q[partition.slice(i)] for i in range(partition.b)]
        self.block_lipschitz = np.array([
            max(np.linalg.eigvalsh(self.Q[s, s])[-1], 0.0)
            for s in map(partition.slice, range(partition.b))])

    def value(self, x):
        return float(0.5 * x @ (self.Q @ x) + self.q @ x + self.c0)

    def partial_grad(self, i, x):
        s = self.partition.slice(i)
        return self._rows[i] @ x + self.q[s]

    def gradient(self, x):
        return self.Q @ x + self.q

    def delta_value(self, x, i, d_i, j, d_j):
        si, sj = self.partition.slice(i), self.partition.slice(j)
        g_i = self._rows[i] @ x + self.q[si]
        g_j = self._rows[j] @ x + self.q[sj]
        Q = self.Q
        curv = (d_i @ Q[si, si] @ d_i + 2.0 * d_i @ Q[si, sj] @ d_j + d_j @ Q[sj, sj] @ d_j)
        return float(g_i @ d_i + g_j @ d_j + 0.5 * curv)


#%% ITERATES

@dataclass
class Iterate:
    """Current point with cached objective and ``||Ax||_inf``."""

    x: np.ndarray
    objective: float = float("nan")
    feasibility: float = float("nan")

    @classmethod
    def evaluate(cls, x, objective, constraints):
        x = np.asarray(x, dtype=np.float64)
        return cls(x, float(objective.value(x)), feasibility_residual(constraints, x))

    def verify(self, constraints, atol=1e-12):
        fresh = feasibility_residual(constraints, self.x)
        scale = 1.0 + float(np.max(np.abs(self.x), initial=0.0))
        return abs(fresh - self.feasibility) <= atol * scale


@dataclass
class Problem:
    """
    Bundle of an objective, its coupling constraints, the nonsmooth term and
    a feasible start point. ``f_star`` is the optimal value when known.
    """

    objective: Objective
    constraints: LinearConstraints
    h: object = None
    x0: np.ndarray = None
    f_star: float = None
    name: str = ""

    def __post_init__(self):
        if self.objective.partition.block_sizes != self.constraints.partition.block_sizes:
            raise DimensionError("objective and constraints use different block partitions")
        if self.x0 is None:
            self.x0 = feasible_start(self.constraints)
        else:
            self.x0 = np.array(self.x0, dtype=np.float64)

    @property
    def partition(self):
        return self.constraints.partition


def feasible_start(constraints):
    """The origin, which satisfies ``Ax = 0`` for every ``A``."""
    return np.zeros(constraints.n)
