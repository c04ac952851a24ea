"""
Problem builders: the separable synthetic quadratic with random coupling
rows, an average-of-quadratics finite sum for the stochastic engine, and the
linear SVM dual with an incrementally maintained primal weight vector.
"""

import logging

import numpy as np

from .exceptions import ConfigError, DimensionError, NumericsError
from .model import BlockPartition, LinearConstraints, Objective, Problem
from .nonsmooth import Box, SeparableNonsmooth

log = logging.getLogger(__name__)

OVERLAP_WARN = 0.1


#%% SYNTHETIC QUADRATIC

class SeparableQuadratic(Objective):
    """
    ``f(x) = scale * sum_i ||x_i - c_i||^2``.

    Parameters
    ----------
    centers : ndarray, shape (n,)
        Stacked block centers ``c_i``.
    partition : BlockPartition
    scale : float
        Positive multiplier; every block has Lipschitz constant ``2 * scale``.
    """

    def __init__(self, centers, partition, scale=1.0):
        centers = np.asarray(centers, dtype=np.float64)
        if centers.shape != (partition.n,):
            raise DimensionError("centers do not match the partition")
        if not scale > 0:
            raise ConfigError("scale must be positive")
        self.centers = centers
        self.partition = partition
        self.scale = float(scale)
        self.block_lipschitz = np.full(partition.b, 2.0 * self.scale)
        self._slices = [partition.slice(i) for i in range(partition.b)]

    def value(self, x):
        r = x - self.centers
        return self.scale * float(r @ r)

    def block_values(self, x):
        """Per-block terms ``scale * ||x_i - c_i||^2``."""
        out = np.empty(self.partition.b)
        for i, s in enumerate(self._slices):
            r = x[s] - self.centers[s]
            out[i] = self.scale * float(r @ r)
        return out

    def partial_grad(self, i, x):
        s = self._slices[i]
        return 2.0 * self.scale * (x[s] - self.centers[s])

    def gradient(self, x):
        return 2.0 * self.scale * (x - self.centers)

    def delta_value(self, x, i, d_i, j, d_j):
        si, sj = self._slices[i], self._slices[j]
        ri = x[si] - self.centers[si]
        rj = x[sj] - self.centers[sj]
        return self.scale * float(2.0 * (ri @ d_i + rj @ d_j) + d_i @ d_i + d_j @ d_j)

    def quadratic_form(self):
        """``(Q, q, c0)`` with ``f = x^T Q x / 2 + q^T x + c0``."""
        n = self.partition.n
        return (2.0 * self.scale * np.eye(n), -2.0 * self.scale * self.centers,
                self.scale * float(self.centers @ self.centers))


def projected_optimum(objective, constraints):
    """
    Minimizer of a :class:`SeparableQuadratic` over ``Ax = 0``.

    ``x* = c - A^T (A A^T)^{-1} A c``, assembled block by block so that the
    dense ``A`` is never formed.
    """
    part = constraints.partition
    c = objective.centers
    gram = np.zeros((constraints.m, constraints.m))
    ac = np.zeros(constraints.m)
    for a, ci in zip(constraints.blocks, part.split(c)):
        gram += a @ a.T
        ac += a @ ci
    lam = np.linalg.solve(gram, ac)
    x = c.copy()
    for i, a in enumerate(constraints.blocks):
        x[part.slice(i)] -= a.T @ lam
    return x


def synthetic_quadratic(N, dim, m, target_f0=1000.0, seed=0):
    """
    Separable quadratic with ``m`` random coupling rows.

    Block ``i`` (counting from 1) is pulled towards ``(i mod 10) * 1``; the
    constraint coefficients are i.i.d. uniform on ``[0, 1]``; the scale is
    calibrated so that ``f(0) = target_f0``.

    Returns
    -------
    problem : Problem
        With ``f_star`` set from the projection formula.
    constraints : LinearConstraints
    x0 : ndarray
        The origin.
    """
    if min(N, dim, m) < 1:
        raise ConfigError("N, dim and m must be positive")
    if m > dim:
        raise ConfigError(f"m = {m} exceeds the block size {dim}; blocks would lack full row rank")
    part = BlockPartition.uniform(N, dim)
    levels = (np.arange(1, N + 1) % 10).astype(np.float64)
    centers = np.repeat(levels, dim)
    base = float(centers @ centers)
    if base == 0.0 or not target_f0 > 0:
        raise ConfigError("cannot calibrate the scale: f(0) would be zero or target is not positive")
    rng = np.random.default_rng(seed)
    blocks = [rng.random((m, dim)) for _ in range(N)]
    constraints = LinearConstraints(blocks)
    objective = SeparableQuadratic(centers, part, scale=target_f0 / base)
    x_star = projected_optimum(objective, constraints)
    x0 = np.zeros(part.n)
    problem = Problem(objective, constraints, x0=x0, f_star=objective.value(x_star),
                      name=f"synthetic-N{N}-d{dim}-m{m}")
    return problem, constraints, x0


#%% FINITE SUM TOY

class AverageQuadratic(Objective):
    """
    ``f(x) = (1/N) sum_l ||x - c_l||^2`` with ``N`` component centers.

    Component gradients are ``2 (x - c_l)``; block Lipschitz constants are 2.
    """

    def __init__(self, centers, partition):
        centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
        if centers.shape[1] != partition.n:
            raise DimensionError("centers do not match the partition")
        self.centers = centers
        self.mean = centers.mean(axis=0)
        self.partition = partition
        self.n_components = centers.shape[0]
        self.block_lipschitz = np.full(partition.b, 2.0)
        self._slices = [partition.slice(i) for i in range(partition.b)]
        # f(x) = ||x - mean||^2 + spread
        self._spread = float(np.mean(np.sum((centers - self.mean) ** 2, axis=1)))

    def value(self, x):
        r = x - self.mean
        return float(r @ r) + self._spread

    def component_value(self, l, x):
        r = x - self.centers[l]
        return float(r @ r)

    def partial_grad(self, i, x):
        s = self._slices[i]
        return 2.0 * (x[s] - self.mean[s])

    def component_partial_grad(self, l, i, x):
        s = self._slices[i]
        return 2.0 * (x[s] - self.centers[l, s])

    def component_gradient(self, l, x):
        return 2.0 * (x - self.centers[l])

    def delta_value(self, x, i, d_i, j, d_j):
        si, sj = self._slices[i], self._slices[j]
        ri, rj = x[si] - self.mean[si], x[sj] - self.mean[sj]
        return float(2.0 * (ri @ d_i + rj @ d_j) + d_i @ d_i + d_j @ d_j)


def zero_sum_optimum(mean, partition):
    """Closest point to ``mean`` with ``sum_i x_i = 0`` (equal blocks)."""
    blocks = np.asarray(mean, dtype=np.float64).reshape(partition.b, -1)
    return (blocks - blocks.mean(axis=0)).ravel()


def average_quadratic_problem(N=4, b=10, dim=2, spread=1.0, seed=0):
    """
    Finite-sum toy over ``b`` blocks of size ``dim`` coupled by ``sum_i x_i = 0``.

    Component centers are Gaussian with standard deviation ``spread`` around
    a common random offset. ``f_star`` is set from the closed form.
    """
    if N < 1:
        raise ConfigError("need at least one component")
    part = BlockPartition.uniform(b, dim)
    rng = np.random.default_rng(seed)
    offset = rng.normal(size=part.n) * 2.0
    centers = offset + spread * rng.normal(size=(N, part.n))
    objective = AverageQuadratic(centers, part)
    constraints = LinearConstraints.sum_constraint(part)
    x_star = zero_sum_optimum(objective.mean, part)
    return Problem(objective, constraints, f_star=objective.value(x_star),
                   name=f"average-quadratic-N{N}")


#%% SVM DUAL

class SvmDataset:
    """
    Sparse examples in CSR layout with labels in ``{+1, -1}``.

    Parameters
    ----------
    indptr, indices, values : array_like
        CSR arrays; indices are 0-based and strictly increasing per row.
    labels : array_like
    feature_dim : int, optional
        Defaults to ``max index + 1``.
    """

    def __init__(self, indptr, indices, values, labels, feature_dim=None):
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.values = np.asarray(values, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.float64)
        n = len(self.indptr) - 1
        if self.labels.shape != (n,):
            raise DimensionError("one label per example expected")
        if not np.all(np.abs(self.labels) == 1.0):
            raise ConfigError("labels must be +1 or -1")
        if not np.all(np.isfinite(self.values)):
            raise ConfigError("feature values must be finite")
        if self.indices.size and self.indices.min() < 0:
            raise ConfigError("negative feature index")
        inner = np.diff(self.indices) > 0
        starts = self.indptr[1:-1]
        inner[starts[(starts > 0) & (starts < self.indices.size)] - 1] = True
        if not np.all(inner):
            raise ConfigError("feature indices must be strictly increasing within each example")
        seen = int(self.indices.max()) + 1 if self.indices.size else 0
        if feature_dim is None:
            feature_dim = seen
        elif feature_dim < seen:
            raise ConfigError(f"feature_dim {feature_dim} smaller than max index {seen}")
        self.feature_dim = int(feature_dim)

    @classmethod
    def from_dense(cls, X, y):
        X = np.asarray(X, dtype=np.float64)
        rows, cols = np.nonzero(X)
        indptr = np.concatenate([[0], np.cumsum(np.bincount(rows, minlength=X.shape[0]))])
        return cls(indptr, cols, X[rows, cols], y, feature_dim=X.shape[1])

    @property
    def n_examples(self):
        return len(self.indptr) - 1

    def __len__(self):
        return self.n_examples

    def row(self, i):
        a, z = self.indptr[i], self.indptr[i + 1]
        return self.indices[a:z], self.values[a:z]

    def dense(self):
        X = np.zeros((self.n_examples, self.feature_dim))
        for i in range(self.n_examples):
            idx, val = self.row(i)
            X[i, idx] = val
        return X

    def avg_nnz(self):
        return self.indices.size / max(self.n_examples, 1)

    def subsample(self, size, seed=0):
        """Random subset of ``size`` examples, original order preserved."""
        if size >= self.n_examples:
            return self
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(self.n_examples, size=size, replace=False))
        rows = [self.row(i) for i in keep]
        indptr = np.concatenate([[0], np.cumsum([len(r[0]) for r in rows])])
        return SvmDataset(indptr, np.concatenate([r[0] for r in rows]),
                          np.concatenate([r[1] for r in rows]), self.labels[keep],
                          feature_dim=self.feature_dim)

    def support_overlap(self, pairs=2000, seed=0):
        """Mean Jaccard overlap of feature supports over random example pairs."""
        n = self.n_examples
        if n < 2:
            return 0.0
        rng = np.random.default_rng(seed)
        total = 0.0
        for _ in range(pairs):
            i, j = rng.choice(n, size=2, replace=False)
            a, b = self.row(i)[0], self.row(j)[0]
            union = len(np.union1d(a, b))
            if union:
                total += len(np.intersect1d(a, b, assume_unique=True)) / union
        return total / pairs


class SvmDual(Objective):
    """
    ``f(alpha) = ||w||^2 / 2 - sum_i alpha_i`` with ``w = sum_i alpha_i y_i z_i``.

    The weight vector ``w`` is kept in sync with the iterate through
    :meth:`notify_update`, so a partial gradient
    ``y_i z_i^T w - 1`` costs one sparse dot product. Engines that share
    ``w`` between threads install an atomic adder with :meth:`attach`.
    """

    def __init__(self, dataset):
        self.data = dataset
        n = dataset.n_examples
        self.partition = BlockPartition((1,) * n)
        self.y = dataset.labels
        self._rows = [dataset.row(i) for i in range(n)]
        sq = np.array([float(v @ v) for _, v in self._rows])
        # an all-zero example has a constant gradient; any positive scale works
        self.block_lipschitz = np.maximum(sq, 1e-12)
        self.sqnorm = sq
        self.w = np.zeros(dataset.feature_dim)
        self._add = self._local_add
        self.updates = 0

    def _local_add(self, idx, vals):
        self.w[idx] += vals

    def attach(self, w, adder):
        """Use the array ``w`` and the callable ``adder(idx, vals)`` for weight updates."""
        self.w = w
        self._add = adder

    def detach(self):
        self.w = np.array(self.w)
        self._add = self._local_add

    def weights(self, alpha):
        """``w`` recomputed from scratch."""
        d = self.data
        coef = np.asarray(alpha, dtype=np.float64) * self.y
        per_entry = np.repeat(coef, np.diff(d.indptr)) * d.values
        return np.bincount(d.indices, weights=per_entry, minlength=d.feature_dim)

    def value(self, x):
        w = self.weights(x)
        return 0.5 * float(w @ w) - float(np.sum(x))

    def current_value(self, x):
        w = self.w
        return 0.5 * float(w @ w) - float(np.sum(x))

    def grad_scalar(self, i):
        idx, val = self._rows[i]
        return self.y[i] * float(val @ self.w[idx]) - 1.0

    def partial_grad(self, i, x):
        return np.array([self.grad_scalar(i)])

    def gradient(self, x):
        return np.array([self.grad_scalar(i) for i in range(self.partition.b)])

    def delta_value(self, x, i, d_i, j, d_j):
        di, dj = float(d_i[0]), float(d_j[0])
        (ii, vi), (ij, vj) = self._rows[i], self._rows[j]
        yi, yj = self.y[i], self.y[j]
        lin = di * yi * float(vi @ self.w[ii]) + dj * yj * float(vj @ self.w[ij])
        _, pi, pj = np.intersect1d(ii, ij, assume_unique=True, return_indices=True)
        cross = float(vi[pi] @ vj[pj])
        quad = di * di * self.sqnorm[i] + dj * dj * self.sqnorm[j] + 2.0 * di * dj * yi * yj * cross
        return lin + 0.5 * quad - di - dj

    def csr(self):
        """Arrays consumed by the compiled sweep."""
        d = self.data
        return d.indptr, d.indices, d.values, self.y, self.sqnorm

    def notify_update(self, i, d_i):
        d = float(d_i[0]) if np.ndim(d_i) else float(d_i)
        if d:
            idx, val = self._rows[i]
            self._add(idx, (d * self.y[i]) * val)
        self.updates += 1

    def sync(self, x):
        self.w[:] = self.weights(x)
        self.updates = 0

    def refresh(self, x, rtol=1e-8):
        """Check the incremental ``w`` against a fresh one, then resynchronize."""
        fresh = self.weights(x)
        drift = float(np.max(np.abs(self.w - fresh), initial=0.0))
        if drift > rtol * (1.0 + float(np.max(np.abs(fresh), initial=0.0))):
            raise NumericsError(f"weight vector drifted by {drift:.3e} after {self.updates} updates")
        self.w[:] = fresh


def svm_dual_problem(dataset, C, overlap_pairs=2000):
    """
    Linear SVM dual ``min ||w||^2/2 - sum alpha_i`` s.t. ``sum alpha_i y_i = 0``,
    ``0 <= alpha_i <= C``, started at ``alpha = 0``.

    Logs the mean pairwise support overlap and warns above 0.1, since
    lock-free training relies on sparse, weakly overlapping examples.
    """
    if dataset.n_examples == 0:
        raise ConfigError("empty dataset")
    if dataset.n_examples < 2:
        raise ConfigError("need at least two examples")
    if not C > 0:
        raise ConfigError(f"box bound C must be positive, got {C}")
    objective = SvmDual(dataset)
    constraints = LinearConstraints.single_row(dataset.labels)
    h = SeparableNonsmooth(Box(0.0, C), dataset.n_examples)
    overlap = dataset.support_overlap(pairs=overlap_pairs)
    log.info("mean pairwise support overlap %.4f", overlap)
    if overlap > OVERLAP_WARN:
        log.warning("examples overlap strongly (mean Jaccard %.3f > %.2f); "
                    "asynchronous updates may interfere", overlap, OVERLAP_WARN)
    problem = Problem(objective, constraints, h=h, name="svm-dual")
    problem.svm_c = float(C)
    problem.overlap = overlap
    return problem


# feature group sizes of the one-hot encoded census data behind a7a
A7A_GROUPS = (5, 8, 5, 16, 7, 14, 6, 5, 2, 3, 3, 3, 41, 4)


def a7a_like(n=2000, seed=0, positive_rate=0.24, noise=0.5):
    """
    Synthetic stand-in with the shape of a7a.

    Each example activates exactly one binary feature in each of 14 groups
    (122 features, 14 nonzeros per row). Labels come from a random linear
    score plus Gaussian noise, thresholded to give ``positive_rate``
    positives.
    """
    rng = np.random.default_rng(seed)
    sizes = np.array(A7A_GROUPS)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    dim = int(sizes.sum())
    picks = np.column_stack([
        s + rng.choice(k, size=n, p=rng.dirichlet(np.ones(k))) for s, k in zip(starts, sizes)])
    weights = rng.normal(size=dim)
    score = weights[picks].sum(axis=1) + noise * rng.normal(size=n)
    labels = np.where(score > np.quantile(score, 1.0 - positive_rate), 1.0, -1.0)
    indptr = np.arange(n + 1) * len(sizes)
    return SvmDataset(indptr, picks.ravel(), np.ones(picks.size), labels, feature_dim=dim)
