"""
Compiled inner loop for the SVM dual: scalar blocks, one constraint row and
box terms. Falls back to plain Python when numba is not installed.
"""

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn


@njit(cache=True)
def _sparse_dot(indptr, indices, values, i, w):
    s = 0.0
    for p in range(indptr[i], indptr[i + 1]):
        s += values[p] * w[indices[p]]
    return s


@njit(cache=True)
def _sparse_axpy(indptr, indices, values, i, coef, w):
    for p in range(indptr[i], indptr[i + 1]):
        w[indices[p]] += coef * values[p]


@njit(cache=True)
def _snap(x, d, lo, hi):
    new = x + d
    if abs(new - hi) <= 1e-15 * (1.0 + abs(hi)):
        return hi - x
    if abs(new - lo) <= 1e-15 * (1.0 + abs(lo)):
        return lo - x
    return d


@njit(cache=True)
def svm_box_sweep(x, w, indptr, indices, values, y, sqnorm, lipschitz, lo, hi,
                  edge_i, edge_j, steps, f, f_target):
    """
    Run the pair steps for the pre-drawn edges ``(edge_i[k], edge_j[k])``.

    Updates ``x`` and ``w`` in place and tracks ``f`` incrementally. Stops
    early after the first step with ``f < f_target``.

    Returns
    -------
    done : int
        Number of steps taken.
    f : float
        Objective after the last step.
    """
    for k in range(edge_i.shape[0]):
        i = edge_i[k]
        j = edge_j[k]
        yi = y[i]
        yj = y[j]
        gi = yi * _sparse_dot(indptr, indices, values, i, w) - 1.0
        gj = yj * _sparse_dot(indptr, indices, values, j, w) - 1.0
        alpha = steps[k] / (lipschitz[i] + lipschitz[j])
        ri = 1.0 / yi
        rj = 1.0 / yj
        t = -alpha * (gi * ri - gj * rj) / (ri * ri + rj * rj)
        xi = x[i]
        xj = x[j]
        if ri > 0:
            t_lo = (lo[i] - xi) / ri
            t_hi = (hi[i] - xi) / ri
        else:
            t_lo = (hi[i] - xi) / ri
            t_hi = (lo[i] - xi) / ri
        if rj > 0:
            t_lo = max(t_lo, (xj - hi[j]) / rj)
            t_hi = min(t_hi, (xj - lo[j]) / rj)
        else:
            t_lo = max(t_lo, (xj - lo[j]) / rj)
            t_hi = min(t_hi, (xj - hi[j]) / rj)
        if t < t_lo:
            t = t_lo
        elif t > t_hi:
            t = t_hi
        di = _snap(xi, t * ri, lo[i], hi[i])
        dj = _snap(xj, -t * rj, lo[j], hi[j])
        if di != 0.0:
            # change of ||w||^2 / 2 when adding di y_i z_i
            f += di * (gi + 1.0) + 0.5 * di * di * sqnorm[i] - di
            _sparse_axpy(indptr, indices, values, i, di * yi, w)
            x[i] = xi + di
        if dj != 0.0:
            gj_new = yj * _sparse_dot(indptr, indices, values, j, w)
            f += dj * gj_new + 0.5 * dj * dj * sqnorm[j] - dj
            _sparse_axpy(indptr, indices, values, j, dj * yj, w)
            x[j] = xj + dj
        if f < f_target:
            return k + 1, f
    return edge_i.shape[0], f
