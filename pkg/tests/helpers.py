"""Independent reference computations shared by the tests."""

import math

import numpy as np

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def dense_kkt(Q, q, A):
    """Minimize x^T Q x / 2 + q^T x subject to A x = 0 with one dense solve."""
    n, m = Q.shape[0], A.shape[0]
    K = np.block([[Q, A.T], [A, np.zeros((m, m))]])
    sol = np.linalg.lstsq(K, np.concatenate([-q, np.zeros(m)]), rcond=None)[0]
    return sol[:n]


def pair_kkt(g_i, g_j, A_i, A_j, alpha):
    g = np.concatenate([g_i, g_j])
    d = dense_kkt(np.eye(g.size) / alpha, g, np.hstack([A_i, A_j]))
    return d[:len(g_i)], d[len(g_i):]


def minimize_1d(fun, lo, hi, grid=4001, iters=200):
    """Grid search followed by golden-section refinement on [lo, hi]."""
    ts = np.linspace(lo, hi, grid)
    vals = np.array([fun(t) for t in ts])
    k = int(np.argmin(vals))
    a, b = ts[max(k - 1, 0)], ts[min(k + 1, grid - 1)]
    c, d = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = fun(d)
    return 0.5 * (a + b)


def central_diff_grad(fun, x, h=1e-6):
    g = np.zeros_like(x)
    for c in range(x.size):
        e = np.zeros_like(x)
        e[c] = h
        g[c] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def random_feasible(constraints, rng, scale=1.0):
    """Gaussian vector projected onto ker A with a dense least-squares solve."""
    A = constraints.dense()
    xi = scale * rng.standard_normal(A.shape[1])
    lam = np.linalg.lstsq(A @ A.T, A @ xi, rcond=None)[0]
    return xi - A.T @ lam


def piecewise_quadratic_min(phi, lo, hi, kinks=()):
    """
    Exact minimizer of a convex function that is quadratic between kinks.

    Uses function values only: on every piece a parabola is fitted through
    three interior points and its vertex, clipped to the piece, joins the
    piece ends as a candidate. The candidate with the smallest value wins.
    """
    pts = sorted({lo, hi, *[k for k in kinks if lo < k < hi]})
    cands = list(pts)
    for a, b in zip(pts[:-1], pts[1:]):
        if b <= a:
            continue
        t = a + (b - a) * np.array([0.25, 0.5, 0.75])
        v = np.array([phi(s) for s in t])
        h = t[1] - t[0]
        curv = (v[2] - 2 * v[1] + v[0]) / (h * h)
        if curv > 0:
            slope = (v[2] - v[0]) / (2 * h)
            cands.append(min(max(t[1] - slope / curv, a), b))
    vals = [phi(c) for c in cands]
    return cands[int(np.argmin(vals))]
