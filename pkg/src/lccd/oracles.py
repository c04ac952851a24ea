"""
Dense reference solvers used to validate the iterative engines.

These work on the full matrices and are meant for small instances only.
"""

import numpy as np


def kkt_solve(Q, q, A, b=None):
    """
    Solve ``min x^T Q x / 2 + q^T x`` s.t. ``A x = b`` through the KKT system

        [Q  A^T] [x  ]   [-q]
        [A  0  ] [lam] = [ b]

    Returns
    -------
    x, lam : ndarray
        Least-squares solution, so singular but consistent systems still solve.
    """
    Q = np.asarray(Q, dtype=np.float64)
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    n, m = Q.shape[0], A.shape[0]
    rhs = np.concatenate([-np.asarray(q, dtype=np.float64),
                          np.zeros(m) if b is None else np.asarray(b, dtype=np.float64)])
    K = np.zeros((n + m, n + m))
    K[:n, :n] = Q
    K[:n, n:] = A.T
    K[n:, :n] = A
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:n], sol[n:]


def quadratic_optimum(objective, constraints):
    """
    ``(x*, f*)`` for an objective exposing ``quadratic_form()`` or the
    attributes ``Q``, ``q``, ``c0``.
    """
    if hasattr(objective, "quadratic_form"):
        Q, q, c0 = objective.quadratic_form()
    else:
        Q, q, c0 = objective.Q, objective.q, objective.c0
    x, _ = kkt_solve(Q, q, constraints.dense())
    return x, float(0.5 * x @ Q @ x + q @ x + c0)

