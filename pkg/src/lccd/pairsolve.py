"""
Exact solvers for the two-block subproblem

    min_{A_i d_i + A_j d_j = 0}  <g_i, d_i> + <g_j, d_j>
                                 + (||d_i||^2 + ||d_j||^2) / (2 alpha)
                                 + h_i(x_i + d_i) + h_j(x_j + d_j)

in its three tractable regimes: smooth with general ``A_i`` (closed form
through the Gram pseudo-inverse), scalar blocks with a single row and a
box (SMO-style clipping), and identity sum constraints with separable
nonsmooth terms (coordinatewise bisection).
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import FeasibilityError, InternalError, UnboundedError
from .graph import symmetric_pinv
from .model import ConstraintKind
from .nonsmooth import Box


@dataclass
class PairUpdate:
    """Feasible pair direction ``(d_i, d_j)``; ``dual`` is the multiplier (smooth case)."""

    i: int
    j: int
    d_i: np.ndarray
    d_j: np.ndarray
    dual: np.ndarray = None


def gram_pinv(A_i, A_j):
    """``(A_i A_i^T + A_j A_j^T)^+`` with eigenvalue cutoff ``1e-12 * max``."""
    A_i, A_j = np.atleast_2d(A_i), np.atleast_2d(A_j)
    return symmetric_pinv(A_i @ A_i.T + A_j @ A_j.T, rtol=1e-12)


class GramCache:
    """
    Gram pseudo-inverses for every edge of a graph, built eagerly.

    Entries are read-only after construction and may be shared by threads.
    """

    def __init__(self, constraints, graph):
        self.m = constraints.m
        blocks = constraints.blocks
        self._store = {}
        for i, j in graph.edges.tolist():
            g = gram_pinv(blocks[i], blocks[j])
            g.setflags(write=False)
            self._store[(i, j)] = g

    def __len__(self):
        return len(self._store)

    def __contains__(self, edge):
        return _key(*edge) in self._store

    def get(self, i, j):
        try:
            return self._store[_key(i, j)]
        except KeyError:
            raise InternalError(f"no cached Gram pseudo-inverse for edge ({i}, {j})") from None


def _key(i, j):
    return (i, j) if i < j else (j, i)


def smooth_pair_update(g_i, g_j, A_i, A_j, alpha, gram=None, i=0, j=1):
    """
    Closed-form minimizer of the smooth pair subproblem.

    Parameters
    ----------
    g_i, g_j : ndarray
        Partial gradients at the current point.
    A_i, A_j : ndarray
        Constraint columns of the two blocks.
    alpha : float
        Step scale (the caller divides by ``L_i + L_j``).
    gram : ndarray, optional
        Cached ``(A_i A_i^T + A_j A_j^T)^+``; computed when omitted.

    Returns
    -------
    PairUpdate
        ``lambda = alpha G^+ (A_i g_i + A_j g_j)``, ``d_i = -alpha g_i + A_i^T lambda``
        and likewise for ``j``.
    """
    if gram is None:
        gram = gram_pinv(A_i, A_j)
    m = A_i.shape[0]
    if gram.shape != (m, m):
        raise InternalError(f"Gram cache entry has shape {gram.shape}, expected ({m}, {m})")
    lam = alpha * (gram @ (A_i @ g_i + A_j @ g_j))
    d_i = A_i.T @ lam - alpha * g_i
    d_j = A_j.T @ lam - alpha * g_j
    return PairUpdate(i, j, d_i, d_j, lam)


def scalar_sum_pair_update(g_i, g_j, c_i, c_j, alpha, i=0, j=1):
    """Smooth update for ``A_i = c_i I`` blocks without forming any matrix."""
    lam = alpha * (c_i * g_i + c_j * g_j) / (c_i * c_i + c_j * c_j)
    return PairUpdate(i, j, c_i * lam - alpha * g_i, c_j * lam - alpha * g_j, lam)


def box_step(g_i, g_j, a_i, a_j, x_i, x_j, lo_i, hi_i, lo_j, hi_j, alpha):
    """
    Scalar SMO-style step: returns ``t`` with ``d_i = t / a_i``, ``d_j = -t / a_j``.

    The unconstrained minimizer is clipped to the segment on which both
    coordinates stay inside their boxes; for a convex 1-d quadratic this is
    the exact constrained minimizer.
    """
    ri, rj = 1.0 / a_i, 1.0 / a_j
    t = -alpha * (g_i * ri - g_j * rj) / (ri * ri + rj * rj)
    # x_i + t ri in [lo_i, hi_i] and x_j - t rj in [lo_j, hi_j]
    if ri > 0:
        t_lo, t_hi = (lo_i - x_i) / ri, (hi_i - x_i) / ri
    else:
        t_lo, t_hi = (hi_i - x_i) / ri, (lo_i - x_i) / ri
    if rj > 0:
        t_lo, t_hi = max(t_lo, (x_j - hi_j) / rj), min(t_hi, (x_j - lo_j) / rj)
    else:
        t_lo, t_hi = max(t_lo, (x_j - lo_j) / rj), min(t_hi, (x_j - hi_j) / rj)
    if t < t_lo:
        return t_lo
    if t > t_hi:
        return t_hi
    return t


def box_pair_update(g_i, g_j, y_i, y_j, x_i, x_j, lo, hi, alpha, i=0, j=1, tol=1e-12):
    """
    Exact pair step for scalar blocks coupled by ``y_i d_i + y_j d_j = 0`` under
    box constraints.

    Parameters
    ----------
    g_i, g_j : float
        Partial gradients.
    y_i, y_j : float
        Nonzero constraint coefficients (``+-1`` labels for the SVM dual).
    x_i, x_j : float
        Current values, which must lie in their boxes.
    lo, hi : float or pair of float
        Box bounds, shared or given per block as ``(lo_i, lo_j)``.
    alpha : float

    Returns
    -------
    PairUpdate
        With the step landing exactly on a bound when the bound is active.
    """
    lo_i, lo_j = np.broadcast_to(np.asarray(lo, dtype=float), (2,))
    hi_i, hi_j = np.broadcast_to(np.asarray(hi, dtype=float), (2,))
    for name, v, a, z in (("x_i", x_i, lo_i, hi_i), ("x_j", x_j, lo_j, hi_j)):
        slack = tol * (1.0 + abs(v))
        if v < a - slack or v > z + slack:
            raise FeasibilityError(f"{name} = {v} outside box [{a}, {z}]")
    t = box_step(float(g_i), float(g_j), float(y_i), float(y_j), float(x_i), float(x_j),
                 lo_i, hi_i, lo_j, hi_j, alpha)
    d_i, d_j = t / y_i, -t / y_j
    # snap onto an active bound so that the new point sits exactly on it
    d_i = _snap(x_i, d_i, lo_i, hi_i)
    d_j = _snap(x_j, d_j, lo_j, hi_j)
    return PairUpdate(i, j, np.array([d_i]), np.array([d_j]))


def _snap(x, d, lo, hi):
    new = x + d
    if abs(new - hi) <= 1e-15 * (1.0 + abs(hi)):
        return hi - x
    if abs(new - lo) <= 1e-15 * (1.0 + abs(lo)):
        return lo - x
    return d


def prox_pair_update(g_i, g_j, x_i, x_j, h_i, h_j, alpha, i=0, j=1,
                     rtol=1e-13, max_iter=200, max_bracket=1e12):
    """
    Composite pair step for identity sum constraints (``d_j = -d_i``).

    For each coordinate the scalar problem

        min_t  (g_i - g_j) t + t^2 / alpha + h_i(x_i + t) + h_j(x_j - t)

    is solved by bisection on its monotone subdifferential, starting from the
    bracket ``|t| <= alpha (|g| + 1)`` and doubling it when needed.

    Raises
    ------
    UnboundedError
        When the bracket has to grow beyond ``max_bracket`` (a nonconvex or
        unbounded-below custom term).
    """
    g_i, g_j = np.atleast_1d(np.asarray(g_i, float)), np.atleast_1d(np.asarray(g_j, float))
    x_i, x_j = np.atleast_1d(np.asarray(x_i, float)), np.atleast_1d(np.asarray(x_j, float))
    a = g_i - g_j
    two_over_alpha = 2.0 / alpha

    # feasible interval for t from both domains
    dlo_i, dhi_i = (np.broadcast_to(np.asarray(v, float), a.shape) for v in h_i.domain)
    dlo_j, dhi_j = (np.broadcast_to(np.asarray(v, float), a.shape) for v in h_j.domain)

    # arguments are clipped so that rounding in x + t never leaves the domain
    def right(t):
        u_i, u_j = np.clip(x_i + t, dlo_i, dhi_i), np.clip(x_j - t, dlo_j, dhi_j)
        return a + two_over_alpha * t + h_i.right_deriv(u_i) - h_j.left_deriv(u_j)

    def left(t):
        u_i, u_j = np.clip(x_i + t, dlo_i, dhi_i), np.clip(x_j - t, dlo_j, dhi_j)
        return a + two_over_alpha * t + h_i.left_deriv(u_i) - h_j.right_deriv(u_j)
    t_min = np.maximum(dlo_i - x_i, x_j - dhi_j)
    t_max = np.minimum(dhi_i - x_i, x_j - dlo_j)
    if np.any(t_min > t_max + 1e-12 * (1.0 + np.abs(t_max))):
        raise FeasibilityError("current point outside the domain of h")
    t_min = np.minimum(t_min, t_max)

    width = alpha * (np.abs(a) + 1.0)
    lo = np.maximum(-width, t_min)
    hi = np.minimum(width, t_max)
    # grow the bracket until the root is inside: right(lo) < 0 unless lo is the domain end
    while True:
        need_lo = (lo > t_min) & (right(lo) >= 0)
        need_hi = (hi < t_max) & (left(hi) <= 0)
        if not (need_lo.any() or need_hi.any()):
            break
        width = np.where(need_lo | need_hi, 2.0 * width, width)
        if np.max(width) > max_bracket:
            raise UnboundedError("subproblem bracket exceeded 1e12; is h convex and bounded below?")
        lo = np.where(need_lo, np.maximum(-width, t_min), lo)
        hi = np.where(need_hi, np.minimum(width, t_max), hi)

    # boundary solutions
    at_lo = right(lo) >= 0
    at_hi = left(hi) <= 0
    t = np.where(at_lo, lo, np.where(at_hi, hi, 0.5 * (lo + hi)))
    active = ~(at_lo | at_hi)
    for _ in range(max_iter):
        if not active.any():
            break
        mid = 0.5 * (lo + hi)
        r = right(mid)
        lft = left(mid)
        go_up = active & (r < 0)
        go_down = active & (lft > 0)
        hit = active & ~go_up & ~go_down
        lo = np.where(go_up, mid, lo)
        hi = np.where(go_down, mid, hi)
        t = np.where(hit, mid, np.where(active, 0.5 * (lo + hi), t))
        active &= ~hit
        active &= (hi - lo) > rtol * (1.0 + np.abs(t))
    return PairUpdate(i, j, t.copy(), -t)


class PairStepper:
    """
    Dispatch a pair step to the right solver for a problem.

    Smooth problems use the closed form (cached Gram inverses, or the scalar
    formula for sum constraints). With a nonsmooth term, scalar single-row
    problems whose terms are all boxes use the SMO-style step, and identity
    sum constraints use the bisection solver. Other composite combinations
    have no exact pair solver and are rejected.
    """

    def __init__(self, problem, graph, h):
        from .exceptions import ConfigError

        cons = problem.constraints
        self.constraints = cons
        self.partition = cons.partition
        self.h = h
        self.mode = None
        if graph.b != cons.b:
            raise ConfigError(f"graph has {graph.b} nodes but the problem has {cons.b} blocks")
        if h.is_zero:
            if cons.kind is ConstraintKind.SUM or (
                    cons.kind is ConstraintKind.SINGLE_ROW and cons.coefficients is not None):
                self.mode = "scalar-sum"
                self.coef = cons.coefficients
            else:
                self.mode = "smooth"
                self.cache = GramCache(cons, graph)
        elif (cons.kind is ConstraintKind.SINGLE_ROW and cons.coefficients is not None
              and h.all_box()):
            self.mode = "box"
            self.coef = cons.coefficients
            self.lo = np.array([float(np.asarray(t.lo).ravel()[0]) for t in h.terms])
            self.hi = np.array([float(np.asarray(t.hi).ravel()[0]) for t in h.terms])
        elif cons.is_identity_sum:
            self.mode = "prox"
        else:
            raise ConfigError(
                "composite pair steps are only available for identity sum constraints "
                "or scalar single-row constraints with box terms")

    def step(self, i, j, g_i, g_j, x_i, x_j, alpha):
        """Return ``(d_i, d_j)`` for edge ``(i, j)`` at step scale ``alpha``."""
        mode = self.mode
        if mode == "scalar-sum":
            c_i, c_j = self.coef[i], self.coef[j]
            lam = alpha * (c_i * g_i + c_j * g_j) / (c_i * c_i + c_j * c_j)
            return c_i * lam - alpha * g_i, c_j * lam - alpha * g_j
        if mode == "smooth":
            A_i, A_j = self.constraints.blocks[i], self.constraints.blocks[j]
            lam = alpha * (self.cache.get(i, j) @ (A_i @ g_i + A_j @ g_j))
            return A_i.T @ lam - alpha * g_i, A_j.T @ lam - alpha * g_j
        if mode == "box":
            a_i, a_j = self.coef[i], self.coef[j]
            xi, xj = float(x_i[0]), float(x_j[0])
            t = box_step(float(g_i[0]), float(g_j[0]), a_i, a_j, xi, xj,
                         self.lo[i], self.hi[i], self.lo[j], self.hi[j], alpha)
            d_i = _snap(xi, t / a_i, self.lo[i], self.hi[i])
            d_j = _snap(xj, -t / a_j, self.lo[j], self.hi[j])
            return np.array([d_i]), np.array([d_j])
        upd = prox_pair_update(g_i, g_j, x_i, x_j, self.h.term(i), self.h.term(j), alpha)
        return upd.d_i, upd.d_j

    def box_scalar_step(self, i, j, g_i, g_j, x_i, x_j, alpha):
        """Float-only variant of the box step used by the SVM hot loops."""
        a_i, a_j = self.coef[i], self.coef[j]
        t = box_step(g_i, g_j, a_i, a_j, x_i, x_j,
                     self.lo[i], self.hi[i], self.lo[j], self.hi[j], alpha)
        return _snap(x_i, t / a_i, self.lo[i], self.hi[i]), _snap(x_j, -t / a_j, self.lo[j], self.hi[j])


def is_box(term):
    return isinstance(term, Box)
