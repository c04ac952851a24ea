"""
Coordinatewise separable nonsmooth terms ``h(x) = sum_i h_i(x_i)``.

Each block term is a scalar convex function applied to every coordinate of
the block. Besides its value, a term exposes its effective domain and its
one-sided derivatives, which is what the pairwise composite solver needs to
locate the root of the subdifferential inclusion. All methods operate
elementwise on numpy arrays.
"""

import numpy as np

from .exceptions import ConfigError

INF = np.inf


class ScalarTerm:
    """Convex scalar function with known domain and one-sided derivatives."""

    is_zero = False

    @property
    def domain(self):
        return -INF, INF

    def value(self, u):
        raise NotImplementedError

    def left_deriv(self, u):
        raise NotImplementedError

    def right_deriv(self, u):
        raise NotImplementedError

    def prox(self, v, gamma):
        """``argmin_u h(u) + (u - v)^2 / (2 gamma)``, elementwise."""
        raise NotImplementedError


class Zero(ScalarTerm):
    is_zero = True

    def value(self, u):
        return np.zeros_like(np.asarray(u, dtype=float))

    def left_deriv(self, u):
        return np.zeros_like(np.asarray(u, dtype=float))

    right_deriv = left_deriv

    def prox(self, v, gamma):
        return np.asarray(v, dtype=float).copy()

    def __repr__(self):
        return "Zero()"


class Box(ScalarTerm):
    """Indicator of ``[lo, hi]``."""

    def __init__(self, lo, hi):
        lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
        if np.any(lo > hi):
            raise ConfigError(f"empty box [{lo}, {hi}]")
        self.lo, self.hi = lo, hi

    @property
    def domain(self):
        return self.lo, self.hi

    def value(self, u):
        u = np.asarray(u, dtype=float)
        return np.where((u >= self.lo) & (u <= self.hi), 0.0, INF)

    def left_deriv(self, u):
        u = np.asarray(u, dtype=float)
        return np.where(u > self.hi, INF, np.where(u <= self.lo, -INF, 0.0))

    def right_deriv(self, u):
        u = np.asarray(u, dtype=float)
        return np.where(u < self.lo, -INF, np.where(u >= self.hi, INF, 0.0))

    def prox(self, v, gamma):
        return np.clip(v, self.lo, self.hi)

    def __repr__(self):
        return f"Box({self.lo}, {self.hi})"


class L1(ScalarTerm):
    """``weight * |u|``."""

    def __init__(self, weight=1.0):
        if np.any(np.asarray(weight) < 0):
            raise ConfigError("l1 weight must be nonnegative")
        self.weight = np.asarray(weight, dtype=float)

    def value(self, u):
        return self.weight * np.abs(u)

    def left_deriv(self, u):
        u = np.asarray(u, dtype=float)
        return np.where(u > 0, self.weight, -self.weight)

    def right_deriv(self, u):
        u = np.asarray(u, dtype=float)
        return np.where(u < 0, -self.weight, self.weight)

    def prox(self, v, gamma):
        v = np.asarray(v, dtype=float)
        return np.sign(v) * np.maximum(np.abs(v) - gamma * self.weight, 0.0)

    def __repr__(self):
        return f"L1({self.weight})"


class Custom(ScalarTerm):
    """
    User-supplied scalar convex term.

    Parameters
    ----------
    value : callable
        Elementwise ``h(u)``.
    derivatives : callable
        ``u -> (left, right)`` one-sided derivatives, elementwise.
    domain : tuple, optional
        Closed effective domain ``(lo, hi)``.
    """

    def __init__(self, value, derivatives, domain=(-INF, INF)):
        self._value = value
        self._derivatives = derivatives
        self._domain = domain

    @property
    def domain(self):
        return self._domain

    def value(self, u):
        return np.asarray(self._value(np.asarray(u, dtype=float)), dtype=float)

    def left_deriv(self, u):
        return np.asarray(self._derivatives(np.asarray(u, dtype=float))[0], dtype=float)

    def right_deriv(self, u):
        return np.asarray(self._derivatives(np.asarray(u, dtype=float))[1], dtype=float)

    def prox(self, v, gamma):
        # bisection on u + gamma * dh(u) = v
        v = np.asarray(v, dtype=float)
        lo_d, hi_d = (np.broadcast_to(np.asarray(t, dtype=float), v.shape) for t in self._domain)
        lo = np.where(np.isfinite(lo_d), lo_d, v - 1.0)
        hi = np.where(np.isfinite(hi_d), hi_d, v + 1.0)
        for _ in range(60):
            grow = np.isinf(lo_d) & (lo + gamma * self.right_deriv(lo) > v)
            lo = np.where(grow, v - 2.0 * (v - lo), lo)
            grow_hi = np.isinf(hi_d) & (hi + gamma * self.left_deriv(hi) < v)
            hi = np.where(grow_hi, v + 2.0 * (hi - v), hi)
            if not (grow.any() or grow_hi.any()):
                break
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            below = mid + gamma * self.right_deriv(mid) < v
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)


class SeparableNonsmooth:
    """
    Block separable ``h``; one :class:`ScalarTerm` per block (or one shared term).

    Parameters
    ----------
    terms : ScalarTerm or list of ScalarTerm
    b : int, optional
        Number of blocks when a single term is shared.
    """

    def __init__(self, terms, b=None):
        if isinstance(terms, ScalarTerm):
            if b is None:
                raise ConfigError("block count needed for a shared term")
            terms = [terms] * b
        self.terms = list(terms)

    @classmethod
    def zero(cls, b):
        return cls(Zero(), b)

    @property
    def is_zero(self):
        return all(t.is_zero for t in self.terms)

    def term(self, i):
        return self.terms[i]

    def value(self, x, partition):
        if all(t is self.terms[0] for t in self.terms):
            return float(np.sum(self.terms[0].value(x)))
        total = 0.0
        for term, xi in zip(self.terms, partition.split(x)):
            total += float(np.sum(term.value(xi)))
        return total

    def all_box(self):
        return all(isinstance(t, Box) for t in self.terms)


def as_nonsmooth(h, b):
    """Normalize ``None`` / a single term / a list into :class:`SeparableNonsmooth`."""
    if h is None:
        return SeparableNonsmooth.zero(b)
    if isinstance(h, SeparableNonsmooth):
        return h
    if isinstance(h, ScalarTerm):
        return SeparableNonsmooth(h, b)
    return SeparableNonsmooth(h)
