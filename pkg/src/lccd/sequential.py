"""
Sequential randomized pairwise coordinate descent.

Each iteration draws an edge ``(i, j)`` of the communication graph, solves
the two-block subproblem at step scale ``alpha_k / (L_i + L_j)`` and moves
both blocks. Every step keeps ``Ax = 0``, so the iterate stays feasible.
"""

import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, FeasibilityError, NumericsError
from .graph import EdgeSampler
from .model import Iterate, feasibility_residual, feasibility_tolerance, feasible_start
from .nonsmooth import as_nonsmooth
from ._kernels import svm_box_sweep
from .pairsolve import PairStepper

__all__ = [
    "ConstantStep", "InverseSqrtStep", "MaxIters", "GapFraction", "ResidualNorm",
    "SolverConfig", "Trace", "run_algorithm1", "feasible_start",
]

log = logging.getLogger(__name__)

DRIFT_RTOL = 1e-6


#%% STEP SIZES AND STOP RULES

@dataclass(frozen=True)
class ConstantStep:
    alpha: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError(f"step size must be positive, got {self.alpha}")

    def __call__(self, k):
        return self.alpha


@dataclass(frozen=True)
class InverseSqrtStep:
    """``alpha_k = min(1, c / sqrt(k + 1))``."""

    c: float

    def __post_init__(self):
        if not self.c > 0:
            raise ConfigError(f"schedule constant must be positive, got {self.c}")

    def __call__(self, k):
        return min(1.0, self.c / math.sqrt(k + 1.0))


@dataclass(frozen=True)
class MaxIters:
    """Run for the full iteration budget."""

    def met(self, f0, f, recent_steps=None):
        return False


@dataclass(frozen=True)
class GapFraction:
    """Stop once ``f0 - f > theta (f0 - f_star)``."""

    theta: float
    f_star: float

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise ConfigError(f"gap fraction must lie in (0, 1), got {self.theta}")

    def met(self, f0, f, recent_steps=None):
        return f0 - f > self.theta * (f0 - self.f_star)


@dataclass(frozen=True)
class ResidualNorm:
    """
    Stop once every step in the last ``window`` iterations had
    ``max(||d_i||_inf, ||d_j||_inf) <= eps``.
    """

    eps: float
    window: int = 100

    def met(self, f0, f, recent_steps=None):
        if recent_steps is None or len(recent_steps) < self.window:
            return False
        return max(recent_steps) <= self.eps


@dataclass
class SolverConfig:
    """
    Parameters
    ----------
    max_iters : int
        Iteration budget.
    alpha_schedule : callable
        ``k -> alpha_k``; :class:`ConstantStep` or :class:`InverseSqrtStep`.
    seed : int
        Seed of the edge sampler.
    stop_rule : MaxIters, GapFraction or ResidualNorm
    trace_every : int
        Record cadence; ``k = 0`` and the final iterate are always recorded.
    check_every : int
        Cadence of the from-scratch objective recomputation.
    compiled : bool
        Use the compiled loop for box-constrained scalar single-row problems
        (the SVM dual) when the stop rule allows it.
    """

    max_iters: int = 100_000
    alpha_schedule: object = field(default_factory=ConstantStep)
    seed: int = 0
    stop_rule: object = field(default_factory=MaxIters)
    trace_every: int = 100
    check_every: int = 10_000
    compiled: bool = True

    def __post_init__(self):
        if self.max_iters < 0:
            raise ConfigError("max_iters must be nonnegative")
        if self.trace_every < 1 or self.check_every < 1:
            raise ConfigError("trace and check cadences must be positive")


#%% TRACE

class Trace:
    """
    Iteration records ``(k, wall_s, objective, feas_residual, edge)``.

    ``best`` holds the best objective seen so far when the engine tracks it.
    After a run, ``iters``, ``final_objective``, ``stop_reason`` and
    ``converged`` summarize the outcome.
    """

    def __init__(self):
        self.k = []
        self.wall_s = []
        self.objective = []
        self.feas_residual = []
        self.edges = []
        self.best = []
        self.staleness = None
        self.iters = 0
        self.final_objective = float("nan")
        self.stop_reason = ""
        self.converged = False

    def __len__(self):
        return len(self.k)

    def record(self, k, wall_s, objective, feas, edge=(-1, -1), best=None):
        self.k.append(int(k))
        self.wall_s.append(float(wall_s))
        self.objective.append(float(objective))
        self.feas_residual.append(float(feas))
        self.edges.append(tuple(edge))
        if best is not None:
            self.best.append(float(best))

    def finish(self, iters, final_objective, stop_reason, converged):
        self.iters = int(iters)
        self.final_objective = float(final_objective)
        self.stop_reason = stop_reason
        self.converged = bool(converged)

    def first_k_below(self, level):
        """First recorded ``k`` whose objective is ``<= level``, or None."""
        for k, f in zip(self.k, self.objective):
            if f <= level:
                return k
        return None

    def as_array(self):
        return np.column_stack([self.k, self.wall_s, self.objective, self.feas_residual])


#%% ENGINE

def check_feasible(problem, x, h=None):
    res = feasibility_residual(problem.constraints, x)
    if res > feasibility_tolerance(x):
        raise FeasibilityError(f"start point violates Ax = 0 (residual {res:.3e})")
    if h is not None and not h.is_zero and not math.isfinite(h.value(x, problem.partition)):
        raise FeasibilityError("start point outside the domain of h")


def _block_h(h, i, x_i):
    return float(np.sum(h.term(i).value(x_i)))


def run_algorithm1(problem, graph, h=None, config=None, x0=None):
    """
    Randomized pairwise block coordinate descent.

    Parameters
    ----------
    problem : Problem
    graph : CommGraph
        Node count must equal the number of blocks.
    h : SeparableNonsmooth, ScalarTerm or None
        Nonsmooth term; defaults to ``problem.h``.
    config : SolverConfig, optional
    x0 : ndarray, optional
        Feasible start; defaults to ``problem.x0``.

    Returns
    -------
    Iterate
        Final point with objective ``f + h`` and feasibility residual.
    Trace

    Raises
    ------
    FeasibilityError
        If the start point violates the constraints.
    NumericsError
        On a NaN objective or when the incremental objective drifts from a
        fresh evaluation by more than ``1e-6 (1 + |f|)``.
    """
    config = config or SolverConfig()
    part = problem.partition
    b = part.b
    h = as_nonsmooth(problem.h if h is None else h, b)
    x = np.array(problem.x0 if x0 is None else x0, dtype=np.float64)
    check_feasible(problem, x, h)

    obj = problem.objective
    stepper = PairStepper(problem, graph, h)
    L = np.asarray(obj.block_lipschitz, dtype=np.float64)
    slices = [part.slice(i) for i in range(b)]
    smooth = h.is_zero
    schedule = config.alpha_schedule
    stop = config.stop_rule
    window = deque(maxlen=stop.window) if isinstance(stop, ResidualNorm) else None

    obj.sync(x)
    f = obj.current_value(x) + (0.0 if smooth else h.value(x, part))
    f0 = f
    sampler = EdgeSampler(graph, config.seed)
    trace = Trace()
    t0 = time.perf_counter()
    trace.record(0, 0.0, f, feasibility_residual(problem.constraints, x))

    if config.compiled and stepper.mode == "box" and hasattr(obj, "csr") \
            and isinstance(stop, (MaxIters, GapFraction)):
        return _run_box_sweeps(problem, graph, h, config, x, obj, stepper, sampler, trace, f0, t0)

    k = 0
    reason = "max_iters"
    converged = False
    while k < config.max_iters:
        i, j = next(sampler)
        si, sj = slices[i], slices[j]
        a = schedule(k) / (L[i] + L[j])
        x_i, x_j = x[si], x[sj]
        g_i = obj.partial_grad(i, x)
        g_j = obj.partial_grad(j, x)
        d_i, d_j = stepper.step(i, j, g_i, g_j, x_i, x_j, a)
        delta = obj.delta_value(x, i, d_i, j, d_j)
        if not smooth:
            h_old = _block_h(h, i, x_i) + _block_h(h, j, x_j)
        x_i += d_i
        x_j += d_j
        obj.notify_update(i, d_i)
        obj.notify_update(j, d_j)
        k += 1
        if delta is None:
            f = obj.current_value(x) + (0.0 if smooth else h.value(x, part))
        else:
            f += delta
            if not smooth:
                f += _block_h(h, i, x_i) + _block_h(h, j, x_j) - h_old
        if f != f:
            raise NumericsError(f"objective became NaN at iteration {k}")
        if k % config.check_every == 0:
            obj.refresh(x)
            fresh = obj.value(x) + (0.0 if smooth else h.value(x, part))
            if abs(fresh - f) > DRIFT_RTOL * (1.0 + abs(fresh)):
                raise NumericsError(
                    f"incremental objective {f!r} drifted from {fresh!r} at iteration {k}")
            f = fresh
        if window is not None:
            window.append(max(np.max(np.abs(d_i), initial=0.0), np.max(np.abs(d_j), initial=0.0)))
        done = stop.met(f0, f, window)
        if done or k % config.trace_every == 0:
            trace.record(k, time.perf_counter() - t0, f,
                         feasibility_residual(problem.constraints, x), (i, j))
        if done:
            reason, converged = type(stop).__name__, True
            break

    if not trace.k or trace.k[-1] != k:
        trace.record(k, time.perf_counter() - t0, f, feasibility_residual(problem.constraints, x))
    trace.finish(k, f, reason, converged)
    log.debug("sequential run stopped after %d iterations (%s), objective %.12g", k, reason, f)
    return Iterate(x, f, trace.feas_residual[-1]), trace


def _run_box_sweeps(problem, graph, h, config, x, obj, stepper, sampler, trace, f0, t0):
    """Batched variant of the main loop for the SVM dual, same update rule."""
    stop = config.stop_rule
    target = -math.inf
    if isinstance(stop, GapFraction):
        target = f0 - stop.theta * (f0 - stop.f_star)
    indptr, indices, values, y, sqnorm = obj.csr()
    L = np.asarray(obj.block_lipschitz, dtype=np.float64)
    schedule = config.alpha_schedule
    part = problem.partition
    f = f0
    k = 0
    converged = False
    edge = (-1, -1)
    while k < config.max_iters:
        nxt = min(config.max_iters,
                  (k // config.trace_every + 1) * config.trace_every,
                  (k // config.check_every + 1) * config.check_every)
        n = nxt - k
        pairs = graph.edges[sampler.draw(n)]
        if isinstance(schedule, ConstantStep):
            steps = np.full(n, schedule.alpha)
        else:
            steps = np.fromiter((schedule(kk) for kk in range(k, nxt)), float, n)
        done, f = svm_box_sweep(x, obj.w, indptr, indices, values, y, sqnorm, L,
                                stepper.lo, stepper.hi, pairs[:, 0].copy(), pairs[:, 1].copy(),
                                steps, f, target)
        k += done
        edge = tuple(pairs[done - 1].tolist())
        if f != f:
            raise NumericsError(f"objective became NaN by iteration {k}")
        converged = done < n or f < target
        if k % config.check_every == 0 or converged or k == config.max_iters:
            obj.refresh(x)
            fresh = obj.value(x) + h.value(x, part)
            if abs(fresh - f) > DRIFT_RTOL * (1.0 + abs(fresh)):
                raise NumericsError(
                    f"incremental objective {f!r} drifted from {fresh!r} at iteration {k}")
            f = fresh
        if converged or k % config.trace_every == 0:
            trace.record(k, time.perf_counter() - t0, f,
                         feasibility_residual(problem.constraints, x), edge)
        if converged:
            break
    if trace.k[-1] != k:
        trace.record(k, time.perf_counter() - t0, f, feasibility_residual(problem.constraints, x))
    reason = "GapFraction" if converged else "max_iters"
    trace.finish(k, f, reason, converged)
    return Iterate(x, f, trace.feas_residual[-1]), trace
