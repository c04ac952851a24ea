"""
Stochastic pairwise coordinate descent for finite sums ``f = (1/N) sum_l f_l``.

Every iteration samples an edge and one component ``f_l`` and takes the pair
step on that component only. Because single-component steps do not decrease
``f`` monotonically, the engine keeps the best iterate seen at trace cadence.
"""

import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, NumericsError
from .graph import EdgeSampler
from .model import Iterate, feasibility_residual
from .nonsmooth import as_nonsmooth
from .pairsolve import PairStepper
from .sequential import Trace, check_feasible

log = logging.getLogger(__name__)


def theorem4_schedule(delta0, L, M, k, multiplier=1.0):
    """
    ``alpha_k = min(1, multiplier * sqrt(delta0 L) / (M sqrt(k + 1)))``.

    Parameters
    ----------
    delta0 : float
        Estimate of ``f(x0) - f*``.
    L : float
        Uniform block Lipschitz constant.
    M : float
        Bound on component gradient norms.
    k : int
        Iteration index, starting at 0.
    """
    return min(1.0, multiplier * math.sqrt(delta0 * L) / (M * math.sqrt(k + 1.0)))


def null_space_projector(constraints):
    """Return ``xi -> xi - A^T (A A^T)^+ A xi``."""
    A = constraints.dense()
    pinv = np.linalg.pinv(A @ A.T, rcond=1e-12, hermitian=True)

    def project(xi):
        return xi - A.T @ (pinv @ (A @ xi))
    return project


def estimate_grad_bound(problem, samples=1000, seed=0, safety=1.5, scale=None):
    """
    Estimate ``M >= ||grad f_l||`` on feasible points near ``x0``.

    Draws Gaussian perturbations of ``x0`` of size ``scale`` (default
    ``1 + ||x0||_inf``), projects them onto ``ker A`` and returns ``safety``
    times the largest component gradient norm observed.
    """
    obj = problem.objective
    rng = np.random.default_rng(seed)
    project = null_space_projector(problem.constraints)
    x0 = problem.x0
    if scale is None:
        scale = 1.0 + float(np.max(np.abs(x0), initial=0.0))
    best = 0.0
    for _ in range(samples):
        x = x0 + project(scale * rng.standard_normal(x0.size))
        l = int(rng.integers(obj.n_components))
        best = max(best, float(np.linalg.norm(obj.component_gradient(l, x))))
    if best == 0.0:
        raise ConfigError("all sampled component gradients vanish; cannot calibrate M")
    return safety * best


@dataclass
class StochasticConfig:
    """
    Parameters
    ----------
    max_iters : int
    seed : int
        Edge draws use ``seed`` exactly as the sequential engine does; component
        draws use an independent stream spawned from it.
    trace_every : int
        Cadence of full objective evaluations and best-iterate updates.
    multiplier : float
        Constant in front of the default schedule.
    f_star, delta0 : float, optional
        Used to set ``delta0 = f(x0) - f*`` for the schedule.
    grad_bound : float, optional
        ``M``; estimated from samples when neither this nor the objective
        provides it.
    alpha_schedule : callable, optional
        Overrides the default schedule.
    """

    max_iters: int = 100_000
    seed: int = 0
    trace_every: int = 100
    multiplier: float = 1.0
    f_star: float = None
    delta0: float = None
    grad_bound: float = None
    alpha_schedule: object = None


@dataclass
class BestIterate:
    x: np.ndarray
    objective: float
    k: int


def make_schedule(problem, config, f0):
    if config.alpha_schedule is not None:
        return config.alpha_schedule
    obj = problem.objective
    delta0 = config.delta0
    if delta0 is None:
        f_star = config.f_star if config.f_star is not None else problem.f_star
        if f_star is None:
            raise ConfigError("the default schedule needs f_star or delta0")
        delta0 = f0 - f_star
    if not delta0 > 0:
        raise ConfigError(f"delta0 must be positive, got {delta0}")
    M = config.grad_bound or obj.grad_bound
    if M is None:
        M = estimate_grad_bound(problem, seed=config.seed)
        log.info("estimated gradient bound M = %.6g", M)
    L = float(np.max(obj.block_lipschitz))
    mult = config.multiplier

    def schedule(k):
        return theorem4_schedule(delta0, L, M, k, mult)
    return schedule


def run_algorithm2(problem, graph, config=None, x0=None):
    """
    Stochastic pairwise coordinate descent.

    Returns
    -------
    Iterate
        The last iterate.
    BestIterate
        The best iterate among those evaluated at trace cadence.
    Trace
        With a ``best`` column of running best objectives.

    Raises
    ------
    ConfigError
        If the objective has a single component.
    """
    config = config or StochasticConfig()
    obj = problem.objective
    N = obj.n_components
    if N < 2:
        raise ConfigError("stochastic descent needs N >= 2 components; use run_algorithm1")
    part = problem.partition
    h = as_nonsmooth(problem.h, part.b)
    if not h.is_zero:
        raise ConfigError("the stochastic engine handles smooth objectives only")
    x = np.array(problem.x0 if x0 is None else x0, dtype=np.float64)
    check_feasible(problem, x)

    stepper = PairStepper(problem, graph, h)
    L = np.asarray(obj.block_lipschitz, dtype=np.float64)
    slices = [part.slice(i) for i in range(part.b)]
    obj.sync(x)
    f0 = obj.value(x)
    schedule = make_schedule(problem, config, f0)

    edges = EdgeSampler(graph, config.seed)
    comp_rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])
    comps = []
    best = BestIterate(x.copy(), f0, 0)
    trace = Trace()
    t0 = time.perf_counter()
    trace.record(0, 0.0, f0, feasibility_residual(problem.constraints, x), best=f0)

    f = f0
    for k in range(config.max_iters):
        if not comps:
            comps = comp_rng.integers(N, size=4096)[::-1].tolist()
        l = comps.pop()
        i, j = next(edges)
        si, sj = slices[i], slices[j]
        a = schedule(k) / (L[i] + L[j])
        g_i = obj.component_partial_grad(l, i, x)
        g_j = obj.component_partial_grad(l, j, x)
        d_i, d_j = stepper.step(i, j, g_i, g_j, x[si], x[sj], a)
        x[si] += d_i
        x[sj] += d_j
        obj.notify_update(i, d_i)
        obj.notify_update(j, d_j)
        it = k + 1
        if it % config.trace_every == 0 or it == config.max_iters:
            f = obj.value(x)
            if not math.isfinite(f):
                raise NumericsError(f"objective is {f} at iteration {it}")
            if f < best.objective:
                best = BestIterate(x.copy(), f, it)
            trace.record(it, time.perf_counter() - t0, f,
                         feasibility_residual(problem.constraints, x), (i, j), best.objective)

    iters = config.max_iters
    trace.finish(iters, f, "max_iters", True)
    last = Iterate(x, f, trace.feas_residual[-1])
    return last, best, trace
