import numpy as np
import pytest

from lccd.exceptions import ConfigError
from lccd.graph import build_topology
from lccd.model import BlockPartition, LinearConstraints, Problem
from lccd.nonsmooth import L1, SeparableNonsmooth
from lccd.problems import AverageQuadratic, average_quadratic_problem, zero_sum_optimum
from lccd.sequential import ConstantStep, SolverConfig, run_algorithm1
from lccd.stochastic import (StochasticConfig, estimate_grad_bound, run_algorithm2,
                             theorem4_schedule)

from helpers import dense_kkt


def test_schedule_values():
    assert theorem4_schedule(4.0, 1.0, 2.0, 0) == 1.0
    assert theorem4_schedule(4.0, 1.0, 2.0, 3) == pytest.approx(0.5)
    assert theorem4_schedule(4.0, 1.0, 2.0, 3, multiplier=0.5) == pytest.approx(0.25)
    vals = [theorem4_schedule(1.0, 2.0, 5.0, k) for k in range(100)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_single_component_rejected():
    part = BlockPartition.uniform(3, 2)
    problem = Problem(AverageQuadratic(np.ones((1, 6)), part), LinearConstraints.sum_constraint(part))
    with pytest.raises(ConfigError):
        run_algorithm2(problem, build_topology("ring", 3), StochasticConfig(max_iters=10))


def test_nonsmooth_term_rejected():
    problem = average_quadratic_problem(N=3, b=4, dim=1)
    problem.h = SeparableNonsmooth(L1(1.0), 4)
    with pytest.raises(ConfigError):
        run_algorithm2(problem, build_topology("ring", 4), StochasticConfig(max_iters=10))


def test_identical_components_match_deterministic_engine():
    part = BlockPartition.uniform(5, 2)
    rng = np.random.default_rng(0)
    c = rng.standard_normal(part.n)
    obj = AverageQuadratic(np.tile(c, (3, 1)), part)
    problem = Problem(obj, LinearConstraints.sum_constraint(part))
    g = build_topology("star-ring", 5)
    last, _, _ = run_algorithm2(problem, g, StochasticConfig(
        max_iters=700, seed=4, alpha_schedule=ConstantStep(0.8)))
    ref, _ = run_algorithm1(problem, g, config=SolverConfig(
        max_iters=700, seed=4, alpha_schedule=ConstantStep(0.8)))
    assert np.allclose(last.x, ref.x, rtol=0, atol=1e-14)


def test_best_objective_is_running_minimum():
    problem = average_quadratic_problem(N=4, b=10, dim=2, seed=2)
    last, best, tr = run_algorithm2(problem, build_topology("ring", 10),
                                    StochasticConfig(max_iters=3000, seed=1, trace_every=50))
    b = np.array(tr.best)
    assert np.all(np.diff(b) <= 0)
    assert np.allclose(b, np.minimum.accumulate(tr.objective))
    assert best.objective == b[-1] == min(tr.objective)
    assert problem.objective.value(best.x) == pytest.approx(best.objective)
    assert max(tr.feas_residual) <= 1e-10


def test_toy_reaches_small_gap():
    problem = average_quadratic_problem(N=4, b=10, dim=2, seed=0)
    f0 = problem.objective.value(problem.x0)
    _, best, _ = run_algorithm2(problem, build_topology("clique", 10),
                                StochasticConfig(max_iters=100_000, seed=0, trace_every=500))
    assert (best.objective - problem.f_star) / (f0 - problem.f_star) <= 1e-2


def test_toy_f_star_matches_kkt():
    problem = average_quadratic_problem(N=5, b=6, dim=2, seed=3)
    obj = problem.objective
    n = obj.partition.n
    x = dense_kkt(2.0 * np.eye(n), -2.0 * obj.mean, problem.constraints.dense())
    assert np.allclose(x, zero_sum_optimum(obj.mean, obj.partition))
    assert obj.value(x) == pytest.approx(problem.f_star)


def test_grad_bound_estimate_dominates_start_gradients():
    problem = average_quadratic_problem(N=4, b=5, dim=2, seed=1)
    M = estimate_grad_bound(problem, samples=200, seed=0)
    obj = problem.objective
    norms = [np.linalg.norm(obj.component_gradient(l, problem.x0)) for l in range(4)]
    assert M >= max(norms)


def test_seeds_are_reproducible():
    problem = average_quadratic_problem(N=4, b=6, dim=2, seed=0)
    g = build_topology("tree-ring", 6)
    a = run_algorithm2(problem, g, StochasticConfig(max_iters=500, seed=9))[0].x
    b = run_algorithm2(problem, g, StochasticConfig(max_iters=500, seed=9))[0].x
    assert np.array_equal(a, b)
