import numpy as np
import pytest

from lccd.exceptions import ConfigError, FeasibilityError, NumericsError
from lccd.graph import CommGraph, build_topology
from lccd.model import BlockPartition, LinearConstraints, Problem, QuadraticObjective
from lccd.problems import SeparableQuadratic, SvmDataset, a7a_like, svm_dual_problem, synthetic_quadratic
from lccd.sequential import (ConstantStep, GapFraction, InverseSqrtStep, MaxIters, ResidualNorm,
                             SolverConfig, run_algorithm1)

from helpers import dense_kkt


def two_block_toy():
    cons = LinearConstraints.single_row([1.0, 1.0])
    obj = QuadraticObjective(2.0 * np.eye(2), np.zeros(2), cons.partition)
    return Problem(obj, cons, x0=np.array([1.0, -1.0]), f_star=0.0), CommGraph(2, [(0, 1)])


def test_toy_halves_every_step():
    problem, g = two_block_toy()
    for k in (1, 2, 5):
        it, _ = run_algorithm1(problem, g, config=SolverConfig(max_iters=k))
        assert np.allclose(it.x, [2.0 ** -k, -(2.0 ** -k)], rtol=0, atol=1e-15)


def test_toy_residual_stop():
    problem, g = two_block_toy()
    it, tr = run_algorithm1(problem, g, config=SolverConfig(
        max_iters=10_000, stop_rule=ResidualNorm(1e-12, window=5)))
    assert tr.converged and tr.stop_reason == "ResidualNorm"
    assert tr.iters < 100
    assert np.max(np.abs(it.x)) < 1e-11


def small_synthetic():
    problem, cons, _ = synthetic_quadratic(6, 3, 2, seed=3)
    Q, q, _ = problem.objective.quadratic_form()
    x_star = dense_kkt(Q, q, cons.dense())
    return problem, x_star


@pytest.mark.parametrize("kind", ["ring", "clique", "star-ring", "tree-ring"])
def test_converges_to_kkt_solution(kind):
    problem, x_star = small_synthetic()
    it, tr = run_algorithm1(problem, build_topology(kind, 6),
                            config=SolverConfig(max_iters=200_000, trace_every=1000,
                                                stop_rule=ResidualNorm(1e-12, window=50)))
    assert np.linalg.norm(it.x - x_star) <= 1e-6 * max(1.0, np.linalg.norm(x_star))
    assert it.objective - problem.f_star <= 1e-8 * abs(problem.f_star)
    assert max(tr.feas_residual) <= 1e-10


def test_objective_is_monotone():
    problem, _ = small_synthetic()
    _, tr = run_algorithm1(problem, build_topology("ring", 6),
                           config=SolverConfig(max_iters=3000, trace_every=1))
    f = np.array(tr.objective)
    assert np.all(np.diff(f) <= 1e-9 * (1 + np.abs(f[1:])))


def test_iterates_stay_feasible():
    problem, _ = small_synthetic()
    _, tr = run_algorithm1(problem, build_topology("star-ring", 6),
                           config=SolverConfig(max_iters=5000, trace_every=10))
    # roundoff accumulates over the run
    assert max(tr.feas_residual) <= 1e-10


def test_same_seed_same_trajectory():
    problem, _ = small_synthetic()
    g = build_topology("tree-ring", 6)
    cfg = dict(max_iters=2000, trace_every=50)
    a = run_algorithm1(problem, g, config=SolverConfig(seed=11, **cfg))
    b = run_algorithm1(problem, g, config=SolverConfig(seed=11, **cfg))
    c = run_algorithm1(problem, g, config=SolverConfig(seed=12, **cfg))
    assert np.array_equal(a[0].x, b[0].x)
    assert a[1].objective == b[1].objective and a[1].edges == b[1].edges
    assert not np.array_equal(a[0].x, c[0].x)


def test_gap_fraction_stop():
    problem, _ = small_synthetic()
    stop = GapFraction(0.99, problem.f_star)
    _, tr = run_algorithm1(problem, build_topology("clique", 6),
                           config=SolverConfig(max_iters=100_000, stop_rule=stop))
    assert tr.converged and tr.stop_reason == "GapFraction"
    f0 = tr.objective[0]
    assert f0 - tr.final_objective > 0.99 * (f0 - problem.f_star)
    assert tr.k[-1] == tr.iters


def test_desk_scale_reaches_small_gap():
    problem, _, _ = synthetic_quadratic(100, 10, 5, seed=0)
    stop = GapFraction(1 - 1e-4, problem.f_star)
    _, tr = run_algorithm1(problem, build_topology("clique", 100),
                           config=SolverConfig(max_iters=200_000, stop_rule=stop, trace_every=1000))
    assert tr.converged


def test_infeasible_start_rejected():
    problem, _ = small_synthetic()
    x0 = np.zeros(problem.partition.n)
    x0[0] = 1.0
    with pytest.raises(FeasibilityError):
        run_algorithm1(problem, build_topology("ring", 6), x0=x0)


def test_nan_objective_raises():
    problem, _ = small_synthetic()
    obj = problem.objective
    bad = SeparableQuadratic(np.where(np.arange(obj.partition.n) == 0, np.nan, obj.centers),
                             obj.partition, obj.scale)
    with pytest.raises(NumericsError):
        run_algorithm1(Problem(bad, problem.constraints), build_topology("ring", 6),
                       config=SolverConfig(max_iters=100))


class BiasedDelta(SeparableQuadratic):
    def delta_value(self, x, i, d_i, j, d_j):
        return super().delta_value(x, i, d_i, j, d_j) + 1e-3


def test_incremental_drift_detected():
    problem, _ = small_synthetic()
    obj = problem.objective
    bad = BiasedDelta(obj.centers, obj.partition, obj.scale)
    with pytest.raises(NumericsError):
        run_algorithm1(Problem(bad, problem.constraints), build_topology("ring", 6),
                       config=SolverConfig(max_iters=5000, check_every=1000))


def test_schedules_and_config_validation():
    s = InverseSqrtStep(2.0)
    assert s(0) == 1.0 and s(3) == 1.0 and s(15) == pytest.approx(0.5)
    assert ConstantStep(0.3)(10 ** 6) == 0.3
    assert not MaxIters().met(1.0, -1e9)
    with pytest.raises(ConfigError):
        ConstantStep(0.0)
    with pytest.raises(ConfigError):
        GapFraction(1.0, 0.0)
    with pytest.raises(ConfigError):
        SolverConfig(trace_every=0)


# SVM dual: generic loop and compiled sweep

def toy_svm():
    X = np.array([[1.0, 0.0], [2.0, 1.0], [-1.0, 0.0], [-2.0, -1.0]])
    return svm_dual_problem(SvmDataset.from_dense(X, [1.0, 1.0, -1.0, -1.0]), C=10.0)


@pytest.mark.parametrize("compiled", [True, False])
def test_toy_svm_solution(compiled):
    problem = toy_svm()
    it, tr = run_algorithm1(problem, build_topology("clique", 4),
                            config=SolverConfig(max_iters=20_000, compiled=compiled))
    assert np.allclose(it.x, [0.5, 0.0, 0.5, 0.0], atol=1e-8)
    assert it.objective == pytest.approx(-0.5, abs=1e-10)
    assert np.allclose(problem.objective.weights(it.x), [1.0, 0.0], atol=1e-8)
    assert np.all(it.x >= 0) and np.all(it.x <= 10.0)
    assert abs(it.x @ problem.constraints.coefficients) <= 1e-12


def test_compiled_and_generic_svm_agree():
    data = a7a_like(n=120, seed=5)
    g = build_topology("clique", 120)
    runs = []
    for compiled in (True, False):
        problem = svm_dual_problem(data, C=1.0, overlap_pairs=50)
        runs.append(run_algorithm1(problem, g, config=SolverConfig(
            max_iters=6000, seed=2, trace_every=500, compiled=compiled)))
    (xa, ta), (xb, tb) = runs
    assert np.allclose(xa.x, xb.x, atol=1e-9)
    assert ta.k == tb.k
    assert np.allclose(ta.objective, tb.objective, rtol=1e-9, atol=1e-9)
    assert ta.edges == tb.edges


def test_svm_trace_is_monotone_and_feasible():
    problem = svm_dual_problem(a7a_like(n=150, seed=1), C=1.0, overlap_pairs=50)
    _, tr = run_algorithm1(problem, build_topology("clique", 150),
                           config=SolverConfig(max_iters=20_000, trace_every=100))
    assert np.all(np.diff(tr.objective) <= 1e-9)
    assert max(tr.feas_residual) <= 1e-12
