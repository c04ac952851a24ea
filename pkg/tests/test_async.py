import math
import threading

import numpy as np
import pytest

from lccd.asynchronous import (AsyncConfig, AtomicArray, AtomicCounter, LockMode, SharedIterate,
                               SpinLock, master_slave_update, run_async, theorem3_step_bound)
from lccd.exceptions import ConfigError, EngineError, MaxWallTimeError
from lccd.graph import build_topology
from lccd.model import Problem
from lccd.nonsmooth import L1, SeparableNonsmooth
from lccd.pairsolve import PairStepper
from lccd.problems import (SeparableQuadratic, SvmDataset, projected_optimum, svm_dual_problem,
                           synthetic_quadratic)
from lccd.sequential import ConstantStep, GapFraction, SolverConfig, run_algorithm1


def run_threads(fn, n):
    ts = [threading.Thread(target=fn, args=(w,)) for w in range(n)]
    for t in ts:
        t.start()
    for t in ts:
        t.join(30)
    assert not any(t.is_alive() for t in ts)


# primitives

def test_atomic_array_loses_no_additions():
    arr = AtomicArray(np.zeros(100), stripes=8)

    def work(w):
        for k in range(500):
            a = (7 * k + w) % 90
            arr.add_slice(slice(a, a + 10), 1.0)
            arr.add_at(np.array([0, 50, 99]), 1.0)

    run_threads(work, 6)
    assert arr.data.sum() == 6 * 500 * 13
    assert arr.data[99] >= 6 * 500


def test_atomic_counter_tickets_are_unique():
    c = AtomicCounter()
    got = [[] for _ in range(4)]

    def work(w):
        for _ in range(1000):
            got[w].append(c.fetch_add())

    run_threads(work, 4)
    flat = sorted(sum(got, []))
    assert flat == list(range(4000)) and c.load() == 4000


def test_poisoned_spin_lock_raises():
    lk = SpinLock()
    lk.acquire()
    seen = []

    def waiter(_):
        try:
            lk.acquire()
        except EngineError as exc:
            seen.append(exc)

    t = threading.Thread(target=waiter, args=(0,))
    t.start()
    lk.poison()
    t.join(5)
    lk.release()
    assert len(seen) == 1 and not t.is_alive()


def test_step_bound():
    # tau = 0: 2 / 1 against 0.2 / (sqrt(2) * 2 * 2.4)
    assert theorem3_step_bound(0) == pytest.approx(0.2 / (4.8 * math.sqrt(2)))
    vals = [theorem3_step_bound(t) for t in range(20)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert theorem3_step_bound(8, rho=2.0) < 2.0 / 9
    with pytest.raises(ConfigError):
        theorem3_step_bound(1, rho=1.0)


def test_lock_mode_parsing():
    assert LockMode.parse("DoubleLock") is LockMode.DOUBLE
    assert LockMode.parse("single") is LockMode.SINGLE
    assert LockMode.parse("lock-free") is LockMode.FREE
    with pytest.raises(ConfigError):
        LockMode.parse("optimistic")
    with pytest.raises(ConfigError):
        AsyncConfig(threads=2)
    with pytest.raises(ConfigError):
        AsyncConfig(threads=0, max_updates=10)


# single updates under controlled interleavings

def small_problem(N=8, seed=1):
    problem, _, _ = synthetic_quadratic(N, 3, 2, seed=seed)
    return problem


class GatedObjective(SeparableQuadratic):
    """Blocks every thread's first gradient read at a barrier."""

    def __init__(self, base, parties):
        super().__init__(base.centers, base.partition, base.scale)
        self.barrier = threading.Barrier(parties, timeout=10)
        self.local = threading.local()

    def partial_grad(self, i, x):
        if not getattr(self.local, "passed", False):
            self.local.passed = True
            self.barrier.wait()
        return super().partial_grad(i, x)


def test_lock_free_overlapping_updates_are_all_applied():
    problem = small_problem()
    obj = GatedObjective(problem.objective, 2)
    g = build_topology("clique", 8)
    stepper = PairStepper(problem, g, SeparableNonsmooth.zero(8))
    x0 = np.zeros(problem.partition.n)
    shared = SharedIterate(x0, problem.partition)
    out = [None, None]
    edges = [(0, 1), (0, 2)]

    def work(w):
        out[w] = master_slave_update(edges[w], shared, LockMode.FREE, stepper, obj, 0.1)

    run_threads(work, 2)
    # both masters read block 0 before either wrote: one update is stale by one
    assert sorted(o[2] for o in out) == [0, 1]
    expected = x0.copy()
    sl = shared.slices
    for (i, j), (d_i, d_j, _) in zip(edges, out):
        expected[sl[i]] += d_i
        expected[sl[j]] += d_j
    assert np.allclose(shared.x.data, expected, rtol=0, atol=1e-15)
    # every increment is a feasible pair direction, so Ax = 0 survives the race
    assert np.max(np.abs(problem.constraints.product(shared.x.data))) <= 1e-12


def test_disjoint_edges_commute():
    problem = small_problem()
    obj = problem.objective
    g = build_topology("clique", 8)
    stepper = PairStepper(problem, g, SeparableNonsmooth.zero(8))
    x0 = np.zeros(problem.partition.n)
    seq = SharedIterate(x0, problem.partition)
    for e in [(0, 1), (2, 3)]:
        master_slave_update(e, seq, LockMode.FREE, stepper, obj, 0.1)
    par = SharedIterate(x0, problem.partition)
    gated = GatedObjective(obj, 2)
    run_threads(lambda w: master_slave_update([(0, 1), (2, 3)][w], par, LockMode.FREE,
                                              stepper, gated, 0.1), 2)
    assert np.array_equal(seq.x.data, par.x.data)


def test_zero_gradient_means_no_motion():
    problem = small_problem()
    x_star = projected_optimum(problem.objective, problem.constraints)
    problem.x0 = x_star
    for mode in LockMode:
        it, tr, _ = run_async(problem, build_topology("ring", 8),
                              config=AsyncConfig(threads=3, lock_mode=mode, alpha=0.5,
                                                 max_updates=300))
        assert np.allclose(it.x, x_star, rtol=0, atol=1e-12)
        assert tr.iters == 300


# full runs

@pytest.mark.parametrize("mode", list(LockMode))
def test_single_thread_matches_sequential_engine(mode):
    problem = small_problem()
    g = build_topology("star-ring", 8)
    it, tr, stats = run_async(problem, g, config=AsyncConfig(
        threads=1, lock_mode=mode, alpha=0.7, max_updates=2500, seed=5))
    ref, _ = run_algorithm1(problem, g, config=SolverConfig(
        max_iters=2500, seed=5, alpha_schedule=ConstantStep(0.7)))
    assert np.array_equal(it.x, ref.x)
    assert stats.tau_hat == 0 and stats.count == 2500


@pytest.mark.parametrize("mode", list(LockMode))
def test_multi_thread_run_is_feasible_and_accounted(mode):
    problem = small_problem(N=12)
    it, tr, stats = run_async(problem, build_topology("ring", 12), config=AsyncConfig(
        threads=4, lock_mode=mode, alpha=0.25, max_updates=4000, seed=2, monitor_interval=0.01))
    assert tr.iters == 4000 and stats.count == 4000
    assert np.allclose(tr.ledger, it.x - problem.x0, rtol=0, atol=1e-10)
    assert it.feasibility <= 1e-8 * (1 + np.max(np.abs(it.x)))
    assert it.objective < problem.objective.value(problem.x0)


def test_stop_rule_is_met():
    problem = small_problem(N=12)
    stop = GapFraction(0.9, problem.f_star)
    it, tr, _ = run_async(problem, build_topology("clique", 12), config=AsyncConfig(
        threads=4, lock_mode="free", alpha=0.25, stop=stop, monitor_interval=0.01, max_wall_s=60))
    assert tr.converged
    f0 = tr.objective[0]
    assert f0 - it.objective > 0.9 * (f0 - problem.f_star)


def test_wall_time_budget():
    problem = small_problem()
    with pytest.raises(MaxWallTimeError):
        run_async(problem, build_topology("ring", 8), config=AsyncConfig(
            threads=2, alpha=0.25, stop=GapFraction(0.5, -1e12), monitor_interval=0.02,
            max_wall_s=0.2))


class FailingObjective(SeparableQuadratic):
    def __init__(self, base):
        super().__init__(base.centers, base.partition, base.scale)
        self.calls = AtomicCounter()

    def partial_grad(self, i, x):
        if self.calls.fetch_add() == 200:
            raise RuntimeError("boom")
        return super().partial_grad(i, x)


@pytest.mark.parametrize("mode", list(LockMode))
def test_worker_failure_surfaces(mode):
    problem = small_problem()
    bad = Problem(FailingObjective(problem.objective), problem.constraints)
    with pytest.raises(EngineError) as info:
        run_async(bad, build_topology("ring", 8), config=AsyncConfig(
            threads=4, lock_mode=mode, alpha=0.25, max_updates=10 ** 6, delay=1e-4))
    assert isinstance(info.value.__cause__, RuntimeError)


def test_nonsmooth_terms_rejected():
    problem = small_problem()
    with pytest.raises(ConfigError):
        run_async(problem, build_topology("ring", 8), h=SeparableNonsmooth(L1(1.0), 8),
                  config=AsyncConfig(max_updates=10))
    X = np.array([[1.0, 0.0], [2.0, 1.0], [-1.0, 0.0], [-2.0, -1.0]])
    svm = svm_dual_problem(SvmDataset.from_dense(X, [1.0, 1.0, -1.0, -1.0]), C=10.0)
    with pytest.raises(ConfigError):
        run_async(svm, build_topology("clique", 4), config=AsyncConfig(
            lock_mode="free", max_updates=10))


def test_svm_toy_with_double_lock():
    X = np.array([[1.0, 0.0], [2.0, 1.0], [-1.0, 0.0], [-2.0, -1.0]])
    svm = svm_dual_problem(SvmDataset.from_dense(X, [1.0, 1.0, -1.0, -1.0]), C=10.0)
    it, tr, _ = run_async(svm, build_topology("clique", 4), config=AsyncConfig(
        threads=2, lock_mode="double", alpha=1.0, max_updates=3000))
    assert np.allclose(it.x, [0.5, 0.0, 0.5, 0.0], atol=1e-8)
    assert np.allclose(svm.objective.weights(it.x), [1.0, 0.0], atol=1e-8)
    assert np.all(it.x >= 0) and np.all(it.x <= 10)
    assert it.objective == pytest.approx(-0.5, abs=1e-10)
