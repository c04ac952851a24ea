"""
Asynchronous shared-memory pairwise coordinate descent.

Worker threads repeatedly draw an edge ``(i, j)`` and run a master/slave
update: the master reads its block and gradient (step 1), the slave reads its
own, solves the pair subproblem and applies its increment (step 2), and the
master applies the increment computed for it (step 3) without re-reading its
state. Three locking levels are available:

* ``DOUBLE``: both block locks are held for the whole update;
* ``SINGLE``: the master lock covers steps 1 and 3, the slave lock step 2;
* ``FREE``: no locks, only atomic coordinate additions.

CPython has no user-level compare-and-swap on floats, so :class:`AtomicArray`
emulates atomic read-modify-write additions with short striped locks that
are held only for the addition itself.
"""

import enum
import logging
import math
import threading
import time
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, EngineError, MaxWallTimeError
from .graph import EdgeSampler
from .model import ConstraintKind, Iterate, feasibility_residual
from .nonsmooth import as_nonsmooth
from .pairsolve import PairStepper
from .sequential import GapFraction, Trace, check_feasible

log = logging.getLogger(__name__)


#%% PRIMITIVES

class SpinLock:
    """
    Non-blocking lock polled with bounded backoff.

    A lock is poisoned when its holder dies; every later acquire then raises
    :class:`EngineError` instead of spinning forever.
    """

    __slots__ = ("_lock", "poisoned")

    def __init__(self):
        self._lock = threading.Lock()
        self.poisoned = False

    def acquire(self):
        lock = self._lock
        spins = 0
        while not lock.acquire(False):
            if self.poisoned:
                raise EngineError("lock poisoned by a failed worker")
            spins += 1
            # yield first, then sleep up to 100 us
            time.sleep(0 if spins < 8 else min(1e-6 * (1 << min(spins - 8, 7)), 1e-4))
        if self.poisoned:
            lock.release()
            raise EngineError("lock poisoned by a failed worker")

    def release(self):
        self._lock.release()

    def locked(self):
        return self._lock.locked()

    def poison(self):
        self.poisoned = True

    def __enter__(self):
        self.acquire()
        return self

    def __exit__(self, *exc):
        self.release()


class AtomicArray:
    """
    Float array whose additions are atomic per coordinate.

    Coordinates are grouped into contiguous stripes with one mutex each; an
    addition takes the locks of the stripes it touches in increasing order.
    Plain reads of ``data`` are lock-free and may observe a mix of old and
    new values across coordinates.
    """

    def __init__(self, values, stripes=64):
        self.data = np.array(values, dtype=np.float64)
        n = max(self.data.size, 1)
        self.width = -(-n // min(stripes, n))
        self._locks = [threading.Lock() for _ in range(-(-n // self.width))]

    def add_slice(self, sl, values):
        first = sl.start // self.width
        last = (sl.stop - 1) // self.width
        if first == last:
            with self._locks[first]:
                self.data[sl] += values
            return
        locks = self._locks[first:last + 1]
        for lk in locks:
            lk.acquire()
        try:
            self.data[sl] += values
        finally:
            for lk in reversed(locks):
                lk.release()

    def add_at(self, idx, values):
        """``data[idx] += values`` for unique sorted ``idx``."""
        if len(idx) == 0:
            return
        stripes = np.unique(np.asarray(idx) // self.width).tolist()
        locks = [self._locks[s] for s in stripes]
        for lk in locks:
            lk.acquire()
        try:
            self.data[idx] += values
        finally:
            for lk in reversed(locks):
                lk.release()

    def snapshot(self):
        return self.data.copy()


class AtomicCounter:
    __slots__ = ("_value", "_lock")

    def __init__(self, value=0):
        self._value = value
        self._lock = threading.Lock()

    def load(self):
        return self._value

    def fetch_add(self, inc=1):
        with self._lock:
            old = self._value
            self._value = old + inc
        return old


class SharedIterate:
    """
    Shared ``x`` with atomic additions, one spin lock per block, a global
    update counter and an optional auxiliary atomic vector.
    """

    def __init__(self, x0, partition, aux=None):
        self.x = AtomicArray(x0)
        self.partition = partition
        self.slices = [partition.slice(i) for i in range(partition.b)]
        self.locks = [SpinLock() for _ in range(partition.b)]
        self.counter = AtomicCounter()
        self.aux = None if aux is None else AtomicArray(aux)

    def poison_all(self):
        for lk in self.locks:
            lk.poison()


class LockMode(enum.Enum):
    DOUBLE = "double"
    SINGLE = "single"
    FREE = "free"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"doublelock": "double", "singlelock": "single", "lockfree": "free",
                   "lock-free": "free"}
        key = str(value).lower().replace("_", "")
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ConfigError(f"unknown lock mode {value!r}; use double, single or free") from None


def theorem3_step_bound(tau, rho=1.2):
    """
    Largest admissible constant step for staleness ``tau`` and ratio ``rho > 1``:
    the minimum of ``2 / (1 + tau + tau rho^tau)`` and
    ``(rho - 1) / (sqrt(2) (tau + 2) (rho^(tau + 1) + rho))``.
    """
    if rho <= 1:
        raise ConfigError("rho must exceed 1")
    if tau < 0:
        raise ConfigError("tau must be nonnegative")
    first = 2.0 / (1.0 + tau + tau * rho ** tau)
    second = (rho - 1.0) / (math.sqrt(2.0) * (tau + 2.0) * (rho ** (tau + 1) + rho))
    return min(first, second)


@dataclass
class AsyncConfig:
    """
    Parameters
    ----------
    threads : int
        Number of workers.
    lock_mode : LockMode or str
    delay : float
        Artificial latency in seconds added to steps 1 and 2.
    alpha : float, optional
        Constant step; defaults to ``min(1, theorem3_step_bound(threads, 1.2))``.
    staleness_cap : int, optional
        Advisory ``tau``; a warning is logged if ``alpha`` exceeds its bound.
    stop : GapFraction, optional
        Checked by the monitor on consistent snapshots.
    max_updates : int, optional
        Exact budget of pair updates across all workers.
    seed : int
    monitor_interval : float
        Seconds between monitor snapshots.
    max_wall_s : float
        Budget after which an unmet stop rule raises :class:`MaxWallTimeError`.
    """

    threads: int = 1
    lock_mode: object = LockMode.FREE
    delay: float = 0.0
    alpha: float = None
    staleness_cap: int = None
    stop: GapFraction = None
    max_updates: int = None
    seed: int = 0
    monitor_interval: float = 0.25
    max_wall_s: float = 600.0
    check_every: int = 10_000

    def __post_init__(self):
        self.lock_mode = LockMode.parse(self.lock_mode)
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        if self.delay < 0:
            raise ConfigError("delay must be nonnegative")
        if self.alpha is not None and not self.alpha > 0:
            raise ConfigError("alpha must be positive")
        if self.stop is None and self.max_updates is None:
            raise ConfigError("give a stop rule or max_updates")
        if self.monitor_interval <= 0:
            raise ConfigError("monitor_interval must be positive")


def resolve_alpha(config):
    if config.alpha is None:
        alpha = min(1.0, theorem3_step_bound(config.threads, 1.2))
        log.info("no step given; using alpha = %.4g from the staleness bound with tau = %d",
                 alpha, config.threads)
        return alpha
    if config.staleness_cap is not None:
        bound = theorem3_step_bound(config.staleness_cap, 1.2)
        if config.alpha > bound:
            log.warning("alpha = %.4g exceeds the admissible %.4g for tau = %d",
                        config.alpha, bound, config.staleness_cap)
    return float(config.alpha)


#%% MASTER / SLAVE UPDATE

def _sleep(delay):
    if delay > 0:
        time.sleep(delay)


def master_slave_update(edge, shared, lock_mode, stepper, objective, alpha, delay=0.0):
    """
    One master/slave pair update on the shared iterate.

    Parameters
    ----------
    edge : (int, int)
        Master ``i`` and slave ``j``.
    shared : SharedIterate
    lock_mode : LockMode
    stepper : PairStepper
    objective : Objective
        Gradients are read from ``shared.x.data`` without locking beyond
        what ``lock_mode`` prescribes.
    alpha : float
        Scaled step ``alpha / (L_i + L_j)``.
    delay : float
        Artificial latency in steps 1 and 2.

    Returns
    -------
    d_i, d_j : ndarray
        The applied increments.
    staleness : int
        Updates applied by others between the master's read and its write.
    """
    i, j = edge
    x = shared.x
    data = x.data
    si, sj = shared.slices[i], shared.slices[j]
    lock_i, lock_j = shared.locks[i], shared.locks[j]
    counter = shared.counter

    if lock_mode is LockMode.DOUBLE:
        first, second = (lock_i, lock_j) if i < j else (lock_j, lock_i)
        first.acquire()
        try:
            second.acquire()
        except BaseException:
            first.release()
            raise
        try:
            read = counter.load()
            x_i = data[si].copy()
            g_i = objective.partial_grad(i, data)
            _sleep(delay)
            x_j = data[sj].copy()
            g_j = objective.partial_grad(j, data)
            d_i, d_j = stepper.step(i, j, g_i, g_j, x_i, x_j, alpha)
            _sleep(delay)
            x.add_slice(sj, d_j)
            objective.notify_update(j, d_j)
            x.add_slice(si, d_i)
            objective.notify_update(i, d_i)
            stale = counter.fetch_add() - read
        finally:
            second.release()
            first.release()
        return d_i, d_j, stale

    locking = lock_mode is LockMode.SINGLE
    # step 1: master side
    if locking:
        lock_i.acquire()
    try:
        read = counter.load()
        x_i = data[si].copy()
        g_i = objective.partial_grad(i, data)
        _sleep(delay)
    finally:
        if locking:
            lock_i.release()
    # step 2: slave side
    if locking:
        lock_j.acquire()
    try:
        x_j = data[sj].copy()
        g_j = objective.partial_grad(j, data)
        d_i, d_j = stepper.step(i, j, g_i, g_j, x_i, x_j, alpha)
        _sleep(delay)
        x.add_slice(sj, d_j)
        objective.notify_update(j, d_j)
    finally:
        if locking:
            lock_j.release()
    # step 3: master applies its increment without re-reading
    if locking:
        lock_i.acquire()
    try:
        x.add_slice(si, d_i)
        objective.notify_update(i, d_i)
        stale = counter.fetch_add() - read
    finally:
        if locking:
            lock_i.release()
    return d_i, d_j, stale


#%% ENGINE

@dataclass
class StalenessStats:
    count: int
    tau_hat: int
    mean: float
    histogram: np.ndarray


def staleness_stats(trace):
    """Distribution of ``apply_counter - read_counter`` recorded in ``trace``."""
    s = np.asarray(trace.staleness if trace.staleness is not None else [], dtype=np.int64)
    if s.size == 0:
        return StalenessStats(0, 0, 0.0, np.zeros(1, dtype=np.int64))
    return StalenessStats(int(s.size), int(s.max()), float(s.mean()), np.bincount(s))


class _Pause:
    """Barrier letting the monitor stop all workers between updates."""

    def __init__(self, workers, finished):
        self.finished = finished
        self.cond = threading.Condition()
        self.requested = False
        self.parked = 0
        self.running = workers

    def checkpoint(self):
        if not self.requested:
            return
        with self.cond:
            if not self.requested:
                return
            self.parked += 1
            self.cond.notify_all()
            while self.requested:
                self.cond.wait()
            self.parked -= 1

    def leave(self):
        with self.cond:
            self.running -= 1
            if self.running == 0:
                # wake the monitor as soon as the last worker is done
                self.finished.set()
            self.cond.notify_all()

    def hold(self, stop_event):
        with self.cond:
            self.requested = True
            while self.parked < self.running and not stop_event.is_set():
                self.cond.wait(0.01)

    def release(self):
        with self.cond:
            self.requested = False
            self.cond.notify_all()


def _check_supported(problem, h, mode):
    if h.is_zero:
        return
    cons = problem.constraints
    svm_like = (cons.kind is ConstraintKind.SINGLE_ROW and cons.coefficients is not None
                and h.all_box())
    if not svm_like:
        raise ConfigError("the asynchronous engine handles smooth objectives only "
                          "(box-constrained scalar single-row problems excepted)")
    if mode is not LockMode.DOUBLE:
        raise ConfigError("box constraints need lock_mode=double so that clipping "
                          "sees the current block values")


def run_async(problem, graph, h=None, config=None):
    """
    Asynchronous pairwise coordinate descent with worker threads.

    Parameters
    ----------
    problem : Problem
    graph : CommGraph
    h : optional
        Must be zero, except for box terms on scalar single-row problems
        (the SVM dual) under ``lock_mode=double``.
    config : AsyncConfig

    Returns
    -------
    Iterate
    Trace
        Monitor snapshots; ``trace.staleness`` holds every update's staleness
        and ``trace.ledger`` the sum of all applied increments.
    StalenessStats

    Raises
    ------
    EngineError
        When a worker raises; the original exception is chained.
    MaxWallTimeError
        When the stop rule is not met within ``max_wall_s``.
    """
    if config is None:
        raise ConfigError("run_async needs an AsyncConfig")
    part = problem.partition
    h = as_nonsmooth(problem.h if h is None else h, part.b)
    mode = config.lock_mode
    _check_supported(problem, h, mode)
    x0 = np.array(problem.x0, dtype=np.float64)
    check_feasible(problem, x0, h)
    alpha = resolve_alpha(config)

    obj = problem.objective
    obj.sync(x0)
    stepper = PairStepper(problem, graph, h)
    shared = SharedIterate(x0, part)
    if hasattr(obj, "attach"):
        shared.aux = AtomicArray(obj.w)
        obj.attach(shared.aux.data, shared.aux.add_at)
    L = np.asarray(obj.block_lipschitz, dtype=np.float64)
    n_threads = config.threads
    if n_threads == 1:
        seeds = [config.seed]
    else:
        seeds = np.random.SeedSequence(config.seed).spawn(n_threads)

    stop_event = threading.Event()
    pause = _Pause(n_threads, stop_event)
    tickets = AtomicCounter()
    budget = config.max_updates
    errors = []
    ledgers = [np.zeros(part.n) for _ in range(n_threads)]
    stale_logs = [[] for _ in range(n_threads)]
    delay = config.delay

    def worker(w):
        sampler = EdgeSampler(graph, seeds[w])
        ledger = ledgers[w]
        stale_log = stale_logs[w]
        slices = shared.slices
        try:
            while not stop_event.is_set():
                pause.checkpoint()
                if stop_event.is_set():
                    break
                if budget is not None and tickets.fetch_add() >= budget:
                    break
                i, j = next(sampler)
                d_i, d_j, stale = master_slave_update(
                    (i, j), shared, mode, stepper, obj, alpha / (L[i] + L[j]), delay)
                ledger[slices[i]] += d_i
                ledger[slices[j]] += d_j
                stale_log.append(stale)
        except BaseException as exc:
            errors.append(exc)
            shared.poison_all()
            stop_event.set()
        finally:
            pause.leave()

    def snapshot():
        x = shared.x.data
        return obj.current_value(x), feasibility_residual(problem.constraints, x)

    trace = Trace()
    f0, r0 = snapshot()
    trace.record(0, 0.0, f0, r0)
    threads = [threading.Thread(target=worker, args=(w,), name=f"lccd-worker-{w}", daemon=True)
               for w in range(n_threads)]
    t0 = time.perf_counter()
    for t in threads:
        t.start()

    converged = False
    timed_out = False
    next_check = config.check_every
    try:
        while True:
            alive = any(t.is_alive() for t in threads)
            if not alive or stop_event.wait(config.monitor_interval):
                break
            pause.hold(stop_event)
            try:
                if stop_event.is_set():
                    break
                done = shared.counter.load()
                if done >= next_check:
                    obj.refresh(shared.x.data)
                    next_check = done + config.check_every
                f, res = snapshot()
                elapsed = time.perf_counter() - t0
                trace.record(done, elapsed, f, res)
                if not math.isfinite(f):
                    errors.append(EngineError(f"objective became {f}"))
                    stop_event.set()
                elif config.stop is not None and config.stop.met(f0, f):
                    converged = True
                    stop_event.set()
                elif elapsed > config.max_wall_s:
                    timed_out = True
                    stop_event.set()
            finally:
                pause.release()
    finally:
        stop_event.set()
        pause.release()
        for t in threads:
            t.join()
    elapsed = time.perf_counter() - t0
    if hasattr(obj, "detach"):
        obj.detach()

    if errors:
        err = errors[0]
        if isinstance(err, EngineError):
            raise err
        raise EngineError(f"worker failed: {err!r}") from err

    x = shared.x.data.copy()
    f, res = obj.current_value(x), feasibility_residual(problem.constraints, x)
    if config.stop is not None and not converged and config.stop.met(f0, f):
        converged = True
    done = shared.counter.load()
    trace.record(done, elapsed, f, res)
    trace.staleness = np.concatenate([np.asarray(s, dtype=np.int64) for s in stale_logs])
    trace.ledger = np.sum(ledgers, axis=0)
    trace.wall_s_total = elapsed
    if timed_out:
        raise MaxWallTimeError(f"stop rule not met after {elapsed:.1f} s ({done} updates)")
    reason = "gap_fraction" if converged else "max_updates"
    trace.finish(done, f, reason, converged or config.stop is None)
    return Iterate(x, f, res), trace, staleness_stats(trace)
