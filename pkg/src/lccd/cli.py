"""
Command-line experiment harness.

Subcommands ``topology``, ``async``, ``svm`` and ``stochastic`` run the
engines on preset problems and write CSV traces under ``--out``. Settings
come from built-in defaults, then an optional TOML file (top-level keys or a
table named after the subcommand), then command-line flags.

Exit codes: 0 when every run met its stop rule, 1 when some run did not,
2 for configuration or input errors, 3 for numerical or engine failures.
"""

import argparse
import csv
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .asynchronous import AsyncConfig, LockMode, run_async, theorem3_step_bound
from .exceptions import (ConfigError, DimensionError, EngineError, FeasibilityError,
                         MaxWallTimeError, NumericsError, ParseError, ReductionError,
                         TopologyError)
from .graph import TOPOLOGIES, build_topology
from .libsvm import parse_libsvm, write_model
from .problems import (SvmDataset, a7a_like, average_quadratic_problem, svm_dual_problem,
                       synthetic_quadratic)
from .sequential import ConstantStep, GapFraction, MaxIters, SolverConfig, run_algorithm1
from .stochastic import StochasticConfig, run_algorithm2

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

log = logging.getLogger("lccd")

PRESETS = {
    "synth-tiny": dict(kind="synthetic", N=6, dim=2, m=2, target_f0=1000.0),
    "synth-small": dict(kind="synthetic", N=100, dim=10, m=5, target_f0=1000.0),
    "synth-paper": dict(kind="synthetic", N=1000, dim=50, m=10, target_f0=1000.0),
    "async-desk": dict(kind="synthetic", N=100, dim=10, m=5, target_f0=1000.0),
    "async-paper": dict(kind="synthetic", N=10000, dim=100, m=100, target_f0=1000.0),
    "stoch-toy": dict(kind="average", N=4, b=10, dim=2, spread=1.0),
    "svm-toy": dict(kind="svm-toy"),
    "a7a-like": dict(kind="a7a-like", n=2000),
}

DEFAULTS = {
    "topology": dict(preset="synth-small", topologies="ring,clique,star-ring,tree-ring",
                     iters=10000, seeds=1, target=1e-2, alpha=1.0, trace_every=100),
    "async": dict(preset="async-desk", topology="star-ring", threads="1,2,4,8",
                  lock_mode="double,single,free", delay_us=50.0, stop_frac=0.99, alpha=0.25,
                  f_star=None, max_wall_s=600.0, monitor_interval=0.25),
    "svm": dict(preset="svm-toy", data=None, svm_c=1.0, subsample=None, topology="clique",
                threads=1, lock_mode="double", stop_frac=0.9999, f_star=None, iters=None,
                ref_iters=None, trace_every=1000, delay_us=0.0, monitor_interval=0.25,
                max_wall_s=600.0),
    "stochastic": dict(preset="stoch-toy", topology="clique", iters=100000, multiplier=1.0,
                       trace_every=100),
}

FLOAT_FMT = "%.12g"


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT % v
    return str(v)


class Outputs:
    """Tracks files written by one invocation so a failure can remove them."""

    def __init__(self, root):
        self.root = Path(root)
        self.written = []

    def path(self, name):
        self.root.mkdir(parents=True, exist_ok=True)
        p = self.root / name
        self.written.append(p)
        return p

    def write_csv(self, name, header, rows):
        with open(self.path(name), "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])

    def cleanup(self):
        for p in self.written:
            try:
                p.unlink()
            except FileNotFoundError:
                pass


def trace_rows(trace, reproducible, best=False):
    for n, (k, t, f, r) in enumerate(zip(trace.k, trace.wall_s, trace.objective,
                                         trace.feas_residual)):
        row = [k, 0.0 if reproducible else t, f, r]
        if best:
            row.append(trace.best[n])
        yield row


def _int_list(text):
    if isinstance(text, int):
        return list(range(1, text + 1))
    items = [s for s in str(text).split(",") if s.strip()]
    if len(items) == 1 and "," not in str(text):
        return list(range(1, int(items[0]) + 1))
    return [int(s) for s in items]


def _str_list(text):
    if isinstance(text, (list, tuple)):
        return [str(s) for s in text]
    return [s.strip() for s in str(text).split(",") if s.strip()]


def build_preset(name, seed):
    try:
        spec = dict(PRESETS[name])
    except KeyError:
        raise ConfigError(f"unknown preset '{name}'; choose from {sorted(PRESETS)}") from None
    kind = spec.pop("kind")
    if kind == "synthetic":
        problem, _, _ = synthetic_quadratic(seed=seed, **spec)
        return problem
    if kind == "average":
        return average_quadratic_problem(seed=seed, **spec)
    raise ConfigError(f"preset '{name}' is not a quadratic problem")


def toy_svm_dataset():
    """Four separable points whose maximum-margin separator is ``w = (1, 0)``."""
    X = np.array([[1.0, 0.0], [2.0, 1.0], [-1.0, 0.0], [-2.0, -1.0]])
    return SvmDataset.from_dense(X, [1.0, 1.0, -1.0, -1.0])


#%% COMMANDS

def cmd_topology(cfg, out, seed, reproducible):
    problem = build_preset(cfg["preset"], seed)
    f_star = problem.f_star
    summary = []
    all_met = True
    for name in _str_list(cfg["topologies"]):
        graph = build_topology(name, problem.partition.b)
        for s in range(seed, seed + int(cfg["seeds"])):
            config = SolverConfig(max_iters=int(cfg["iters"]), alpha_schedule=ConstantStep(cfg["alpha"]),
                                  seed=s, stop_rule=MaxIters(), trace_every=int(cfg["trace_every"]))
            it, trace = run_algorithm1(problem, graph, config=config)
            f0 = trace.objective[0]
            hit = trace.first_k_below(f_star + cfg["target"] * (f0 - f_star))
            all_met &= hit is not None
            out.write_csv(f"trace_{graph.name}_seed{s}.csv", ["k", "wall_s", "objective", "feas_residual"],
                          trace_rows(trace, reproducible))
            summary.append([graph.name, s, hit, it.objective])
            log.info("%s seed %d: iters_to_target=%s final=%.10g", graph.name, s, hit, it.objective)
    out.write_csv("summary.csv", ["topology", "seed", "iters_to_target", "final_obj"], summary)
    return 0 if all_met else 1


def cmd_async(cfg, out, seed, reproducible):
    problem = build_preset(cfg["preset"], seed)
    f_star = cfg["f_star"] if cfg["f_star"] is not None else problem.f_star
    if f_star is None:
        raise ConfigError("the async command needs --f-star for this preset")
    graph = build_topology(cfg["topology"], problem.partition.b)
    threads = _int_list(cfg["threads"])
    modes = [LockMode.parse(m) for m in _str_list(cfg["lock_mode"])]
    stop = GapFraction(cfg["stop_frac"], f_star)
    rows = []
    all_met = True
    for mode in modes:
        base = None
        for t in threads:
            alpha = cfg["alpha"]
            if alpha is not None and alpha > theorem3_step_bound(t):
                log.warning("alpha = %g exceeds the conservative staleness bound %.3g for "
                            "%d threads; running anyway", alpha, theorem3_step_bound(t), t)
            config = AsyncConfig(threads=t, lock_mode=mode, delay=cfg["delay_us"] * 1e-6,
                                 alpha=alpha, stop=stop, seed=seed,
                                 monitor_interval=cfg["monitor_interval"],
                                 max_wall_s=cfg["max_wall_s"])
            try:
                it, trace, stats = run_async(problem, graph, config=config)
                wall, final, tau, met = trace.wall_s_total, it.objective, stats.tau_hat, trace.converged
            except MaxWallTimeError as exc:
                log.warning("%s", exc)
                wall, final, tau, met = float("nan"), float("nan"), None, False
            all_met &= met
            if t == threads[0]:
                base = wall
            speedup = base / wall if threads[0] == 1 else None
            rows.append([t, mode.value, wall, final, tau, speedup])
            log.info("%s threads=%d wall=%.3fs final=%.10g tau_hat=%s", mode.value, t, wall, final, tau)
    out.write_csv("async.csv", ["threads", "lock_mode", "wall_s", "final_obj", "tau_hat", "speedup"], rows)
    return 0 if all_met else 1


def _svm_dataset(cfg, seed):
    if cfg["data"]:
        data = parse_libsvm(cfg["data"])
    elif cfg["preset"] == "svm-toy":
        data = toy_svm_dataset()
    elif cfg["preset"] == "a7a-like":
        data = a7a_like(PRESETS["a7a-like"]["n"], seed=seed)
    else:
        raise ConfigError(f"unknown svm preset '{cfg['preset']}'")
    if cfg["subsample"]:
        data = data.subsample(int(cfg["subsample"]), seed=seed)
    log.info("dataset: %d examples, %d features, %.2f nonzeros per example",
             data.n_examples, data.feature_dim, data.avg_nnz())
    return data


def reference_optimum(problem, graph, iters, seed):
    """Reference ``f*`` from a long sequential run."""
    config = SolverConfig(max_iters=iters, seed=seed + 1, trace_every=max(iters // 100, 1))
    it, trace = run_algorithm1(problem, graph, config=config)
    return min(min(trace.objective), it.objective)


def cmd_svm(cfg, out, seed, reproducible):
    data = _svm_dataset(cfg, seed)
    problem = svm_dual_problem(data, cfg["svm_c"])
    n = data.n_examples
    graph = build_topology(cfg["topology"], n) if n >= 3 else None
    if graph is None:
        from .graph import CommGraph
        graph = CommGraph(n, [(0, 1)], name="edge")
    f_star = cfg["f_star"]
    if f_star is None:
        ref_iters = int(cfg["ref_iters"] or 400 * n)
        f_star = reference_optimum(problem, graph, ref_iters, seed)
        log.info("reference f* = %.12g from %d sequential iterations", f_star, ref_iters)
    stop = GapFraction(cfg["stop_frac"], f_star)
    iters = int(cfg["iters"] or 1000 * n)
    threads = int(cfg["threads"])
    if threads == 1:
        config = SolverConfig(max_iters=iters, seed=seed, stop_rule=stop,
                              trace_every=int(cfg["trace_every"]))
        it, trace = run_algorithm1(problem, graph, config=config)
        w = problem.objective.w
    else:
        config = AsyncConfig(threads=threads, lock_mode=cfg["lock_mode"], alpha=1.0, stop=stop,
                             seed=seed, delay=cfg["delay_us"] * 1e-6,
                             monitor_interval=cfg["monitor_interval"], max_wall_s=cfg["max_wall_s"])
        it, trace, _ = run_async(problem, graph, config=config)
        w = problem.objective.weights(it.x)
    out.write_csv("svm_trace.csv", ["k", "wall_s", "objective", "feas_residual"],
                  trace_rows(trace, reproducible))
    write_model(out.path("model.txt"), w)
    log.info("svm: %d updates, final objective %.12g (f* = %.12g)", trace.iters, it.objective, f_star)
    return 0 if trace.converged else 1


def cmd_stochastic(cfg, out, seed, reproducible):
    problem = build_preset(cfg["preset"], seed)
    graph = build_topology(cfg["topology"], problem.partition.b)
    config = StochasticConfig(max_iters=int(cfg["iters"]), seed=seed,
                              trace_every=int(cfg["trace_every"]), multiplier=cfg["multiplier"])
    _, best, trace = run_algorithm2(problem, graph, config=config)
    out.write_csv("stochastic.csv", ["k", "wall_s", "objective", "feas_residual", "best_objective"],
                  trace_rows(trace, reproducible, best=True))
    log.info("stochastic: best objective %.12g at k=%d (f* = %.12g)", best.objective, best.k,
             problem.f_star)
    return 0


COMMANDS = {"topology": cmd_topology, "async": cmd_async, "svm": cmd_svm,
            "stochastic": cmd_stochastic}


#%% ARGUMENTS

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML file with default settings")
    common.add_argument("--out", type=Path, help="output directory (default: ./lccd-out)")
    common.add_argument("--seed", type=int, help="base seed (default: $LCCD_SEED or 0)")
    common.add_argument("--reproducible", action="store_true", default=None,
                        help="write wall_s as 0 so repeated runs give identical files")
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("--preset", help=f"problem preset, one of {', '.join(PRESETS)}")

    parser = argparse.ArgumentParser(prog="lccd", description=__doc__.split("\n\n")[0].strip())
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("topology", parents=[common], help="compare communication graphs")
    p.add_argument("--topologies", help=f"comma list from {', '.join(TOPOLOGIES)}")
    p.add_argument("--iters", type=int)
    p.add_argument("--seeds", type=int, help="number of seeds per topology")
    p.add_argument("--target", type=float, help="relative gap defining iters_to_target")
    p.add_argument("--alpha", type=float)
    p.add_argument("--trace-every", type=int)

    p = sub.add_parser("async", parents=[common], help="threads and locking levels")
    p.add_argument("--topology")
    p.add_argument("--threads", help="max thread count, or a comma list")
    p.add_argument("--lock-mode", help="double, single, free, or a comma list")
    p.add_argument("--delay-us", type=float)
    p.add_argument("--stop-frac", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--f-star", type=float)
    p.add_argument("--max-wall-s", type=float)
    p.add_argument("--monitor-interval", type=float)

    p = sub.add_parser("svm", parents=[common], help="train a linear SVM through its dual")
    p.add_argument("--data", help="LIBSVM file, optionally gzipped")
    p.add_argument("--svm-c", type=float)
    p.add_argument("--subsample", type=int)
    p.add_argument("--topology")
    p.add_argument("--threads", type=int)
    p.add_argument("--lock-mode")
    p.add_argument("--stop-frac", type=float)
    p.add_argument("--f-star", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--ref-iters", type=int)
    p.add_argument("--trace-every", type=int)
    p.add_argument("--delay-us", type=float)
    p.add_argument("--monitor-interval", type=float)
    p.add_argument("--max-wall-s", type=float)

    p = sub.add_parser("stochastic", parents=[common], help="stochastic finite-sum descent")
    p.add_argument("--topology")
    p.add_argument("--iters", type=int)
    p.add_argument("--multiplier", type=float)
    p.add_argument("--trace-every", type=int)
    return parser


GLOBAL_KEYS = ("config", "out", "seed", "reproducible", "verbose", "command")


def resolve(args):
    """Merge defaults, the TOML file and flags into one settings dict."""
    cfg = dict(DEFAULTS[args.command])
    glob = dict(out="lccd-out", seed=None, reproducible=False)
    if args.config is not None:
        try:
            with open(args.config, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {args.config}: {exc}") from None
        section = data.get(args.command, {})
        top = {k: v for k, v in data.items() if not isinstance(v, dict)}
        for source in (top, section):
            for key, value in source.items():
                key = key.replace("-", "_")
                if key in glob:
                    glob[key] = value
                elif key in cfg:
                    cfg[key] = value
                else:
                    raise ConfigError(f"unknown setting '{key}' in {args.config}")
    for key, value in vars(args).items():
        if value is None or key in ("config", "verbose", "command"):
            continue
        if key in glob:
            glob[key] = value
        else:
            cfg[key] = value
    if glob["seed"] is None:
        env = os.environ.get("LCCD_SEED")
        try:
            glob["seed"] = int(env) if env else 0
        except ValueError:
            raise ConfigError(f"LCCD_SEED must be an integer, got {env!r}") from None
    return cfg, glob


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    out = None
    try:
        cfg, glob = resolve(args)
        out = Outputs(glob["out"])
        t0 = time.perf_counter()
        code = COMMANDS[args.command](cfg, out, int(glob["seed"]), bool(glob["reproducible"]))
        log.info("%s finished in %.2f s with exit code %d", args.command, time.perf_counter() - t0, code)
        return code
    except (ConfigError, ParseError, TopologyError, DimensionError, FeasibilityError,
            ReductionError) as exc:
        print(f"lccd: error: {exc}", file=sys.stderr)
        code = 2
    except (NumericsError, EngineError) as exc:
        print(f"lccd: numerical failure: {exc}", file=sys.stderr)
        code = 3
    except OSError as exc:
        print(f"lccd: error: {exc}", file=sys.stderr)
        code = 2
    if out is not None:
        out.cleanup()
    return code


if __name__ == "__main__":
    sys.exit(main())
