"""
Randomized pairwise block coordinate descent for convex problems coupled by
linear equality constraints ``sum_i A_i x_i = 0``.
"""

from .asynchronous import (AsyncConfig, LockMode, SharedIterate, StalenessStats,
                           master_slave_update, run_async, staleness_stats,
                           theorem3_step_bound)
from .exceptions import (ConfigError, DimensionError, EngineError, FeasibilityError,
                         InternalError, LccdError, MaxWallTimeError, NumericsError,
                         ParseError, ReductionError, TopologyError, UnboundedError)
from .graph import (CommGraph, EdgeSampler, KMatrix, build_k_matrix, build_topology,
                    edge_sampler, k_dual_norm, k_norm, r0_proxy)
from .libsvm import parse_libsvm, read_model, write_model
from .model import (BlockPartition, ConstraintKind, Iterate, LinearConstraints, Objective,
                    Problem, QuadraticObjective, block_slice, feasibility_residual,
                    feasible_start)
from .nonsmooth import L1, Box, Custom, SeparableNonsmooth, Zero
from .pairsolve import (GramCache, PairStepper, PairUpdate, box_pair_update, gram_pinv,
                        prox_pair_update, smooth_pair_update)
from .problems import (AverageQuadratic, SeparableQuadratic, SvmDataset, SvmDual, a7a_like,
                       average_quadratic_problem, svm_dual_problem, synthetic_quadratic)
from .reduction import (ReducedProblem, conformal_decompose, reduce_problem,
                        transformed_lipschitz)
from .sequential import (ConstantStep, GapFraction, InverseSqrtStep, MaxIters, ResidualNorm,
                         SolverConfig, Trace, run_algorithm1)
from .stochastic import StochasticConfig, run_algorithm2, theorem4_schedule

__version__ = "0.1.0"
