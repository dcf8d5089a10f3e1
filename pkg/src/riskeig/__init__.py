"""Risk-sensitive ergodic control of countable Markov chains.

Optimal eigenpairs are computed from Dirichlet problems on growing
truncations, with policy iteration, brute-force and Monte Carlo routes for
cross-checking.
"""

from importlib import metadata as _metadata

from .dirichlet import DirichletDomain, EigenPair, dirichlet_eigenpair
from .errors import (DegenerateEigenvector, DimensionMismatch, InvalidParams, InvalidPolicy,
                     LeakyKernel, MalformedModel, NoConvergence, ReferenceUnreachable,
                     RiskEigError, ShiftInsufficient, TooManyPolicies, ZeroMatrix, ZeroPsi)
from .ladder import LadderConfig, SolveReport, solve_ladder, solve_near_monotone
from .model import (ControlledChain, CtModel, DtModel, ExplosionCert, LyapunovCertCt,
                    LyapunovCertDt, Policy, StateSpace, check_lyapunov, check_reachability,
                    load_model, validate_model)
from .montecarlo import SimConfig, SimEstimate, simulate
from .oracle import brute_force_lambda_star
from .pia import PiaConfig, PiaTrace, run_pia, twisted_kernel
from .verify import eigen_residual, verify_optimal_policy

try:
    __version__ = _metadata.version("riskeig")
except _metadata.PackageNotFoundError:
    __version__ = "0.0.0"
