"""Truncation ladder for the global eigenpair.

Dirichlet eigenpairs are solved on an increasing sequence of leading
domains ``{0..n-1}``.  The rung eigenvalues increase towards the optimal
value, and the ladder stops being refined once both the eigenvalue and the
eigenfunction on a watch set have settled.  The stopping rule is a
heuristic: no a-posteriori bound on the truncation error is available.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .dirichlet import (DEFAULT_MAX_ITER, SUPPORT_EPS, DirichletDomain, EigenPair,
                        action_values, argmin_actions, dirichlet_eigenpair)
from .errors import NoConvergence, ReferenceUnreachable, ZeroPsi
from .model import Policy
from .verify import eigen_residual, supersolution_residual

log = logging.getLogger(__name__)

WARM_FLOOR = 1e-8
NEAR_MONOTONE_SAMPLES = 64


def default_rungs(size):
    """``16, 32, 64, ...`` below ``size``, then ``size`` itself."""
    rungs = []
    n = 16
    while n < size:
        rungs.append(n)
        n *= 2
    rungs.append(size)
    return rungs


@dataclass
class LadderConfig:
    rung_sizes: list | None = None
    tol_rho: float = 1e-6
    watch_set: list | None = None
    mode: str = "stable"
    tol: float = 1e-10
    max_iter: int = DEFAULT_MAX_ITER
    psi0: np.ndarray | None = None
    cert: object | None = None
    lambda_m: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("stable", "near_monotone"):
            raise ValueError(f"unknown ladder mode {self.mode!r}")
        if self.rung_sizes is not None:
            sizes = [int(n) for n in self.rung_sizes]
            if not sizes or sizes[0] < 1 or any(b <= a for a, b in zip(sizes, sizes[1:])):
                raise ValueError("rung sizes must be positive and strictly increasing")
            self.rung_sizes = sizes
        if not (self.tol_rho > 0 and self.tol > 0):
            raise ValueError("tolerances must be positive")

    def resolve(self, model):
        sizes = self.rung_sizes or default_rungs(model.size)
        if sizes[-1] > model.size:
            raise ValueError(f"last rung {sizes[-1]} exceeds the truncation {model.size}")
        watch = (list(self.watch_set) if self.watch_set is not None
                 else list(range(min(32, model.size))))
        return sizes, watch


@dataclass
class Rung:
    n: int
    rho: float
    iterations: int
    cw_gap: float
    normalization: str

    def to_dict(self):
        return {"n": self.n, "rho_n": self.rho, "iterations": self.iterations,
                "cw_gap": self.cw_gap, "normalization": self.normalization}


@dataclass
class SolveReport:
    rungs: list
    final: EigenPair
    converged: bool
    policy: Policy | None
    residual: float
    mode: str = "stable"
    watch_set: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def lambda_star(self):
        return self.final.rho

    @property
    def psi_star(self):
        return self.final.psi

    def to_dict(self):
        return {
            "mode": self.mode,
            "lambda_star": self.final.rho,
            "converged": self.converged,
            "residual": self.residual,
            "policy": None if self.policy is None else list(self.policy.action_index),
            "rungs": [r.to_dict() for r in self.rungs],
            "final": self.final.to_dict(),
            "watch_set": list(self.watch_set),
            "warnings": list(self.warnings),
            "diagnostics": dict(self.diagnostics),
        }

    def csv_rows(self):
        return [(r.n, r.rho, r.iterations, r.cw_gap) for r in self.rungs]

    def rungs_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["n", "rho_n", "iterations", "cw_gap"])
        for row in self.csv_rows():
            writer.writerow([row[0], repr(row[1]), row[2], repr(row[3])])
        return buf.getvalue()


def extract_policy(model, pair, states=None, incumbent=None) -> Policy:
    """Minimizing selector of the eigen-operator at ``pair.psi``.

    Selections are made on ``states`` (default: the pair's domain) with
    lowest-index tie-breaking; other states get action 0 (or the incumbent).
    """
    states = pair.domain.as_array() if states is None else np.asarray(states, dtype=np.intp)
    psi = np.asarray(pair.psi, dtype=float)
    if np.any(psi[states] <= 0):
        bad = states[psi[states] <= 0]
        raise ZeroPsi(f"eigenfunction vanishes at states {bad[:10].tolist()}")
    vals = action_values(model.block(), psi)[states]
    out = np.zeros(model.size, dtype=np.intp) if incumbent is None else incumbent.as_array()
    out[states] = argmin_actions(vals, None if incumbent is None else out[states])
    return Policy(out)


def _warm_start(prev, dom):
    """Previous eigenfunction padded with zeros, lifted by a small floor to stay positive."""
    local = prev[dom].copy()
    local += WARM_FLOOR * local.max()
    return local


def _eval_states(model, dom, watch):
    """Watch-set states away from the truncation boundary of the final rung."""
    states = np.intersect1d(np.asarray(watch, dtype=np.intp), dom)
    if len(dom) < model.size or model.leaks():
        states = states[states < dom[-1]]
    return states


def _run(model, config, mode):
    sizes, watch = config.resolve(model)
    watch_arr = np.asarray(watch, dtype=np.intp)
    rungs, warnings = [], []
    pair = prev = None
    reached_reference = False
    rho_change = psi_change = math.inf
    for k, n in enumerate(sizes):
        domain = DirichletDomain.first(model, n)
        dom = domain.as_array()
        if prev is not None:
            psi0 = _warm_start(prev.psi, dom)
        elif config.psi0 is not None:
            psi0 = np.asarray(config.psi0, dtype=float)
            psi0 = psi0[dom] if psi0.shape == (model.size,) else psi0
        else:
            psi0 = None
        pair = dirichlet_eigenpair(model, domain, config.tol, config.max_iter, psi0)
        rungs.append(Rung(n, pair.rho, pair.iterations, pair.cw_gap, pair.normalization))
        reached_reference |= pair.normalization == "reference_one"
        if prev is not None:
            rho_change = abs(pair.rho - prev.rho)
            common = watch_arr[watch_arr < sizes[k - 1]]
            psi_change = float(np.max(np.abs(pair.psi[common] - prev.psi[common]))) if common.size else 0.0
        prev = pair

    if not reached_reference:
        raise ReferenceUnreachable(
            f"eigenfunction vanishes at the reference state {model.reference_state} on every rung")
    if pair.normalization != "reference_one":
        warnings.append("final eigenfunction normalized by max-norm: the reference state "
                        "looks unreachable from the domain")

    exact = sizes[-1] == model.size and not model.leaks()
    stable = rho_change < config.tol_rho and psi_change < config.tol_rho
    converged = exact or stable

    dom = pair.domain.as_array()
    support = dom[pair.psi[dom] > SUPPORT_EPS * pair.psi.max()]
    if support.size < dom.size:
        warnings.append(f"eigenfunction vanishes on {dom.size - support.size} domain states; "
                        "policy selected on the support only")
    policy = extract_policy(model, pair, support)
    eval_states = _eval_states(model, dom, watch)
    eval_states = eval_states[pair.psi[eval_states] > 0]
    residual = eigen_residual(model, pair, eval_states).max_residual if eval_states.size else 0.0

    diagnostics = {
        "rho_change": None if math.isinf(rho_change) else rho_change,
        "psi_change": None if math.isinf(psi_change) else psi_change,
        "exact_truncation": exact,
        "stopping_rule": "full closed model" if exact else "heuristic rung stability",
        "eval_states": eval_states.tolist(),
    }
    if config.cert is not None:
        V = np.asarray(config.cert.V, dtype=float)
        diagnostics["max_psi_over_V"] = float(np.max(pair.psi / V))
    elif mode == "stable":
        warnings.append("no Lyapunov certificate supplied; stability was not checked")
    for note in pair.notes:
        if note not in warnings:
            warnings.append(note)
    report = SolveReport(rungs, pair, converged, policy, residual, mode, watch, warnings,
                         diagnostics)
    if not converged:
        raise NoConvergence(f"ladder exhausted: last rho change {rho_change:.3g}, "
                            f"psi change {psi_change:.3g} (tol_rho {config.tol_rho:g})", report)
    return report


def solve_ladder(model, config: LadderConfig | None = None) -> SolveReport:
    """Global eigenpair candidate from the Dirichlet ladder.

    On a closed model whose last rung is the whole state space the final
    Dirichlet problem is the full one, and the report is marked converged
    regardless of rung-to-rung changes.  Otherwise convergence requires the
    last two rungs to agree within ``tol_rho`` in ``rho`` and on the watch set.
    """
    config = config or LadderConfig()
    if config.mode == "near_monotone":
        return solve_near_monotone(model, config)
    return _run(model, config, "stable")


def _greedy_constant(model):
    """Greedy selector against ``psi = 1``."""
    vals = action_values(model.block(), np.ones(model.size))
    return Policy(argmin_actions(vals))


def lambda_m_proxy(model, domain, samples=NEAR_MONOTONE_SAMPLES, seed=0, tol=1e-6,
                   max_iter=5000):
    """Upper estimate of the best policy eigenvalue from a sampled policy set.

    Policies whose eigenvalue does not settle within ``max_iter`` steps are
    skipped; the estimate is a diagnostic, not a bound used by the solver.
    """
    from .pia import policy_eigenpair

    rng = np.random.default_rng(seed)
    policies = [_greedy_constant(model)]
    for _ in range(samples):
        policies.append(Policy(rng.integers(0, model.n_actions)))
    best = math.inf
    for policy in policies:
        try:
            best = min(best, policy_eigenpair(model, policy, domain, tol=tol, max_iter=max_iter).rho)
        except NoConvergence:
            continue
    return best


def tail_cost(model, fraction=0.125):
    """``min_a c(i,a)`` over the outermost states, a proxy for the liminf at infinity."""
    width = max(1, int(model.size * fraction))
    return float(np.min(model.cost[-width:]))


def solve_near_monotone(model, config: LadderConfig | None = None) -> SolveReport:
    """Ladder run for near-monotone costs.

    The result is only guaranteed to be a supersolution, so the report
    records ``max_i [min-operator(psi)(i) - exp(lambda) psi(i)]`` (rate form
    in continuous time) relative to ``psi``, which should be at most ``tol``.
    """
    config = config or LadderConfig(mode="near_monotone")
    report = _run(model, config, "near_monotone")
    domain = report.final.domain
    lam_m = config.lambda_m
    source = "user"
    if lam_m is None:
        lam_m = lambda_m_proxy(model, domain, seed=config.seed)
        source = "sampled policies"
    liminf = tail_cost(model)
    report.diagnostics.update({"lambda_m": lam_m, "lambda_m_source": source,
                               "tail_cost": liminf})
    if not liminf > lam_m + 1e-8:
        msg = (f"near-monotone condition fails: tail cost {liminf:.6g} "
               f"does not exceed lambda_m {lam_m:.6g}")
        report.warnings.append(msg)
        log.warning(msg)
    eval_states = np.asarray(report.diagnostics["eval_states"], dtype=np.intp)
    sup = supersolution_residual(model, report.final.rho, report.final.psi, eval_states) \
        if eval_states.size else 0.0
    report.diagnostics["supersolution_residual"] = sup
    report.diagnostics["supersolution_ok"] = sup <= config.tol
    return report
