"""Policy iteration for the risk-sensitive ergodic problem.

Each round evaluates the current stationary policy by its principal
eigenpair on a fixed domain, then improves greedily against that
eigenfunction.  The error term ``theta`` measures how far the new policy's
one-step operator falls below the old eigen-relation; it lies in ``[0, 1]``
(discrete time) or ``[0, lambda_0 + q(i)]`` (continuous time) and vanishes
at convergence.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .dirichlet import (SUPPORT_EPS, DirichletDomain, EigenPair, _finish, _initial,
                        _power_iterate, action_values, argmin_actions, ct_shift)
from .errors import ZeroPsi
from .model import CtModel, DtModel, Policy, StateSpace, check_reachability

log = logging.getLogger(__name__)

THETA_SLACK = 1e-10


@dataclass
class PiaConfig:
    init_policy: Policy | None = None
    truncation: int | DirichletDomain | None = None
    tol_lambda: float = 1e-10
    tol_theta: float = 1e-8
    max_iters: int = 200
    tol_eigen: float = 1e-13
    watch_set: list | None = None
    small_set_state: int | None = None

    def __post_init__(self):
        if not (self.tol_lambda > 0 and self.tol_theta > 0 and self.tol_eigen > 0):
            raise ValueError("PIA tolerances must be positive")


@dataclass
class PiaIterate:
    k: int
    lambda_k: float
    policy: Policy
    max_theta: float | None
    policy_changes: int

    def to_dict(self):
        return {"k": self.k, "lambda": self.lambda_k, "policy": list(self.policy.action_index),
                "max_theta": self.max_theta, "policy_changes": self.policy_changes}


@dataclass
class PiaTrace:
    iterates: list
    final_pair: EigenPair
    converged_by: str
    watch_set: list
    theta_range: tuple = (math.nan, math.nan)
    notes: list = field(default_factory=list)

    @property
    def final_lambda(self):
        return self.iterates[-1].lambda_k

    @property
    def final_policy(self):
        return self.iterates[-1].policy

    def to_dict(self):
        return {
            "lambda": self.final_lambda,
            "policy": list(self.final_policy.action_index),
            "converged_by": self.converged_by,
            "iterates": [it.to_dict() for it in self.iterates],
            "final_pair": self.final_pair.to_dict(),
            "theta_range": list(self.theta_range),
            "watch_set": list(self.watch_set),
            "notes": list(self.notes),
        }

    def csv_rows(self):
        return [(it.k, it.lambda_k, it.max_theta, it.policy_changes) for it in self.iterates]


def _domain(model, domain):
    if domain is None:
        return DirichletDomain.full(model)
    if isinstance(domain, DirichletDomain):
        return domain
    return DirichletDomain.first(model, domain)


def policy_eigenpair(model, policy, domain=None, tol=1e-13, max_iter=10**6, psi0=None):
    """Principal eigenpair of a single stationary policy on ``domain``.

    DT: log Perron root of ``exp(c_v) P_v``; CT: dominant eigenvalue of
    ``Q_v + diag(c_v)`` through the shifted matrix ``I + h (Q_v + diag(c_v))``.
    A policy whose support never reaches the reference state yields a
    max-norm normalized vector and a note, not an error.
    """
    policy.validate(model)
    domain = _domain(model, domain)
    block = model.block(domain.as_array()).select(policy.as_array()[domain.as_array()])
    h = ct_shift(block) if model.kind == "ct" else None
    psi, bracket, its, _ = _power_iterate(block, _initial(model, domain, psi0), tol, max_iter, h)
    return _finish(model, domain, block, psi, bracket, its, model.kind, h)


def _eval_states(pair, states):
    if states is None:
        states = pair.domain.as_array()
    states = np.asarray(states, dtype=np.intp)
    if np.any(pair.psi[states] <= 0):
        bad = states[pair.psi[states] <= 0]
        raise ZeroPsi(f"eigenfunction vanishes at states {bad[:10].tolist()}")
    return states


def improve_policy(model, pair, incumbent=None, states=None):
    """Greedy selector against ``pair.psi``.

    The incumbent action is kept wherever it attains the minimum within
    ``1e-14`` (relative); elsewhere the lowest-index minimizer wins.  States
    outside ``states`` keep the incumbent (action 0 without one).
    """
    states = _eval_states(pair, states)
    vals = _values_on(model, pair, states)
    current = np.zeros(model.size, dtype=np.intp) if incumbent is None else incumbent.as_array()
    chosen = argmin_actions(vals, None if incumbent is None else current[states])
    out = current.copy()
    out[states] = chosen
    return Policy(out)


def _values_on(model, pair, states):
    """Per-action operator values at ``states``, with sums running over the pair's domain."""
    dom = pair.domain.as_array()
    block = model.block(dom)
    local = pair.psi[dom]
    vals = action_values(block, local)
    pos = np.searchsorted(dom, states)
    return vals[pos]


def compute_theta(model, pair, new_policy, states=None):
    """Error term of the improvement step at ``states`` (default: the pair's domain).

    DT: ``1 - exp(c(i,v'(i)) - lambda) sum_j V(j) P(j|i,v'(i)) / V(i)``;
    CT: ``lambda - c(i,v'(i)) - sum_j V(j) q(j|i,v'(i)) / V(i)``.
    Returns a full-length array, ``nan`` off the evaluated states.
    """
    states = _eval_states(pair, states)
    vals = _values_on(model, pair, states)
    picked = vals[np.arange(len(states)), new_policy.as_array()[states]]
    psi = pair.psi[states]
    theta = np.full(model.size, np.nan)
    if model.kind == "dt":
        theta[states] = 1.0 - np.exp(-pair.rho) * picked / psi
    else:
        # vals already include c(i,a) psi(i)
        theta[states] = pair.rho - picked / psi
    return theta


def run_pia(model, config: PiaConfig | None = None) -> PiaTrace:
    """Alternate value determination, improvement and the theta certificate."""
    config = config or PiaConfig()
    domain = _domain(model, config.truncation)
    dom = domain.as_array()
    watch = (list(config.watch_set) if config.watch_set is not None
             else [int(s) for s in dom[:min(32, len(dom))]])
    notes = []
    z = model.reference_state if config.small_set_state is None else config.small_set_state
    if model.kind == "dt" and not check_reachability(model, "pia_small_set", z=z).passed:
        notes.append(f"small-set condition fails at state {z}; convergence is not guaranteed")
    if model.leaks(dom):
        notes.append("value determination kills mass leaving the domain "
                     f"of {len(dom)} states")

    policy = config.init_policy or Policy.constant(model.size)
    policy.validate(model)
    pair = policy_eigenpair(model, policy, domain, tol=config.tol_eigen)
    iterates = [PiaIterate(0, pair.rho, policy, None, 0)]
    theta_lo, theta_hi = math.inf, -math.inf
    converged_by = "max_iters"
    for k in range(1, config.max_iters + 1):
        support = dom[pair.psi[dom] > SUPPORT_EPS * pair.psi.max()]
        new = improve_policy(model, pair, incumbent=policy, states=support)
        theta = compute_theta(model, pair, new, states=support)
        finite = theta[np.isfinite(theta)]
        theta_lo = min(theta_lo, float(finite.min()))
        theta_hi = max(theta_hi, float(finite.max()))
        max_theta = float(np.nanmax(theta[watch]))
        changes = int(np.sum(new.as_array() != policy.as_array()))
        if changes:
            pair = policy_eigenpair(model, new, domain, tol=config.tol_eigen, psi0=pair.psi)
        prev_lambda = iterates[-1].lambda_k
        iterates.append(PiaIterate(k, pair.rho, new, max_theta, changes))
        policy = new
        if prev_lambda - pair.rho < config.tol_lambda and max_theta < config.tol_theta:
            converged_by = "theta_small" if changes else "lambda_stall"
            break
    if model.kind == "dt" and (theta_lo < -THETA_SLACK or theta_hi > 1 + THETA_SLACK):
        notes.append(f"theta left [0, 1]: observed [{theta_lo:.3g}, {theta_hi:.3g}]")
        log.warning("theta outside [0, 1]: [%g, %g]", theta_lo, theta_hi)
    return PiaTrace(iterates, pair, converged_by, watch, (theta_lo, theta_hi), notes)


def twisted_kernel(model, pair, policy):
    """Doob transform of the policy kernel by the eigenfunction, on the pair's domain.

    DT: ``P'(j|i) = V(j) P(j|i,v(i)) / sum_k V(k) P(k|i,v(i))``.
    CT: ``q'(j|i) = V(j)/V(i) q(j|i,v(i))`` off the diagonal, with the
    diagonal set to minus the off-diagonal row sum.  The result is an
    uncontrolled closed model on the domain's states, re-indexed
    ``0..|D|-1``, with zero cost.
    """
    dom = pair.domain.as_array()
    V = pair.psi[dom]
    if np.any(V <= 0):
        raise ZeroPsi("twisted kernel needs a strictly positive eigenfunction on the domain")
    mat = model.policy_matrix(policy, dom)
    n = len(dom)
    ratio = V[None, :] / V[:, None]
    # rows on which the twist is the identity are copied verbatim
    flat = np.all((ratio == 1.0) | (mat == 0.0), axis=1)
    if model.kind == "dt":
        weighted = mat * V[None, :]
        rows = weighted.sum(axis=1)
        if np.any(rows <= 0):
            raise ZeroPsi("a row of the policy kernel carries no mass inside the domain")
        twisted = weighted / rows[:, None]
        keep = flat & (np.abs(mat.sum(axis=1) - 1.0) <= 1e-12)
        cls = DtModel
    else:
        twisted = mat * ratio
        np.fill_diagonal(twisted, 0.0)
        np.fill_diagonal(twisted, -twisted.sum(axis=1))
        keep = flat & (np.abs(mat.sum(axis=1)) <= 1e-12)
        cls = CtModel
    twisted[keep] = mat[keep]
    ref = int(np.searchsorted(dom, model.reference_state)) if pair.domain.contains_reference else 0
    ii, jj = np.nonzero(twisted)
    kernel = np.column_stack([ii, np.zeros_like(ii), jj, twisted[ii, jj]])
    cost = np.column_stack([np.arange(n), np.zeros(n), np.zeros(n)])
    return cls(StateSpace(n, ref), [[0]] * n, kernel, cost, closed=True)


def stationary_distribution(model):
    """Stationary law of an uncontrolled closed model (first action slot)."""
    n = model.size
    mat = model.matrix(0).toarray()
    gen = mat - np.eye(n) if model.kind == "dt" else mat
    lhs = np.vstack([gen.T, np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    return pi
