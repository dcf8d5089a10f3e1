"""Residual checks for eigenpairs and the optimality test for stationary policies.

A policy is optimal exactly when it attains the minimum of the eigen-operator
at every state, evaluated at the principal eigenfunction.  When the selector
check fails, the policy's own eigenvalue is computed so the refutation comes
with a positive gap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dirichlet import action_values
from .errors import ZeroPsi


@dataclass
class VerificationResult:
    max_residual: float
    failing_states: list
    optimal: bool | None = None
    gap: float | None = None
    inconclusive: bool = False
    residuals: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self):
        return {
            "max_residual": self.max_residual,
            "failing_states": [int(s) for s in self.failing_states],
            "optimal": self.optimal,
            "gap": self.gap,
            "inconclusive": self.inconclusive,
        }


def interior_states(model, states=None, width=1):
    """Drop the last ``width`` states of the truncation when the kernel leaks past it."""
    states = np.arange(model.size) if states is None else np.asarray(states, dtype=np.intp)
    if not model.leaks():
        return states
    return states[states < model.size - width]


def _unit(psi, reference):
    """Scale of ``psi``: its value at the reference state, else its max."""
    return psi[reference] if psi[reference] > 0 else psi.max()


def _residuals(model, rho, psi, states, vals=None):
    if vals is None:
        vals = action_values(model.block(), psi)[states]
    best = vals.min(axis=1)
    unit = _unit(psi, model.reference_state)
    target = np.exp(rho) * psi[states] if model.kind == "dt" else rho * psi[states]
    scale = np.maximum(unit, np.abs(target))
    return np.abs(best - target) / scale, vals, scale


def eigen_residual(model, pair, eval_states=None, tol=1e-8) -> VerificationResult:
    """Relative residual of the full eigen-equation at ``eval_states``.

    DT: ``|min_a exp(c) P_a psi - exp(rho) psi| / max(u, exp(rho) psi)``;
    CT: ``|min_a (Q_a psi + c psi) - rho psi| / max(u, |rho| psi)``, where
    ``u = psi(i0)`` (so ``u = 1`` for a reference-normalized pair).  The
    measure is invariant under rescaling ``psi``.
    """
    psi = np.asarray(pair.psi, dtype=float)
    if np.any(psi < 0):
        raise ValueError("eigenfunction must be nonnegative")
    states = interior_states(model) if eval_states is None else np.asarray(eval_states, dtype=np.intp)
    res, _, _ = _residuals(model, pair.rho, psi, states)
    failing = states[res > tol].tolist()
    full = np.full(model.size, np.nan)
    full[states] = res
    return VerificationResult(float(res.max()) if res.size else 0.0, failing, residuals=full)


def verify_optimal_policy(model, policy, lambda_star, psi_star, eval_states=None, tol=1e-8,
                          domain=None) -> VerificationResult:
    """Check that ``policy`` attains the eigen-operator minimum at ``psi_star``.

    ``max_residual`` is the largest relative excess of the policy's action
    value over the minimum.  On failure the policy's own eigenvalue gives
    ``gap = rho_v - lambda_star``; a gap within ``tol`` marks the result
    inconclusive (a numerical tie) rather than a refutation.
    """
    from .pia import policy_eigenpair

    psi = np.asarray(psi_star, dtype=float)
    states = interior_states(model) if eval_states is None else np.asarray(eval_states, dtype=np.intp)
    if np.any(psi[states] <= 0):
        raise ZeroPsi("psi_star must be positive on the evaluation states")
    policy.validate(model)
    vals = action_values(model.block(), psi)[states]
    best = vals.min(axis=1)
    chosen = vals[np.arange(len(states)), policy.as_array()[states]]
    unit = _unit(psi, model.reference_state)
    excess = (chosen - best) / np.maximum(unit, np.abs(best))
    failing = states[excess > tol].tolist()
    result = VerificationResult(float(excess.max()) if excess.size else 0.0, failing,
                                optimal=not failing)
    if failing:
        rho_v = policy_eigenpair(model, policy, domain).rho
        result.gap = float(rho_v - lambda_star)
        result.inconclusive = result.gap <= tol
    return result


def supersolution_residual(model, rho, psi, eval_states=None):
    """``max_i [min-operator(psi)(i) - exp(rho) psi(i)]`` (relative); ``<= 0`` for a supersolution."""
    psi = np.asarray(psi, dtype=float)
    states = interior_states(model) if eval_states is None else np.asarray(eval_states, dtype=np.intp)
    vals = action_values(model.block(), psi)[states]
    best = vals.min(axis=1)
    target = np.exp(rho) * psi[states] if model.kind == "dt" else rho * psi[states]
    scale = np.maximum(_unit(psi, model.reference_state), np.abs(target))
    return float(((best - target) / scale).max())
