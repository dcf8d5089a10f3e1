"""Dirichlet (killed-process) eigenpairs and the multiplicative Poisson problem.

For a finite domain ``D`` the solvers work on the kernel block restricted to
``D``: mass leaving ``D`` is dropped, which is the same as setting the
eigenfunction to zero outside ``D``.

Discrete time solves

    exp(rho) psi(i) = min_a exp(c(i,a)) sum_{j in D} psi(j) P(j|i,a),   i in D,

continuous time solves

    rho psi(i) = min_a [ sum_{j in D} psi(j) q(j|i,a) + c(i,a) psi(i) ],   i in D.

Both operators are monotone and positively 1-homogeneous, so a nonlinear
power iteration converges to the principal pair; the Collatz-Wielandt
ratios ``Op(psi)(i) / psi(i)`` bracket the eigenvalue at every step and
their spread is the stopping criterion.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateEigenvector, NoConvergence, ShiftInsufficient
from .model import KernelBlock

log = logging.getLogger(__name__)

SUPPORT_EPS = 1e-14
DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10**6
STALL_WINDOW = 1000
STALL_IMPROVEMENT = 1e-3
RETAIN_TOL = 1e-14


@dataclass(frozen=True)
class DirichletDomain:
    states: tuple
    contains_reference: bool

    @classmethod
    def of(cls, model, states):
        states = tuple(sorted(set(int(s) for s in states)))
        if not states:
            raise ValueError("Dirichlet domain must be nonempty")
        if states[0] < 0 or states[-1] >= model.size:
            raise ValueError(f"domain states outside the truncation [0, {model.size})")
        return cls(states, model.reference_state in states)

    @classmethod
    def first(cls, model, n):
        """The initial segment ``{0, ..., n-1}`` of the state enumeration."""
        return cls.of(model, range(min(int(n), model.size)))

    @classmethod
    def full(cls, model):
        return cls.of(model, range(model.size))

    def as_array(self):
        return np.asarray(self.states, dtype=np.intp)

    def __len__(self):
        return len(self.states)


@dataclass
class EigenPair:
    """Principal eigenpair on a domain; ``psi`` has full truncation length."""

    rho: float
    psi: np.ndarray
    normalization: str
    iterations: int
    cw_gap: float
    kind: str
    domain: DirichletDomain
    notes: list = field(default_factory=list)

    @property
    def support(self):
        return np.nonzero(self.psi > SUPPORT_EPS * np.max(self.psi))[0]

    def to_dict(self):
        return {
            "rho": self.rho,
            "psi": self.psi.tolist(),
            "normalization": self.normalization,
            "iterations": self.iterations,
            "cw_gap": self.cw_gap,
            "kind": self.kind,
            "domain_size": len(self.domain),
            "notes": list(self.notes),
        }


# --- the eigen-operators ------------------------------------------------------

def action_values(block: KernelBlock, psi):
    """``(n, A)`` table of the per-action operator values at ``psi``.

    DT: ``exp(c(i,a)) * sum_j psi(j) P(j|i,a)``; CT:
    ``sum_j psi(j) q(j|i,a) + c(i,a) psi(i)``.  Unused action slots hold
    ``+inf`` so they never win a minimum.
    """
    prods = block.products(psi)
    cost = np.where(block.feasible, block.cost, 0.0)
    if block.kind == "dt":
        vals = np.exp(cost) * prods
    else:
        vals = prods + cost * psi[:, None]
    vals[~block.feasible] = np.inf
    return vals


def min_operator(block, psi):
    vals = action_values(block, psi)
    return vals.min(axis=1)


def argmin_actions(vals, incumbent=None, retain_tol=RETAIN_TOL):
    """Lowest-index argmin per row; ``incumbent`` is kept when it ties within tolerance."""
    best = np.argmin(vals, axis=1)
    if incumbent is None:
        return best
    rows = np.arange(vals.shape[0])
    vmin = vals[rows, best]
    vinc = vals[rows, incumbent]
    keep = vinc <= vmin + retain_tol * np.maximum(1.0, np.abs(vmin))
    return np.where(keep, incumbent, best)


def _cw_bracket(kind, op, psi):
    """Collatz-Wielandt bracket ``(lo, hi)`` in eigenvalue units (log-scale for DT)."""
    top = psi.max()
    supp = (psi > SUPPORT_EPS * top) | (op > SUPPORT_EPS * top)
    if np.any(psi[supp] <= 0):
        # the support is still growing
        return -math.inf, math.inf
    ratios = op[supp] / psi[supp]
    lo, hi = ratios.min(), ratios.max()
    if kind == "dt":
        if hi <= 0:
            raise DegenerateEigenvector("operator annihilates the iterate on the whole domain")
        return (math.log(lo) if lo > 0 else -math.inf), math.log(hi)
    return float(lo), float(hi)


def ct_shift(block):
    """Default step ``h`` keeping ``psi + h * Op(psi)`` order-preserving."""
    qi = block.exit_rates()
    cmax = np.where(block.feasible, block.cost, -np.inf).max(axis=1)
    return 0.95 / (1.0 + float(np.max(qi + cmax)))


def _step(kind, psi, op, hi, damped, h):
    if kind == "ct":
        return psi + h * op
    if damped:
        # averaging with the identity kills period-2 oscillation
        return psi + op / math.exp(hi)
    return op


def _power_iterate(block, psi, tol, max_iter, h=None):
    """Nonlinear power iteration; returns ``(psi, (lo, hi), iterations)``."""
    kind = block.kind
    psi = psi / psi.max()
    damped = False
    gaps = []
    for it in range(1, max_iter + 1):
        op = min_operator(block, psi)
        lo, hi = _cw_bracket(kind, op, psi)
        gap = hi - lo
        if gap < tol:
            return psi, (lo, hi), it, "power"
        gaps.append(gap)
        if kind == "dt" and not damped and it > 8 and math.isfinite(gap) \
                and gap >= 0.99 * gaps[-3]:
            damped = True
        if it % STALL_WINDOW == 0 and math.isfinite(gap):
            old = gaps[-STALL_WINDOW]
            if math.isfinite(old) and gap > (1 - STALL_IMPROVEMENT) * old:
                log.info("Collatz-Wielandt gap stalled at %.3g after %d iterations; "
                         "switching to policy iteration", gap, it)
                psi, it_pi = _policy_iteration(block, psi, tol, max_iter - it, h)
                op = min_operator(block, psi)
                lo, hi = _cw_bracket(kind, op, psi)
                return psi, (lo, hi), it + it_pi, "policy_iteration"
        nxt = _step(kind, psi, op, hi, damped, h)
        top = nxt.max()
        if not top > 0:
            raise DegenerateEigenvector("iterate support collapsed to the empty set")
        psi = nxt / top
    raise NoConvergence(f"Collatz-Wielandt gap {gaps[-1]:.3g} above {tol:g} "
                        f"after {max_iter} iterations")


def _policy_iteration(block, psi, tol, max_iter, h):
    """Freeze the argmin selector, solve its linear Perron problem, re-improve."""
    from .oracle import perron_root

    actions = argmin_actions(action_values(block, psi))
    used = 0
    n = len(block)
    for _ in range(200):
        mat = block.policy_matrix(actions)
        cost = block.cost[np.arange(n), actions]
        if block.kind == "dt":
            mat = np.exp(cost)[:, None] * mat
        else:
            mat = np.eye(n) + h * (mat + np.diag(cost))
        res = perron_root(mat, tol=min(tol, 1e-12), start=psi + 1e-300)
        used += res.iterations
        psi = res.right_vector / res.right_vector.max()
        new = argmin_actions(action_values(block, psi), incumbent=actions)
        if np.array_equal(new, actions):
            return psi, used
        actions = new
    raise NoConvergence("policy iteration fallback did not settle on a selector")


def _finish(model, domain, block, psi_local, bracket, iterations, kind, h):
    lo, hi = bracket
    psi = np.zeros(model.size)
    psi[domain.as_array()] = psi_local
    notes = []
    ref = model.reference_state
    if domain.contains_reference and psi[ref] > SUPPORT_EPS * psi.max():
        psi /= psi[ref]
        normalization = "reference_one"
    else:
        psi /= psi.max()
        normalization = "max_norm"
        notes.append("reference state outside the eigenfunction support; "
                     "normalized to unit max-norm")
        log.warning("Dirichlet eigenfunction vanishes at the reference state (|D|=%d)",
                    len(domain))
    rho = 0.5 * (lo + hi)
    return EigenPair(rho=float(rho), psi=psi, normalization=normalization,
                     iterations=iterations, cw_gap=float(hi - lo), kind=kind,
                     domain=domain, notes=notes)


def _initial(model, domain, psi0):
    n = len(domain)
    if psi0 is None:
        return np.ones(n)
    psi0 = np.asarray(psi0, dtype=float)
    if psi0.shape == (model.size,):
        psi0 = psi0[domain.as_array()]
    if psi0.shape != (n,) or np.any(psi0 < 0) or not psi0.max() > 0:
        raise ValueError("initial iterate must be a nonnegative nonzero vector on the domain")
    return psi0


def dt_dirichlet_eigenpair(model, domain, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                           psi0=None) -> EigenPair:
    """Principal Dirichlet eigenpair of the discrete-time min-operator on ``domain``.

    ``rho`` is the log-eigenvalue.  ``psi`` is normalized to ``psi(i0) = 1``
    when the reference state carries mass, otherwise to unit max-norm.
    """
    block = model.block(domain.as_array())
    psi, bracket, its, _ = _power_iterate(block, _initial(model, domain, psi0), tol, max_iter)
    return _finish(model, domain, block, psi, bracket, its, "dt", None)


def ct_dirichlet_eigenpair(model, domain, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                           psi0=None, h=None) -> EigenPair:
    """Principal Dirichlet eigenpair of the rate-form min-operator on ``domain``.

    Iterates ``psi + h * Op(psi)``; ``h`` only changes the path, not the
    limit.
    """
    block = model.block(domain.as_array())
    h = ct_shift(block) if h is None else float(h)
    psi, bracket, its, _ = _power_iterate(block, _initial(model, domain, psi0), tol, max_iter, h)
    return _finish(model, domain, block, psi, bracket, its, "ct", h)


def dirichlet_eigenpair(model, domain, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, psi0=None):
    if model.kind == "dt":
        return dt_dirichlet_eigenpair(model, domain, tol, max_iter, psi0)
    return ct_dirichlet_eigenpair(model, domain, tol, max_iter, psi0)


def dt_dirichlet_poisson(model, domain, f, shift, tol=1e-12, max_iter=DEFAULT_MAX_ITER):
    """Fixed point of ``phi = min_a [exp(c + shift) P_a phi + f]`` on ``domain``, zero outside.

    The shifted cost must be strictly negative on the domain, which makes the
    map a sup-norm contraction with modulus ``max exp(c + shift)``.
    """
    block = model.block(domain.as_array())
    states = domain.as_array()
    f = np.asarray(f, dtype=float)
    if f.shape == (model.size,):
        f = f[states]
    if f.shape != (len(states),):
        raise ValueError("f must be given on the domain or on the whole truncation")
    top = float(np.where(block.feasible, block.cost, -np.inf).max()) + shift
    if not top < 0:
        raise ShiftInsufficient(f"max shifted cost {top:g} is not negative on the domain")
    modulus = math.exp(top)
    weight = np.exp(np.where(block.feasible, block.cost + shift, 0.0))
    phi = np.zeros(len(states))
    for _ in range(max_iter):
        vals = weight * block.products(phi) + f[:, None]
        vals[~block.feasible] = np.inf
        nxt = vals.min(axis=1)
        step = np.max(np.abs(nxt - phi))
        phi = nxt
        if modulus / (1 - modulus) * step <= tol * max(1.0, np.max(np.abs(phi))):
            out = np.zeros(model.size)
            out[states] = phi
            return out
    raise NoConvergence(f"Poisson iteration did not reach {tol:g} in {max_iter} steps")
