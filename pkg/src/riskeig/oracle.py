"""Brute-force ground truth for finite models.

The optimal value over stationary Markov policies is computed by
enumerating every deterministic policy and taking the dominant eigenvalue
of its cost-weighted matrix with a dense LAPACK solve.  Nothing here calls
the Dirichlet or policy-iteration solvers, so the two routes stay
independent.
"""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import NoConvergence, TooManyPolicies, ZeroMatrix
from .model import Policy

log = logging.getLogger(__name__)

DEFAULT_CAP = 10**6


@dataclass
class PerronResult:
    log_root: float
    right_vector: np.ndarray
    cw_lower: float
    cw_upper: float
    iterations: int
    irreducible: bool

    @property
    def root(self):
        return math.exp(self.log_root)


def is_irreducible(matrix):
    """Strong connectivity of the support graph."""
    graph = sp.csr_matrix(matrix) if not sp.issparse(matrix) else matrix
    n_comp, _ = connected_components(graph, directed=True, connection="strong")
    return n_comp == 1


def perron_root(matrix, tol=1e-12, max_iter=100_000, start=None, reference=None):
    """Dominant eigenvalue of a nonnegative square matrix by power iteration.

    Returns the log of the root together with the Collatz-Wielandt bracket
    (also in log units).  Period-2 oscillation is detected from a stalled
    bracket and damped by averaging successive iterates.  Reducible inputs
    are accepted; the returned vector may then have zero entries.
    """
    mat = matrix if sp.issparse(matrix) else np.asarray(matrix, dtype=float)
    n = mat.shape[0]
    if mat.shape != (n, n):
        raise ValueError("matrix must be square")
    dense_vals = mat.data if sp.issparse(mat) else mat
    if np.any(dense_vals < 0):
        raise ValueError("matrix must be nonnegative")
    if not np.any(dense_vals > 0):
        raise ZeroMatrix("matrix has no positive entry")
    irreducible = is_irreducible(mat)
    if not irreducible:
        log.warning("perron_root: reducible matrix; right vector may vanish on some states")

    x = np.ones(n) if start is None else np.asarray(start, dtype=float).copy()
    x /= x.max()
    damped = False
    gaps = []
    lo = hi = math.nan
    for it in range(1, max_iter + 1):
        y = mat @ x
        top = x.max()
        supp = (x > 1e-14 * top) | (y > 1e-14 * top)
        if not y.max() > 0:
            raise ZeroMatrix("matrix is nilpotent on the iterate support")
        if np.any(x[supp] <= 0):
            gap = math.inf
        else:
            r = y[supp] / x[supp]
            lo = math.log(r.min()) if r.min() > 0 else -math.inf
            hi = math.log(r.max())
            gap = hi - lo
            if gap < tol:
                break
        gaps.append(gap)
        if not damped and it > 8 and math.isfinite(gap) and gap >= 0.99 * gaps[-3]:
            damped = True
        if damped and math.isfinite(hi):
            y = 0.5 * (x + y / math.exp(hi))
        x = y / y.max()
    else:
        raise NoConvergence(f"power iteration gap {gaps[-1]:.3g} after {max_iter} steps")

    vec = x.copy()
    if reference is not None and vec[reference] > 1e-14 * vec.max():
        vec /= vec[reference]
    else:
        vec /= vec.max()
    return PerronResult(0.5 * (lo + hi), vec, lo, hi, it, irreducible)


def count_policies(model):
    return math.prod(int(k) for k in model.n_actions)


def enumerate_policies(model, cap=DEFAULT_CAP):
    """All deterministic stationary policies, lexicographic in the action slots."""
    count = count_policies(model)
    if count > cap:
        raise TooManyPolicies(count, cap)
    for actions in itertools.product(*(range(int(k)) for k in model.n_actions)):
        yield Policy(actions)


def policy_value_matrix(model, policy, states=None):
    """DT: ``diag(exp(c_v)) P_v``; CT: ``Q_v + diag(c_v)``, restricted to ``states``."""
    states = np.arange(model.size) if states is None else np.asarray(states)
    mat = model.policy_matrix(policy, states)
    cost = model.policy_cost(policy)[states]
    if model.kind == "dt":
        return np.exp(cost)[:, None] * mat
    return mat + np.diag(cost)


def dense_policy_value(model, policy, states=None):
    """Dominant eigenvalue of a policy: log spectral radius (DT) or max real part (CT)."""
    mat = policy_value_matrix(model, policy, states)
    eig = np.linalg.eigvals(mat)
    if model.kind == "dt":
        radius = np.max(np.abs(eig))
        return math.log(radius) if radius > 0 else -math.inf
    return float(np.max(eig.real))


def policy_perron(model, policy, states=None, tol=1e-12):
    """Perron pair of one policy via :func:`perron_root` (CT shifted to a nonnegative matrix)."""
    states = np.arange(model.size) if states is None else np.asarray(states)
    mat = policy_value_matrix(model, policy, states)
    ref = None
    hits = np.nonzero(states == model.reference_state)[0]
    if hits.size:
        ref = int(hits[0])
    if model.kind == "dt":
        return perron_root(mat, tol=tol, reference=ref), 0.0
    s = max(0.0, float(-np.min(np.diag(mat))))
    return perron_root(mat + s * np.eye(len(states)), tol=tol, reference=ref), s


@dataclass
class PolicyValue:
    policy: Policy
    value: float
    irreducible: bool


@dataclass
class OracleResult:
    lambda_star: float
    policy: Policy
    table: list
    kind: str
    psi: np.ndarray | None = None
    notes: list = field(default_factory=list)

    def optimal_policies(self, tol=1e-8):
        return [row.policy for row in self.table if row.value <= self.lambda_star + tol]

    def value_of(self, policy):
        for row in self.table:
            if row.policy == policy:
                return row.value
        raise KeyError(policy)

    def to_dict(self):
        return {
            "kind": self.kind,
            "lambda_star": self.lambda_star,
            "policy": list(self.policy.action_index),
            "psi": None if self.psi is None else self.psi.tolist(),
            "policies": len(self.table),
            "reducible_policies": sum(not row.irreducible for row in self.table),
            "notes": list(self.notes),
        }

    def csv_rows(self):
        return [(row.policy.encode(), row.value, int(row.irreducible)) for row in self.table]


BATCH_LIMIT = 64
BATCH_ENTRIES = 1 << 20


def _batched_reach(mats):
    """Strong connectivity of a stack of support graphs by repeated squaring."""
    n = mats.shape[-1]
    reach = ((mats != 0) | np.eye(n, dtype=bool)).astype(np.float32)
    for _ in range(max(1, math.ceil(math.log2(n)))):
        reach = np.minimum(reach @ reach, 1.0)
    return reach.min(axis=(1, 2)) > 0


def _batched_values(model, dense, actions):
    """Policy eigenvalues and irreducibility flags for a block of policies."""
    n = model.size
    rows = np.arange(n)
    mats = dense[actions, rows[None, :]]
    cost = model.cost[rows[None, :], actions]
    if model.kind == "dt":
        mats = np.exp(cost)[:, :, None] * mats
    else:
        mats = mats + cost[:, :, None] * np.eye(n)
    eig = np.linalg.eigvals(mats)
    if model.kind == "dt":
        radius = np.abs(eig).max(axis=1)
        with np.errstate(divide="ignore"):
            values = np.log(radius)
    else:
        values = eig.real.max(axis=1)
    off = mats.copy()
    off[:, rows, rows] = 0.0
    return values, _batched_reach(off)


def _policy_blocks(model, cap, block):
    count = count_policies(model)
    if count > cap:
        raise TooManyPolicies(count, cap)
    it = itertools.product(*(range(int(k)) for k in model.n_actions))
    while True:
        chunk = list(itertools.islice(it, block))
        if not chunk:
            return
        yield np.asarray(chunk, dtype=np.intp)


def _table_batched(model, cap, threads):
    n = model.size
    dense = np.stack([model.matrix(a).toarray() for a in range(model.max_actions)])
    block = max(1, BATCH_ENTRIES // (n * n))
    blocks = list(_policy_blocks(model, cap, block))
    run = lambda acts: _batched_values(model, dense, acts)
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, blocks))
    else:
        results = [run(b) for b in blocks]
    table = []
    for acts, (values, irr) in zip(blocks, results):
        for a, v, r in zip(acts, values.tolist(), irr.tolist()):
            table.append(PolicyValue(Policy(a), v, bool(r)))
    return table


def _table_loop(model, cap, threads):
    def one(policy):
        mat = policy_value_matrix(model, policy)
        return PolicyValue(policy, dense_policy_value(model, policy), is_irreducible(mat))

    policies = enumerate_policies(model, cap)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(one, policies))
    return [one(p) for p in policies]


def brute_force_lambda_star(model, cap=DEFAULT_CAP, threads=1):
    """Minimum over all deterministic stationary policies of the policy eigenvalue.

    Returns an :class:`OracleResult` with the full per-policy table; the
    first minimizing policy in enumeration order is reported as the argmin.
    Policies with reducible matrices are flagged in the table.  ``threads``
    spreads the eigenvalue solves over a thread pool without changing the
    result.
    """
    if model.size <= BATCH_LIMIT:
        table = _table_batched(model, cap, threads)
    else:
        table = _table_loop(model, cap, threads)
    best = min(range(len(table)), key=lambda k: table[k].value)
    result = OracleResult(table[best].value, table[best].policy, table, model.kind)
    if model.leaks():
        result.notes.append("kernel leaks mass; values are killed-process eigenvalues")
    if any(not row.irreducible for row in table):
        result.notes.append("some policies are reducible; their values are the dominant "
                            "eigenvalue, not necessarily the ergodic cost")
    try:
        pair, _ = policy_perron(model, result.policy)
        result.psi = pair.right_vector
    except Exception as exc:  # the value is still valid without a vector
        result.notes.append(f"no Perron vector for the argmin policy: {exc}")
    return result
