"""Controlled Markov chains on finite truncations of a countable state space.

States are the indices ``0..N-1`` of a fixed enumeration.  A kernel row may
carry less than full mass (discrete time) or a diagonal rate larger than the
off-diagonal outflow (continuous time); the difference is mass leaving the
truncation, which every Dirichlet solver treats as killed.

Both model classes store one sparse ``N x N`` matrix per action *slot*.
State ``i`` uses slots ``0..len(actions[i])-1``; rows of unused slots are
empty and their cost is ``+inf``.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch, InvalidPolicy, MalformedModel

EQ_TOL = 1e-12
# stacked dense blocks above this many entries fall back to CSR
DENSE_LIMIT = 4_000_000


@dataclass(frozen=True)
class StateSpace:
    size: int
    reference_state: int = 0

    def __post_init__(self):
        if int(self.size) != self.size or self.size < 1:
            raise MalformedModel(f"state space size must be a positive integer, got {self.size}")
        if not 0 <= self.reference_state < self.size:
            raise MalformedModel(
                f"reference state {self.reference_state} outside [0, {self.size})")


@dataclass(frozen=True)
class Policy:
    """Stationary Markov control: one action slot per state."""

    action_index: tuple

    def __post_init__(self):
        object.__setattr__(self, "action_index", tuple(int(a) for a in self.action_index))

    def __len__(self):
        return len(self.action_index)

    def __getitem__(self, i):
        return self.action_index[i]

    @classmethod
    def constant(cls, n, action=0):
        return cls((action,) * n)

    def as_array(self):
        return np.asarray(self.action_index, dtype=np.intp)

    def encode(self):
        """Compact string form used in CSV tables, e.g. ``"0.1.0"``."""
        return ".".join(str(a) for a in self.action_index)

    def validate(self, model):
        if len(self.action_index) != model.size:
            raise InvalidPolicy(
                f"policy has {len(self.action_index)} entries, model has {model.size} states")
        for i, a in enumerate(self.action_index):
            if not 0 <= a < model.n_actions[i]:
                raise InvalidPolicy(
                    f"action {a} at state {i} outside [0, {model.n_actions[i]})")
        return self

    def to_dict(self):
        return {"action_index": list(self.action_index)}


def _as_entries(kernel, width):
    arr = np.asarray(kernel, dtype=float)
    if arr.size == 0:
        return np.zeros((0, width))
    if arr.ndim != 2 or arr.shape[1] != width:
        raise MalformedModel(f"expected rows of {width} numbers, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise MalformedModel("non-finite value in model table")
    idx = arr[:, :width - 1]
    if np.any(idx != np.round(idx)):
        raise MalformedModel("non-integer state or action index")
    return arr


class ControlledChain:
    """Shared storage for discrete- and continuous-time controlled chains."""

    kind = None

    def __init__(self, space: StateSpace, actions: Sequence[Sequence], kernel, cost,
                 closed: bool = False):
        self.space = space
        self.closed = bool(closed)
        n = space.size
        if len(actions) != n:
            raise MalformedModel(f"{len(actions)} action lists for {n} states")
        self.actions = tuple(tuple(acts) for acts in actions)
        if any(len(acts) == 0 for acts in self.actions):
            empty = [i for i, acts in enumerate(self.actions) if len(acts) == 0]
            raise MalformedModel(f"empty action list at states {empty[:10]}")
        self.n_actions = np.array([len(a) for a in self.actions], dtype=np.intp)
        n_slots = int(self.n_actions.max())
        self.feasible = np.arange(n_slots)[None, :] < self.n_actions[:, None]

        entries = _as_entries(kernel, 4)
        ii, aa, jj = (entries[:, k].astype(np.intp) for k in range(3))
        vals = entries[:, 3]
        if np.any((ii < 0) | (ii >= n) | (jj < 0) | (jj >= n)):
            raise MalformedModel("kernel state index out of range")
        if np.any((aa < 0) | (aa >= self.n_actions[ii])):
            raise MalformedModel("kernel action index out of range")
        keys = (ii * n_slots + aa) * n + jj
        if np.unique(keys).size != keys.size:
            raise MalformedModel("duplicate (i, a, j) kernel entry")
        self._entries = (ii, aa, jj, vals)
        self._mats = []
        for a in range(n_slots):
            sel = aa == a
            mat = sp.csr_matrix((vals[sel], (ii[sel], jj[sel])), shape=(n, n))
            mat.sort_indices()
            self._mats.append(mat)

        centries = _as_entries(cost, 3)
        ci, ca = centries[:, 0].astype(np.intp), centries[:, 1].astype(np.intp)
        if np.any((ci < 0) | (ci >= n)) or np.any((ca < 0) | (ca >= self.n_actions[ci])):
            raise MalformedModel("cost index out of range")
        table = np.full((n, n_slots), np.nan)
        table[ci, ca] = centries[:, 2]
        missing = self.feasible & np.isnan(table)
        if missing.any():
            i, a = np.argwhere(missing)[0]
            raise MalformedModel(f"no cost for feasible pair ({i}, {a})")
        table[~self.feasible] = np.inf
        self.cost = table
        self.cost.setflags(write=False)
        self._full_block = None
        self.feasible.setflags(write=False)

    # construction helpers -------------------------------------------------

    @classmethod
    def from_dense(cls, matrices, cost, reference_state=0, closed=True, feasible=None,
                   actions=None):
        """Build from an ``(A, N, N)`` kernel stack and an ``(N, A)`` cost table.

        ``feasible`` masks action slots per state; slots must be a prefix
        ``0..k-1`` at every state.
        """
        mats = np.asarray(matrices, dtype=float)
        cost = np.asarray(cost, dtype=float)
        n_slots, n, _ = mats.shape
        if feasible is None:
            feasible = np.ones((n, n_slots), dtype=bool)
        counts = np.asarray(feasible).sum(axis=1)
        if actions is None:
            actions = [list(range(k)) for k in counts]
        a_idx, i_idx, j_idx = np.nonzero(mats)
        keep = np.asarray(feasible)[i_idx, a_idx]
        kernel = np.column_stack([i_idx[keep], a_idx[keep], j_idx[keep],
                                  mats[a_idx[keep], i_idx[keep], j_idx[keep]]])
        ci, ca = np.nonzero(feasible)
        cost_rows = np.column_stack([ci, ca, cost[ci, ca]])
        return cls(StateSpace(n, reference_state), actions, kernel, cost_rows, closed=closed)

    def _rebuild(self, cost_table=None):
        ii, aa, jj, vals = self._entries
        table = self.cost if cost_table is None else cost_table
        ci, ca = np.nonzero(self.feasible)
        return type(self)(self.space, self.actions, np.column_stack([ii, aa, jj, vals]),
                          np.column_stack([ci, ca, table[ci, ca]]), closed=self.closed)

    def with_cost(self, cost_table):
        """Same kernel, new ``(N, A)`` cost table (entries outside feasible slots ignored)."""
        cost_table = np.asarray(cost_table, dtype=float)
        if cost_table.shape != self.cost.shape:
            raise DimensionMismatch(f"cost table shape {cost_table.shape} != {self.cost.shape}")
        return self._rebuild(cost_table)

    def shifted(self, kappa):
        """Same kernel with every cost increased by ``kappa``."""
        return self._rebuild(self.cost + kappa)

    # accessors ------------------------------------------------------------

    @property
    def size(self):
        return self.space.size

    @property
    def reference_state(self):
        return self.space.reference_state

    @property
    def max_actions(self):
        return self.feasible.shape[1]

    def matrix(self, slot):
        return self._mats[slot]

    def entries(self):
        ii, aa, jj, vals = self._entries
        return zip(ii.tolist(), aa.tolist(), jj.tolist(), vals.tolist())

    def row_sums(self):
        sums = np.column_stack([np.asarray(m.sum(axis=1)).ravel() for m in self._mats])
        return np.where(self.feasible, sums, np.nan)

    def policy_matrix(self, policy, states=None):
        """Dense matrix of the rows selected by ``policy``, restricted to ``states``."""
        v = policy.as_array()
        states = np.arange(self.size) if states is None else np.asarray(states)
        out = np.zeros((len(states), len(states)))
        for a in np.unique(v[states]):
            rows = np.nonzero(v[states] == a)[0]
            out[rows] = self._mats[a][states[rows]][:, states].toarray()
        return out

    def policy_cost(self, policy):
        return self.cost[np.arange(self.size), policy.as_array()]

    def block(self, states=None):
        """Kernel restricted to ``states``; the full-truncation block is cached."""
        if states is None:
            if self._full_block is None:
                self._full_block = KernelBlock(self)
            return self._full_block
        return KernelBlock(self, states)

    def leaks(self, states=None, tol=EQ_TOL):
        """Whether any feasible row leaves ``states`` (default: the truncation)."""
        blk = self.block(states)
        sums = blk.products(np.ones(len(blk.states)))
        target = 1.0 if self.kind == "dt" else 0.0
        return bool(np.any(blk.feasible & (sums < target - tol)))

    def to_dict(self):
        ci, ca = np.nonzero(self.feasible)
        ii, aa, jj, vals = self._entries
        return {
            "kind": self.kind,
            "states": self.size,
            "reference_state": self.reference_state,
            "closed": self.closed,
            "actions": [list(a) for a in self.actions],
            "kernel": [[int(i), int(a), int(j), float(x)]
                       for i, a, j, x in zip(ii, aa, jj, vals)],
            "cost": [[int(i), int(a), float(self.cost[i, a])] for i, a in zip(ci, ca)],
        }

    def __repr__(self):
        return (f"{type(self).__name__}(states={self.size}, max_actions={self.max_actions}, "
                f"closed={self.closed})")


class DtModel(ControlledChain):
    """Discrete-time controlled chain; kernel values are transition probabilities."""

    kind = "dt"


class CtModel(ControlledChain):
    """Continuous-time controlled chain; kernel values are rates, diagonal included."""

    kind = "ct"

    def diagonal(self):
        """``(N, A)`` table of ``q(i|i,a)`` (``nan`` on unused slots)."""
        diag = np.column_stack([m.diagonal() for m in self._mats])
        return np.where(self.feasible, diag, np.nan)

    def exit_rates(self):
        """``q(i) = max_a -q(i|i,a)``."""
        return np.nanmax(-self.diagonal(), axis=1)


class KernelBlock:
    """Kernel rows and columns restricted to a subset of states.

    Columns outside ``states`` are dropped, so products against a vector on
    the block implement the killed (Dirichlet) semantics directly.
    """

    def __init__(self, model, states=None):
        n = model.size
        self.states = np.arange(n) if states is None else np.asarray(states, dtype=np.intp)
        self.kind = model.kind
        self.cost = model.cost[self.states]
        self.feasible = model.feasible[self.states]
        m = len(self.states)
        full = m == n
        subs = [mat if full else mat[self.states][:, self.states] for mat in model._mats]
        if m * m * len(subs) <= DENSE_LIMIT:
            self._dense = np.stack([s.toarray() for s in subs])
            self._sparse = None
        else:
            self._dense = None
            self._sparse = [s.tocsr() for s in subs]
        if self.kind == "ct":
            self.diag = np.column_stack([s.diagonal() for s in subs])
            self.diag[~self.feasible] = np.nan

    def __len__(self):
        return len(self.states)

    def products(self, x):
        """``(n, A)`` array of row products ``sum_j M_a[i, j] x[j]`` (0 on unused slots)."""
        if self._dense is not None:
            return (self._dense @ x).T
        return np.column_stack([m @ x for m in self._sparse])

    def policy_matrix(self, actions):
        """Dense matrix whose row ``i`` is the row of slot ``actions[i]``."""
        m = len(self.states)
        rows = np.arange(m)
        if self._dense is not None:
            return self._dense[actions, rows, :]
        out = np.zeros((m, m))
        for a in np.unique(actions):
            sel = np.nonzero(actions == a)[0]
            out[sel] = self._sparse[a][sel].toarray()
        return out

    def exit_rates(self):
        return np.nanmax(-self.diag, axis=1)

    def select(self, actions):
        """Single-action block following the selector ``actions`` (local indices)."""
        actions = np.asarray(actions, dtype=np.intp)
        rows = np.arange(len(self.states))
        out = object.__new__(KernelBlock)
        out.states = self.states
        out.kind = self.kind
        out.cost = self.cost[rows, actions][:, None]
        out.feasible = np.ones((len(rows), 1), dtype=bool)
        if self._dense is not None:
            out._dense = self._dense[actions, rows, :][None]
            out._sparse = None
        else:
            out._dense = None
            out._sparse = [sp.csr_matrix(self.policy_matrix(actions))]
        if self.kind == "ct":
            out.diag = self.diag[rows, actions][:, None]
        return out


# --- validation -------------------------------------------------------------

@dataclass
class Violation:
    state: int | None
    action: int | None
    quantity: str
    margin: float

    def to_dict(self):
        return {"state": self.state, "action": self.action, "quantity": self.quantity,
                "margin": self.margin}


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.violations

    def add(self, state, action, quantity, margin):
        self.violations.append(Violation(None if state is None else int(state),
                                         None if action is None else int(action),
                                         quantity, float(margin)))

    def to_dict(self):
        return {"passed": self.passed, "violations": [v.to_dict() for v in self.violations],
                "notes": list(self.notes)}


def validate_model(model: ControlledChain) -> ValidationReport:
    """Check stochasticity (DT) or conservativeness and sign rules (CT) row by row."""
    report = ValidationReport()
    ii, aa, jj, vals = model._entries
    sums = model.row_sums()
    if model.kind == "dt":
        for k in np.nonzero(vals < 0)[0]:
            report.add(ii[k], aa[k], "negative_probability", vals[k])
        for i, a in np.argwhere(model.feasible):
            s = sums[i, a]
            if s > 1 + EQ_TOL or (model.closed and abs(s - 1) > EQ_TOL):
                report.add(i, a, "row_sum", 1 - s)
    else:
        off = ii != jj
        for k in np.nonzero(off & (vals < 0))[0]:
            report.add(ii[k], aa[k], "negative_rate", vals[k])
        for k in np.nonzero(~off & (vals > 0))[0]:
            report.add(ii[k], aa[k], "positive_diagonal", -vals[k])
        for i, a in np.argwhere(model.feasible):
            s = sums[i, a]
            if s > EQ_TOL or (model.closed and abs(s) > EQ_TOL):
                report.add(i, a, "not_conservative", -s)
    for i, a in np.argwhere(model.feasible & (model.cost < 0)):
        report.add(i, a, "negative_cost", model.cost[i, a])
    return report


# --- Lyapunov certificates ----------------------------------------------------

@dataclass
class ExplosionCert:
    """Non-explosion certificate for rate models: drift of ``V_tilde`` and rate bound."""

    V_tilde: np.ndarray
    C0: float
    C1: float
    C2: float = 0.0


@dataclass
class LyapunovCertDt:
    """Drift certificate ``sup_a sum_j V(j)P(j|i,a) <= (1-beta_i) V(i) + C_hat 1_K(i)``.

    Mode ``"a"`` uses a constant ``beta``; mode ``"b"`` uses
    ``beta_i = 1 - exp(-ell(i))`` with ``ell`` declared norm-like from
    ``tail_index`` on.
    """

    V: np.ndarray
    mode: str
    K: frozenset
    C_hat: float
    beta: float | None = None
    ell: np.ndarray | None = None
    tail_index: int = 0

    def __post_init__(self):
        self.V = np.asarray(self.V, dtype=float)
        self.K = frozenset(int(k) for k in self.K)
        if self.ell is not None:
            self.ell = np.asarray(self.ell, dtype=float)
        if self.mode not in ("a", "b"):
            raise ValueError(f"unknown certificate mode {self.mode!r}")
        if self.mode == "a" and not (self.beta is not None and 0 < self.beta < 1):
            raise ValueError("mode (a) needs beta in (0, 1)")
        if self.mode == "b" and self.ell is None:
            raise ValueError("mode (b) needs ell")
        if not self.C_hat > 0:
            raise ValueError("C_hat must be positive")

    @property
    def gamma(self):
        return math.log(1.0 / (1.0 - self.beta))


@dataclass
class LyapunovCertCt:
    """Drift certificate ``sup_a sum_j V(j)q(j|i,a) <= C_hat 1_K(i) - r(i) V(i)``.

    ``r(i) = gamma`` in mode ``"a"`` and ``r(i) = ell(i)`` in mode ``"b"``.
    """

    V: np.ndarray
    mode: str
    K: frozenset
    C_hat: float
    gamma: float | None = None
    ell: np.ndarray | None = None
    tail_index: int = 0
    explosion: ExplosionCert | None = None

    def __post_init__(self):
        self.V = np.asarray(self.V, dtype=float)
        self.K = frozenset(int(k) for k in self.K)
        if self.ell is not None:
            self.ell = np.asarray(self.ell, dtype=float)
        if self.mode not in ("a", "b"):
            raise ValueError(f"unknown certificate mode {self.mode!r}")
        if self.mode == "a" and not (self.gamma is not None and self.gamma > 0):
            raise ValueError("mode (a) needs gamma > 0")
        if self.mode == "b" and self.ell is None:
            raise ValueError("mode (b) needs ell")
        if not self.C_hat > 0:
            raise ValueError("C_hat must be positive")


def _drift_bound(model, cert):
    n = model.size
    indicator = np.zeros(n)
    indicator[list(cert.K)] = 1.0
    if model.kind == "dt":
        rate = np.full(n, cert.beta) if cert.mode == "a" else 1.0 - np.exp(-cert.ell)
        return (1.0 - rate) * cert.V + cert.C_hat * indicator
    rate = np.full(n, cert.gamma) if cert.mode == "a" else cert.ell
    return cert.C_hat * indicator - rate * cert.V


def drift_margins(model, cert):
    """Per-state slack ``bound(i) - sup_a sum_j V(j) K(j|i,a)`` of the drift inequality."""
    blk = model.block()
    drift = np.where(blk.feasible, blk.products(cert.V), -np.inf).max(axis=1)
    return _drift_bound(model, cert) - drift


def check_lyapunov(model, cert) -> ValidationReport:
    """Check a Foster-Lyapunov certificate on every state of the truncation."""
    n = model.size
    expected = LyapunovCertDt if model.kind == "dt" else LyapunovCertCt
    if not isinstance(cert, expected):
        raise DimensionMismatch(f"{model.kind} model needs a {expected.__name__}")
    if cert.V.shape != (n,) or (cert.ell is not None and cert.ell.shape != (n,)):
        raise DimensionMismatch(f"certificate vectors must have length {n}")
    if any(not 0 <= k < n for k in cert.K):
        raise DimensionMismatch("certificate set K has states outside the truncation")

    report = ValidationReport()
    for i in np.nonzero(cert.V < 1)[0]:
        report.add(i, None, "lyapunov_floor", cert.V[i] - 1)
    bound = _drift_bound(model, cert)
    margin = drift_margins(model, cert)
    tol = EQ_TOL * np.maximum(1.0, np.abs(bound))
    for i in np.nonzero(margin < -tol)[0]:
        report.add(i, None, "drift", margin[i])

    cmax = np.where(model.feasible, model.cost, -np.inf).max(axis=1)
    if cert.mode == "a":
        gamma = cert.gamma
        sup_c = float(cmax.max())
        if not sup_c < gamma:
            report.add(None, None, "cost_sup", gamma - sup_c)
    else:
        for i in np.nonzero(cert.ell < 0)[0]:
            report.add(i, None, "negative_ell", cert.ell[i])
        g = cert.ell - cmax
        t = max(int(cert.tail_index), 0)
        steps = np.diff(g[t:])
        for k in np.nonzero(steps <= 0)[0]:
            report.add(t + k + 1, None, "norm_like", steps[k])
        report.notes.append(
            f"norm-like property checked as strict growth of ell - max_a c from state {t} on")

    if model.kind == "ct" and cert.explosion is not None:
        ex = cert.explosion
        vt = np.asarray(ex.V_tilde, dtype=float)
        if vt.shape != (n,):
            raise DimensionMismatch(f"V_tilde must have length {n}")
        blk = model.block()
        lhs = blk.products(vt)
        rhs = ex.C0 * vt + ex.C2
        for i, a in np.argwhere(blk.feasible & (lhs > rhs[:, None] + EQ_TOL * np.maximum(1, np.abs(rhs[:, None])))):
            report.add(i, a, "explosion_drift", rhs[i] - lhs[i, a])
        qi = model.exit_rates()
        for i in np.nonzero(qi > ex.C1 * vt)[0]:
            report.add(i, None, "explosion_rate", ex.C1 * vt[i] - qi[i])

    if model.leaks():
        report.notes.append("drift sums exclude mass leaving the truncation")
    return report


# --- reachability -------------------------------------------------------------

REACHABILITY_VARIANTS = ("full_support", "path_condition", "pia_small_set")


def _common_successors(model, i):
    """States reached from ``i`` with positive mass under every action."""
    common = None
    for a in range(model.n_actions[i]):
        mat = model.matrix(a)
        lo, hi = mat.indptr[i], mat.indptr[i + 1]
        succ = set(mat.indices[lo:hi][mat.data[lo:hi] > 0].tolist())
        common = succ if common is None else common & succ
    common.discard(i)
    return sorted(common)


def check_reachability(model, variant="full_support", z=None, reference=None) -> ValidationReport:
    """Support checks that keep the reference-state normalization meaningful.

    ``full_support``: every state ``j != i0`` is hit in one step from ``i0``
    under every action.  ``path_condition``: every state is reachable from
    ``i0`` along edges present under *all* actions (a policy-independent
    sufficient check).  ``pia_small_set``: ``min_a P(z|i,a) > 0`` at every
    state.
    """
    i0 = model.reference_state if reference is None else int(reference)
    report = ValidationReport()
    n = model.size
    if variant == "full_support":
        for a in range(model.n_actions[i0]):
            row = model.matrix(a)[i0].toarray().ravel()
            for j in np.nonzero(row <= 0)[0]:
                if j != i0:
                    report.add(j, a, "no_direct_transition", row[j])
    elif variant == "path_condition":
        seen = np.zeros(n, dtype=bool)
        seen[i0] = True
        queue = deque([i0])
        while queue:
            i = queue.popleft()
            for j in _common_successors(model, i):
                if not seen[j]:
                    seen[j] = True
                    queue.append(j)
        for j in np.nonzero(~seen)[0]:
            report.add(j, None, "unreachable", 0.0)
    elif variant == "pia_small_set":
        if z is None:
            raise ValueError("pia_small_set needs the small-set state z")
        col = np.column_stack([model.matrix(a)[:, [z]].toarray().ravel()
                               for a in range(model.max_actions)])
        col = np.where(model.feasible, col, np.inf)
        worst = col.min(axis=1)
        for i in np.nonzero(worst <= 0)[0]:
            report.add(i, int(np.argmin(col[i])), "small_set", worst[i])
    else:
        raise ValueError(f"unknown reachability variant {variant!r}")
    return report


# --- JSON model files ---------------------------------------------------------

def model_from_dict(obj):
    """Build a model from the JSON model-file structure.

    Returns ``(model, certificate)``; the certificate is ``None`` unless the
    model came from a parametric builder that supplies one.
    """
    if "parametric" in obj:
        from .examples import build_parametric

        entry = obj["parametric"]
        return build_parametric(entry["name"], entry.get("params", {}), entry.get("truncation"))
    try:
        kind = obj["kind"]
        cls = {"dt": DtModel, "ct": CtModel}[kind]
        space = StateSpace(int(obj["states"]), int(obj.get("reference_state", 0)))
        model = cls(space, obj["actions"], obj["kernel"], obj["cost"],
                    closed=bool(obj.get("closed", False)))
    except KeyError as exc:
        raise MalformedModel(f"model file missing field or bad kind: {exc}") from None
    return model, None


def load_model(source):
    """Load a model from a path, JSON string, or already-parsed dict."""
    return load_model_with_cert(source)[0]


def load_model_with_cert(source):
    if isinstance(source, dict):
        obj = source
    elif isinstance(source, (str, Path)) and Path(source).exists():
        obj = json.loads(Path(source).read_text())
    else:
        obj = json.loads(source)
    return model_from_dict(obj)


def save_model(model, path):
    Path(path).write_text(json.dumps(model.to_dict(), indent=1))
