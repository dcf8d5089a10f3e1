"""Parametric model builders: a reneging queue, discrete and continuous
birth-death chains, and random finite instances for cross-checks.

Builders return plain models (plus a drift certificate where one is
known) and are registered by name for the JSON ``parametric`` branch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import InvalidParams
from .model import (CtModel, DtModel, ExplosionCert, LyapunovCertCt, LyapunovCertDt,
                    _drift_bound, drift_margins)

# --- queueing ----------------------------------------------------------------


@dataclass
class QueueingParams:
    """``Q' = [(1-theta) Q - u + A]_+`` on ``{0..truncation-1}``.

    ``arrival`` is ``"geometric"`` (``P(A=k) = p (1-p)^k``) or an explicit
    probability table over ``0, 1, 2, ...``.  The bounded cost is
    ``cost_scale * min(i, M)/M + kappa * u``; the linear one is
    ``slope * i + kappa * u``.
    """

    theta: float = 0.5
    arrival: str | list = "geometric"
    p: float = 0.5
    controls: tuple = (0, 1)
    truncation: int = 100
    cost: str = "bounded"
    M: int = 10
    cost_scale: float = 0.2
    kappa: float = 0.05
    slope: float = 0.01
    beta: float | None = None
    certificate: str = "linear"
    gamma: float = 0.5

    def __post_init__(self):
        if not 0 < self.theta < 1:
            raise InvalidParams(f"theta must lie in (0, 1), got {self.theta}")
        if self.truncation < 2:
            raise InvalidParams("truncation must be at least 2")
        if not self.controls or any(int(u) != u or u < 0 for u in self.controls):
            raise InvalidParams("controls must be nonnegative integers")
        self.controls = tuple(int(u) for u in self.controls)
        if self.cost not in ("bounded", "linear"):
            raise InvalidParams(f"unknown cost tag {self.cost!r}")
        if self.certificate not in ("linear", "exponential"):
            raise InvalidParams(f"unknown certificate {self.certificate!r}")
        if self.cost == "linear" and self.certificate == "linear":
            raise InvalidParams("linear cost needs the exponential (mode b) certificate")
        if self.M < 1:
            raise InvalidParams("M must be positive")
        if self.beta is None:
            self.beta = self.theta / 2
        if not 0 < self.beta < self.theta:
            raise InvalidParams("beta must lie in (0, theta)")
        if isinstance(self.arrival, str):
            if self.arrival != "geometric":
                raise InvalidParams(f"unknown arrival law {self.arrival!r}")
            if not 0 < self.p <= 1:
                raise InvalidParams("geometric parameter must lie in (0, 1]")
        else:
            table = np.asarray(self.arrival, dtype=float)
            if table.ndim != 1 or np.any(table < 0) or abs(table.sum() - 1) > 1e-12:
                raise InvalidParams("arrival table must be a probability vector")
            self.arrival = table.tolist()

    def arrival_pmf(self, n):
        """``P(A = k)`` for ``k < n``."""
        if isinstance(self.arrival, str):
            return self.p * (1 - self.p) ** np.arange(n)
        table = np.zeros(n)
        m = min(n, len(self.arrival))
        table[:m] = self.arrival[:m]
        return table

    def arrival_mean(self):
        if isinstance(self.arrival, str):
            return (1 - self.p) / self.p
        return float(np.dot(np.arange(len(self.arrival)), self.arrival))

    def log_mgf(self, gamma):
        """``log E exp(gamma A)``; ``inf`` when it diverges."""
        if isinstance(self.arrival, str):
            q = (1 - self.p) * math.exp(gamma)
            return math.log(self.p / (1 - q)) if q < 1 else math.inf
        return math.log(float(np.dot(np.exp(gamma * np.arange(len(self.arrival))),
                                     self.arrival)))


def _queue_kernel(params):
    n = params.truncation
    pmf = params.arrival_pmf(n + max(params.controls) + 2)
    mats = np.zeros((len(params.controls), n, n))
    for a, u in enumerate(params.controls):
        for i in range(n):
            m = (1 - params.theta) * i
            lo = math.floor(m)
            frac = m - lo
            for base, w in ((lo, 1 - frac), (lo + 1, frac)):
                if w <= 0:
                    continue
                start = base - u
                # arrivals k with start + k <= 0 land on the empty queue
                k0 = max(0, -start)
                mats[a, i, 0] += w * pmf[:k0 + 1].sum()
                top = n - 1 - start
                if top > k0:
                    mats[a, i, start + k0 + 1:n] += w * pmf[k0 + 1:top + 1]
    return mats


def _queue_cost(params):
    i = np.arange(params.truncation)[:, None]
    u = np.asarray(params.controls, dtype=float)[None, :]
    if params.cost == "bounded":
        return params.cost_scale * np.minimum(i, params.M) / params.M + params.kappa * u
    return params.slope * i + params.kappa * u


def _fit_K(model, cert, slack=1e-9):
    """Put every state whose drift bound fails into K, and size C_hat to cover them."""
    cert.K = frozenset()
    margin = drift_margins(model, cert)
    bad = margin <= slack * np.maximum(1.0, np.abs(_drift_bound(model, cert)))
    cert.K = frozenset(np.nonzero(bad)[0].tolist())
    cert.C_hat = float(max(0.0, -margin[bad].min()) if bad.any() else 0.0) + 1e-6
    return cert


def build_queueing_dt(params: QueueingParams | dict | None = None):
    """Reneging queue with randomized rounding of the drift term.

    The certificate is ``V(i) = i + 1`` in mode (a) with ``beta`` (default
    ``theta/2``), or ``V(i) = exp(gamma i)`` in mode (b) with
    ``ell(i) = [gamma theta i - a1]_+``, where ``a1`` bounds the log moment
    generating function of the arrivals plus the rounding.
    """
    params = _coerce(QueueingParams, params)
    mats = _queue_kernel(params)
    cost = _queue_cost(params)
    model = DtModel.from_dense(mats, cost, reference_state=0, closed=False)
    n = params.truncation
    idx = np.arange(n)
    if params.certificate == "linear":
        cert = LyapunovCertDt(idx + 1.0, "a", frozenset(), 1.0, beta=params.beta)
    else:
        g = params.gamma
        a1 = params.log_mgf(g)
        if not math.isfinite(a1):
            raise InvalidParams(f"arrival law has no exponential moment at gamma={g}")
        # rounding between floor and ceiling costs at most this much in the exponent
        f = np.linspace(0, 1, 1001)
        a1 += float(np.max(np.log(1 - f + f * math.exp(g)) - g * f))
        ell = np.maximum(g * params.theta * idx - a1, 0.0)
        tail = int(np.argmax(ell > 0)) if np.any(ell > 0) else n
        if params.cost == "bounded":
            tail = max(tail, params.M)
        cert = LyapunovCertDt(np.exp(g * idx), "b", frozenset(), 1.0, ell=ell, tail_index=tail)
    return model, _fit_K(model, cert)


# --- birth-death, discrete time ----------------------------------------------


@dataclass
class BirthDeathDtParams:
    """Birth-death chain with upward jumps ``k`` w.p. ``lam * p_k`` and one-step deaths.

    ``preset="transient"`` uses ``lam(i) = (i+1)^2 / (i^2 + (i+1)^2)`` and
    ``mu(i) = i^2/(i+1)^2 lam(i)``; ``"symmetric"`` uses ``lam = mu = 1/2``;
    ``"custom"`` takes ``lam`` as one value per action or an ``(N, A)``
    table.  State 0 moves to 1 with probability one.  ``cost`` is ``"log"``
    (``log(1+i)``), ``"constant"`` (``kappa``) or an ``(N, A)`` table.
    """

    truncation: int = 64
    preset: str = "transient"
    lam: list | None = None
    jumps: list = field(default_factory=lambda: [1.0])
    cost: str | list = "log"
    kappa: float = 0.0

    def __post_init__(self):
        if self.truncation < 2:
            raise InvalidParams("truncation must be at least 2")
        if self.preset not in ("transient", "symmetric", "custom"):
            raise InvalidParams(f"unknown preset {self.preset!r}")
        if self.preset == "custom" and self.lam is None:
            raise InvalidParams("custom preset needs lam")
        jumps = np.asarray(self.jumps, dtype=float)
        if jumps.ndim != 1 or np.any(jumps < 0) or abs(jumps.sum() - 1) > 1e-12:
            raise InvalidParams("jump distribution p_k (k >= 1) must sum to 1")
        self.jumps = jumps.tolist()

    def rates(self):
        """``(lam, mu)`` tables of shape ``(N, A)`` for states ``i >= 1`` (row 0 unused)."""
        i = np.arange(self.truncation, dtype=float)[:, None]
        if self.preset == "transient":
            lam = (i + 1) ** 2 / (i ** 2 + (i + 1) ** 2)
            mu = i ** 2 / (i + 1) ** 2 * lam
        elif self.preset == "symmetric":
            lam = np.full_like(i, 0.5)
            mu = 1 - lam
        else:
            lam = np.asarray(self.lam, dtype=float)
            lam = np.broadcast_to(lam if lam.ndim == 2 else lam[None, :],
                                  (self.truncation, lam.shape[-1])).copy()
            mu = 1 - lam
        if np.any(lam < 0) or np.any(lam > 1):
            raise InvalidParams("birth probabilities must lie in [0, 1]")
        if np.any(mu[1:] <= 0):
            raise InvalidParams("death probabilities must be bounded away from zero")
        return lam, mu


def build_birth_death_dt(params: BirthDeathDtParams | dict | None = None) -> DtModel:
    params = _coerce(BirthDeathDtParams, params)
    lam, mu = params.rates()
    n, n_act = params.truncation, lam.shape[1]
    jumps = np.asarray(params.jumps)
    mats = np.zeros((n_act, n, n))
    mats[:, 0, 1] = 1.0
    for a in range(n_act):
        for i in range(1, n):
            mats[a, i, i - 1] = mu[i, a]
            for k, pk in enumerate(jumps, start=1):
                if i + k < n:
                    mats[a, i, i + k] += lam[i, a] * pk
    if isinstance(params.cost, str):
        base = {"log": np.log1p(np.arange(n, dtype=float)),
                "constant": np.full(n, float(params.kappa))}.get(params.cost)
        if base is None:
            raise InvalidParams(f"unknown cost tag {params.cost!r}")
        cost = np.repeat(base[:, None], n_act, axis=1)
    else:
        cost = np.asarray(params.cost, dtype=float)
        if cost.shape != (n, n_act):
            raise InvalidParams(f"cost table must have shape {(n, n_act)}")
    return DtModel.from_dense(mats, cost, reference_state=0, closed=False)


def transience_partial_sums(params: BirthDeathDtParams, n_terms):
    """Partial sums of ``sum_n prod_{i<=n} mu(i)/lam(i)`` (first action)."""
    big = BirthDeathDtParams(**{**_asdict(params), "truncation": n_terms + 1})
    lam, mu = big.rates()
    ratios = mu[1:n_terms + 1, 0] / lam[1:n_terms + 1, 0]
    return np.cumsum(np.cumprod(ratios))


def birth_death_drift(params: BirthDeathDtParams):
    """``g(i) = sup_u |lam(i,u) sum_k k p_k - mu(i,u)|`` for ``i >= 1``."""
    lam, mu = params.rates()
    mean_jump = float(np.dot(np.arange(1, len(params.jumps) + 1), params.jumps))
    return np.abs(lam[1:] * mean_jump - mu[1:]).max(axis=1)


# --- birth-death, continuous time --------------------------------------------


@dataclass
class BirthDeathCtParams:
    """Linear birth-death rates ``lam*i + u`` up and ``mu*i + u`` down.

    States are the populations ``1..truncation`` stored at indices
    ``0..truncation-1``; population 1 is the reference.  From population 1
    the chain jumps to ``j >= 2`` at rate ``boundary_rate * 2^-(j-1)``.  The
    cost is ``cost_scale * min(i, M)/M + kappa * u`` or a constant ``kappa``
    when ``cost="constant"``.
    """

    lam: float = 1.0
    mu: float = 2.0
    controls: tuple = (0.0, 1.0)
    truncation: int = 128
    boundary_rate: float = 1.0
    theta: float = 0.1
    cost: str = "bounded"
    M: int = 32
    cost_scale: float = 1.0
    kappa: float = 0.05

    def __post_init__(self):
        if not self.mu > self.lam > 0:
            raise InvalidParams(f"need mu > lam > 0, got lam={self.lam}, mu={self.mu}")
        if not self.controls or any(u < 0 for u in self.controls):
            raise InvalidParams("controls must be nonnegative")
        self.controls = tuple(float(u) for u in self.controls)
        if self.truncation < 3:
            raise InvalidParams("truncation must be at least 3")
        if not self.boundary_rate > 0:
            raise InvalidParams("boundary rate must be positive")
        if not 0 < self.theta < math.log(2):
            raise InvalidParams("theta must lie in (0, log 2) so the boundary row has a finite V-moment")
        if self.cost not in ("bounded", "constant"):
            raise InvalidParams(f"unknown cost tag {self.cost!r}")

    @property
    def alpha(self):
        t = self.theta
        return -(self.mu * (math.exp(-t) - 1) + self.lam * (math.exp(t) - 1)) / 2


def build_birth_death_ct(params: BirthDeathCtParams | dict | None = None):
    """Rate model plus the certificate ``V = exp(theta i)``, ``ell = alpha i`` (mode b)."""
    params = _coerce(BirthDeathCtParams, params)
    if not params.alpha > 0:
        raise InvalidParams(f"theta={params.theta} gives alpha <= 0; pick a smaller theta")
    n = params.truncation
    pop = np.arange(1, n + 1, dtype=float)
    n_act = len(params.controls)
    mats = np.zeros((n_act, n, n))
    tail = params.boundary_rate * 2.0 ** -np.arange(1, n)
    for a, u in enumerate(params.controls):
        mats[a, 0, 1:] = tail
        mats[a, 0, 0] = -params.boundary_rate
        for k in range(1, n):
            i = pop[k]
            up, down = params.lam * i + u, params.mu * i + u
            mats[a, k, k - 1] = down
            if k + 1 < n:
                mats[a, k, k + 1] = up
            mats[a, k, k] = -(up + down)
    u = np.asarray(params.controls)[None, :]
    if params.cost == "bounded":
        cost = params.cost_scale * np.minimum(pop, params.M)[:, None] / params.M + params.kappa * u
    else:
        cost = np.full((n, n_act), float(params.kappa))
    model = CtModel.from_dense(mats, cost, reference_state=0, closed=False)

    V = np.exp(params.theta * pop)
    ell = params.alpha * pop
    q = model.exit_rates()
    explosion = ExplosionCert(V_tilde=pop, C0=1.0, C1=float(np.max(q / pop)),
                              C2=2.0 * params.boundary_rate)
    tail_index = params.M - 1 if params.cost == "bounded" else 0
    cert = LyapunovCertCt(V, "b", frozenset(), 1.0, ell=ell, tail_index=tail_index,
                          explosion=explosion)
    return model, _fit_K(model, cert)


# --- random finite instances ---------------------------------------------------


def _feasible_mask(rng, n, max_actions):
    counts = rng.integers(1, max_actions + 1, size=n)
    return np.arange(max_actions)[None, :] < counts[:, None]


def random_dt(rng, size=None, max_actions=3, cost_high=1.0, sizes=(3, 6)) -> DtModel:
    """Closed DT model with strictly positive rows and ``U[0, cost_high]`` costs."""
    rng = np.random.default_rng(rng)
    n = int(rng.integers(sizes[0], sizes[1] + 1)) if size is None else int(size)
    feasible = _feasible_mask(rng, n, max_actions)
    mats = rng.uniform(0.05, 1.0, size=(max_actions, n, n))
    mats /= mats.sum(axis=2, keepdims=True)
    cost = rng.uniform(0.0, cost_high, size=(n, max_actions))
    return DtModel.from_dense(mats, cost, feasible=feasible)


def random_ct(rng, size=None, max_actions=3, cost_high=1.0, sizes=(3, 6)) -> CtModel:
    """Conservative CT model with off-diagonal rates ``U(0, 1]`` and ``U[0, cost_high]`` costs."""
    rng = np.random.default_rng(rng)
    n = int(rng.integers(sizes[0], sizes[1] + 1)) if size is None else int(size)
    feasible = _feasible_mask(rng, n, max_actions)
    mats = 1.0 - rng.uniform(0.0, 1.0, size=(max_actions, n, n))
    for a in range(max_actions):
        np.fill_diagonal(mats[a], 0.0)
        np.fill_diagonal(mats[a], -mats[a].sum(axis=1))
    cost = rng.uniform(0.0, cost_high, size=(n, max_actions))
    return CtModel.from_dense(mats, cost, feasible=feasible)


def constant_cost(model, kappa):
    """Same kernel with ``c = kappa`` everywhere."""
    return model.with_cost(np.full(model.cost.shape, float(kappa)))


# --- registry ------------------------------------------------------------------


def _asdict(obj):
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


def _coerce(cls, params):
    if params is None:
        return cls()
    if isinstance(params, cls):
        return params
    known = {f.name for f in fields(cls)}
    unknown = set(params) - known
    if unknown:
        raise InvalidParams(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    return cls(**params)


def _random_builder(fn):
    def build(params):
        params = dict(params or {})
        seed = params.pop("seed", 0)
        return fn(seed, **params), None
    return build


PARAMETRIC = {
    "queueing_dt": lambda p: build_queueing_dt(p),
    "birth_death_dt": lambda p: (build_birth_death_dt(p), None),
    "birth_death_ct": lambda p: build_birth_death_ct(p),
    "random_dt": _random_builder(random_dt),
    "random_ct": _random_builder(random_ct),
}


def build_parametric(name, params=None, truncation=None):
    """Build a registered model by name; returns ``(model, certificate or None)``."""
    if name not in PARAMETRIC:
        raise InvalidParams(f"unknown parametric model {name!r}; known: {sorted(PARAMETRIC)}")
    params = dict(params or {})
    if truncation is not None:
        key = "size" if name.startswith("random") else "truncation"
        params[key] = int(truncation)
    return PARAMETRIC[name](params)
