"""Monte Carlo estimates of the finite-horizon risk-sensitive cost of a stationary policy.

The estimator is ``(1/T) log mean_p exp(S_p)`` with ``S_p`` the cost
accumulated along path ``p``, evaluated in log space.  It is a
finite-horizon approximation of the ergodic value and is biased low for
small path counts (Jensen); the reported interval comes from batch means
and has no coverage guarantee.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .errors import InvalidPolicy, LeakyKernel

LEAK_TOL = 1e-9
DOMINANCE = 0.5
ROUND_CHUNK = 64
REF_FRACTION = 0.5
FP_PAD = 1e-12


@dataclass
class SimConfig:
    horizon: float
    paths: int
    seed: int = 0
    start_state: int = 0
    batch_count: int = 32

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.batch_count < 2:
            raise ValueError("need at least two batches for an interval")
        if self.paths < self.batch_count:
            raise ValueError("paths must be at least batch_count")


@dataclass
class SimEstimate:
    point: float
    ci_low: float
    ci_high: float
    degenerate: bool
    paths: int
    horizon: float
    seed: int
    mean_path_cost: float
    max_weight: float
    increment: float = math.nan
    ess: float = math.nan

    @property
    def effective_sample_warning(self):
        return self.degenerate

    def contains(self, value):
        return self.ci_low <= value <= self.ci_high

    def to_dict(self):
        return {"point": self.point, "ci_low": self.ci_low, "ci_high": self.ci_high,
                "paths": self.paths, "horizon": self.horizon, "seed": self.seed,
                "degenerate": self.degenerate, "mean_path_cost": self.mean_path_cost,
                "max_weight": self.max_weight, "increment": self.increment, "ess": self.ess}


def _batch_sizes(config):
    base, extra = divmod(config.paths, config.batch_count)
    return [base + (b < extra) for b in range(config.batch_count)]


def _streams(config):
    """One Philox generator per batch, keyed by ``(seed, batch)``."""
    return [np.random.Generator(np.random.Philox(np.random.SeedSequence([config.seed, b])))
            for b in range(config.batch_count)]


def _policy_rows(model, policy):
    try:
        policy.validate(model)
    except InvalidPolicy:
        raise
    except Exception as exc:
        raise InvalidPolicy(str(exc)) from None
    mat = model.policy_matrix(policy)
    cost = model.policy_cost(policy)
    return mat, cost


class _Sampler:
    """Inverse-CDF draw of the next state for a batch of paths.

    Small state spaces count threshold crossings column by column; larger
    ones use one search over the row CDFs laid end to end.
    """

    def __init__(self, rows):
        cum = np.cumsum(rows, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            cum = cum / cum[:, -1:]
        cum[:, -1] = 1.0
        self.n = cum.shape[1]
        if self.n <= 16:
            self.cols = [np.ascontiguousarray(cum[:, k]) for k in range(self.n - 1)]
        else:
            self.flat = (cum + np.arange(self.n)[:, None]).ravel()

    def __call__(self, state, u):
        if self.n <= 16:
            idx = np.zeros(state.size, dtype=np.intp)
            for col in self.cols:
                idx += u >= col[state]
            return idx
        idx = np.searchsorted(self.flat, state + u, side="right") - state * self.n
        return np.minimum(idx, self.n - 1)


def _estimate(S, S0, T0, sizes, config):
    """Point estimate plus a batch jackknife interval for the ergodic value.

    The point is ``(1/T) log mean exp(S_T)``.  Its finite-horizon bias is
    ``K/T`` with ``K`` depending on the start state; the increment estimate
    ``[log mean exp(S_T) - log mean exp(S_T0)] / (T - T0)`` with
    ``T0 = T/2`` cancels ``K``.  Leaving out one batch at a time gives a
    jackknife bias correction and standard error for the increment
    estimate.  The interval spans the point and the corrected increment
    estimate, widened by ``t_{0.975, B-1}`` standard errors.  When the
    effective sample size of the weights is a small fraction of ``N`` the
    standard error is itself unreliable and the interval undercovers.
    """
    T = float(config.horizon)
    N = S.size
    bounds = np.cumsum([0] + sizes)
    parts = list(zip(bounds[:-1], bounds[1:]))
    lse_T = np.array([logsumexp(S[lo:hi]) for lo, hi in parts])
    lse_0 = np.array([logsumexp(S0[lo:hi]) for lo, hi in parts])
    total_T, total_0 = logsumexp(lse_T), logsumexp(lse_0)
    point = (total_T - math.log(N)) / T
    span = T - T0
    full = (total_T - total_0) / span
    B = len(parts)
    keep = ~np.eye(B, dtype=bool)
    loo = np.array([(logsumexp(lse_T[k]) - logsumexp(lse_0[k])) / span for k in keep])
    increment = B * full - (B - 1) * loo.mean()
    se = math.sqrt((B - 1) / B * np.sum((loo - loo.mean()) ** 2))
    # a few ulps of slack so deterministic cases (se = 0) still cover the exact value
    half = stats.t.ppf(0.975, B - 1) * se + FP_PAD * max(1.0, abs(point))
    max_weight = float(math.exp(S.max() - total_T))
    # Kish effective sample size of the exponential weights
    ess = float(math.exp(2 * total_T - logsumexp(2 * S)))
    return SimEstimate(point=float(point), ci_low=float(min(point, increment) - half),
                       ci_high=float(max(point, increment) + half),
                       degenerate=max_weight > DOMINANCE, paths=N, horizon=config.horizon,
                       seed=config.seed, mean_path_cost=float(S.mean() / T),
                       max_weight=max_weight, increment=float(increment), ess=ess)


def simulate_dt(model, policy, config: SimConfig) -> SimEstimate:
    """``N`` paths of ``T`` steps under ``policy``; cost summed over ``t = 0..T-1``."""
    if model.kind != "dt":
        raise ValueError("simulate_dt needs a discrete-time model")
    mat, cost = _policy_rows(model, policy)
    leak = 1.0 - mat.sum(axis=1)
    if np.any(np.abs(leak) > LEAK_TOL):
        raise LeakyKernel(f"policy rows leak up to {np.abs(leak).max():.3g}")
    T = int(config.horizon)
    if T != config.horizon:
        raise ValueError("discrete-time horizon must be an integer")
    sample = _Sampler(mat)
    sizes = _batch_sizes(config)
    # draw each batch's uniforms from its own stream, then run all paths together
    u = np.concatenate([g.random((T, n)) for g, n in zip(_streams(config), sizes)], axis=1)
    state = np.full(config.paths, int(config.start_state), dtype=np.intp)
    S = np.zeros(config.paths)
    T0 = int(T * REF_FRACTION)
    S0 = S.copy()
    for t in range(T):
        if t == T0:
            S0 = S.copy()
        S += cost[state]
        state = sample(state, u[t])
    return _estimate(S, S0, T0, sizes, config)


def simulate_ct(model, policy, config: SimConfig) -> SimEstimate:
    """Exact jump-chain simulation on ``[0, T]``; cost integrated over sojourns."""
    if model.kind != "ct":
        raise ValueError("simulate_ct needs a continuous-time model")
    mat, cost = _policy_rows(model, policy)
    leak = mat.sum(axis=1)
    if np.any(np.abs(leak) > LEAK_TOL):
        raise LeakyKernel(f"policy rows are not conservative (up to {np.abs(leak).max():.3g})")
    rates = -np.diag(mat).copy()
    jumps = mat.copy()
    np.fill_diagonal(jumps, 0.0)
    absorbing = rates <= 0
    jumps[absorbing, 0] = 1.0  # never used; keeps the CDF well defined
    sample = _Sampler(jumps)
    T = float(config.horizon)
    sizes = _batch_sizes(config)
    streams = _streams(config)
    state = np.full(config.paths, int(config.start_state), dtype=np.intp)
    clock = np.zeros(config.paths)
    S = np.zeros(config.paths)
    # absorbing states hold for longer than any horizon
    inv_rate = np.where(absorbing, 1e300, 1.0 / np.where(absorbing, 1.0, rates))
    T0 = T * REF_FRACTION
    S0 = np.zeros(config.paths)
    rounds = 0
    ref_open = True
    while clock.min() < T:
        # each batch stream emits two uniforms per path per round, finished or not,
        # drawn ROUND_CHUNK rounds at a time
        if rounds % ROUND_CHUNK == 0:
            chunk = np.concatenate([g.random((ROUND_CHUNK, 2, n)) for g, n in zip(streams, sizes)],
                                   axis=2)
            expo = -np.log1p(-chunk[:, 0])
        k = rounds % ROUND_CHUNK
        rounds += 1
        stay = np.minimum(expo[k] * inv_rate[state], T - clock)
        c = cost[state]
        if ref_open:
            S0 += np.clip(T0 - clock, 0.0, stay) * c
        S += stay * c
        clock += stay
        ref_open = clock.min() < T0
        state = sample(state, chunk[k, 1])
    return _estimate(S, S0, T0, sizes, config)


def simulate(model, policy, config: SimConfig) -> SimEstimate:
    if model.kind == "dt":
        return simulate_dt(model, policy, config)
    return simulate_ct(model, policy, config)
