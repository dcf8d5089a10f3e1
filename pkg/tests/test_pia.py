from __future__ import annotations

import math

import numpy as np
import pytest

from riskeig import examples
from riskeig.dirichlet import DirichletDomain
from riskeig.model import Policy
from riskeig.oracle import brute_force_lambda_star, dense_policy_value
from riskeig.pia import (PiaConfig, compute_theta, improve_policy, policy_eigenpair, run_pia,
                         stationary_distribution, twisted_kernel)

from conftest import dense_dt


def test_single_state_policy():
    m = dense_dt([[[1.0]], [[1.0]]], [[0.25, 0.75]], closed=True)
    assert policy_eigenpair(m, Policy([1])).rho == pytest.approx(0.75, abs=1e-13)


def test_swap_policy_pair(swap_dt):
    pair = policy_eigenpair(swap_dt, Policy([0, 0]))
    assert pair.rho == pytest.approx(0.6, abs=1e-12)
    assert np.allclose(pair.psi, [1.0, math.exp((1.0 - 0.2) / 2)], rtol=1e-10)


def test_policy_value_matches_dense(rng):
    m = examples.random_dt(rng, size=4)
    pol = Policy(rng.integers(0, m.n_actions))
    assert policy_eigenpair(m, pol).rho == pytest.approx(dense_policy_value(m, pol), abs=1e-10)


def test_incumbent_already_optimal_is_kept(rng):
    m = examples.random_dt(rng, size=5)
    best = brute_force_lambda_star(m).policy
    pair = policy_eigenpair(m, best)
    assert improve_policy(m, pair, incumbent=best) == best


def test_identical_actions_keep_incumbent(rng):
    base = examples.random_dt(rng, size=4, max_actions=1)
    mat = base.matrix(0).toarray()
    m = dense_dt([mat, mat], np.repeat(base.cost[:, :1], 2, axis=1), closed=True)
    inc = Policy([1, 0, 1, 1])
    assert improve_policy(m, policy_eigenpair(m, inc), incumbent=inc) == inc


def test_one_improving_state_changes_only_there():
    rng = np.random.default_rng(3)
    P = rng.uniform(0.1, 1, (4, 4))
    P /= P.sum(axis=1, keepdims=True)
    cost = np.array([[0.5, 0.5], [0.2, 0.2], [0.7, 0.3], [0.1, 0.1]])
    m = dense_dt([P, P], cost, closed=True)
    inc = Policy.constant(4)
    new = improve_policy(m, policy_eigenpair(m, inc), incumbent=inc)
    assert new == Policy([0, 0, 1, 0])


def test_theta_zero_when_policy_unchanged(rng):
    m = examples.random_dt(rng, size=5)
    pol = Policy(rng.integers(0, m.n_actions))
    theta = compute_theta(m, policy_eigenpair(m, pol), pol)
    assert np.max(np.abs(theta)) < 1e-12


def test_theta_bounds_dt_and_ct(rng):
    for _ in range(10):
        m = examples.random_dt(rng)
        pair = policy_eigenpair(m, Policy.constant(m.size))
        theta = compute_theta(m, pair, improve_policy(m, pair))
        assert theta.min() >= -1e-10 and theta.max() <= 1 + 1e-10
        c = examples.random_ct(rng)
        pol = Policy.constant(c.size)
        pair = policy_eigenpair(c, pol)
        new = improve_policy(c, pair)
        theta = compute_theta(c, pair, new)
        q = -c.diagonal()[np.arange(c.size), new.as_array()]
        assert theta.min() >= -1e-10
        assert np.all(theta <= pair.rho + q + 1e-10)


def test_start_at_optimum_terminates(rng):
    m = examples.random_dt(rng, size=5)
    best = brute_force_lambda_star(m).policy
    trace = run_pia(m, PiaConfig(init_policy=best))
    assert trace.iterates[1].lambda_k == pytest.approx(trace.iterates[0].lambda_k, abs=1e-12)
    assert trace.iterates[1].policy_changes == 0
    assert len(trace.iterates) == 2


@pytest.mark.parametrize("kind", ["dt", "ct"])
def test_matches_oracle(kind, rng):
    build = examples.random_dt if kind == "dt" else examples.random_ct
    for _ in range(5):
        m = build(rng, size=5 if kind == "dt" else 4)
        trace = run_pia(m)
        assert trace.final_lambda == pytest.approx(brute_force_lambda_star(m).lambda_star, abs=1e-8)


@pytest.mark.parametrize("build", [examples.random_dt, examples.random_ct])
def test_twisted_constant_V_recovers_kernel(build, rng):
    m = build(rng, size=4)
    pol = Policy.constant(4)
    pair = policy_eigenpair(m, pol)
    pair.psi = np.full(m.size, 3.0)
    tw = twisted_kernel(m, pair, pol)
    assert np.array_equal(tw.matrix(0).toarray(), m.policy_matrix(pol))


def test_twisted_swap_stays_swap(swap_dt):
    pair = policy_eigenpair(swap_dt, Policy([0, 0]))
    pair.psi = np.array([1.0, 5.0])
    tw = twisted_kernel(swap_dt, pair, Policy([0, 0])).matrix(0).toarray()
    assert np.array_equal(tw, [[0.0, 1.0], [1.0, 0.0]])


def test_twisted_rows_and_stationary_law(rng):
    m = examples.random_dt(rng, size=4)
    pol = Policy.constant(4)
    tw = twisted_kernel(m, policy_eigenpair(m, pol), pol)
    assert np.allclose(tw.matrix(0).toarray().sum(axis=1), 1.0, atol=1e-12)
    pi = stationary_distribution(tw)
    assert np.all(pi > 0) and pi.sum() == pytest.approx(1.0)


def test_truncated_pia_notes_leak():
    model, _ = examples.build_queueing_dt({"truncation": 64})
    trace = run_pia(model, PiaConfig(truncation=32))
    assert any("kills mass" in n for n in trace.notes)
    lams = [it.lambda_k for it in trace.iterates]
    assert all(b <= a + 1e-12 for a, b in zip(lams, lams[1:]))
