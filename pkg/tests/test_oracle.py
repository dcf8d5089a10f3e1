from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from riskeig import examples
from riskeig.errors import TooManyPolicies
from riskeig.model import Policy
from riskeig.oracle import (brute_force_lambda_star, count_policies, enumerate_policies,
                            perron_root, policy_value_matrix)

from conftest import dense_ct, dense_dt


def _cubic_largest_root(A):
    # characteristic polynomial t^3 - tr t^2 + m2 t - det, solved with numpy.roots
    tr = np.trace(A)
    m2 = 0.5 * (tr ** 2 - np.trace(A @ A))
    det = np.linalg.det(A)
    roots = np.roots([1.0, -tr, m2, -det])
    return max(r.real for r in roots if abs(r.imag) < 1e-9)


def test_swap_matrix_root():
    res = perron_root(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert res.root == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(res.right_vector, [1.0, 1.0])


def test_scalar_root():
    assert perron_root(np.array([[2.0]])).root == pytest.approx(2.0, rel=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_positive_3x3_matches_cubic(seed):
    A = np.random.default_rng(seed).uniform(0.01, 1.0, (3, 3))
    assert perron_root(A).root == pytest.approx(_cubic_largest_root(A), abs=1e-10)


def test_counting():
    two = dense_dt(np.ones((2, 2, 2)) / 2, np.zeros((2, 2)), closed=True)
    assert [p.action_index for p in enumerate_policies(two)] == [(0, 0), (0, 1), (1, 0), (1, 1)]
    one = dense_dt(np.ones((3, 1, 1)), np.zeros((1, 3)), closed=True)
    assert count_policies(one) == 3
    feas = np.arange(3)[None, :] < np.array([2, 1, 3, 2, 1])[:, None]
    five = dense_dt(np.ones((3, 5, 5)) / 5, np.zeros((5, 3)), closed=True, feasible=feas)
    assert count_policies(five) == 12
    assert len(list(enumerate_policies(five))) == 12


def test_cap():
    m = dense_dt(np.ones((2, 3, 3)) / 3, np.zeros((3, 2)), closed=True)
    with pytest.raises(TooManyPolicies):
        brute_force_lambda_star(m, cap=7)


def test_identical_actions_single_value(rng):
    base = examples.random_dt(rng, size=4, max_actions=1)
    mat = base.matrix(0).toarray()
    m = dense_dt([mat, mat], np.repeat(base.cost[:, :1], 2, axis=1), closed=True)
    res = brute_force_lambda_star(m)
    expected = math.log(max(abs(np.linalg.eigvals(np.exp(base.cost[:, :1]) * mat))))
    assert all(row.value == pytest.approx(expected, abs=1e-12) for row in res.table)


def test_stay_versus_move():
    # state 0: stay (cost 0.5) or move to 1 (cost 0); state 1 returns at cost 1
    mats = np.zeros((2, 2, 2))
    mats[0, 0, 0] = 1.0
    mats[1, 0, 1] = 1.0
    mats[0, 1, 0] = 1.0
    feas = np.array([[True, True], [True, False]])
    m = dense_dt(mats, [[0.5, 0.0], [1.0, 0.0]], closed=True, feasible=feas)
    res = brute_force_lambda_star(m)
    assert res.lambda_star == pytest.approx(0.5, abs=1e-14)
    assert res.value_of(Policy([0, 0])) == pytest.approx(0.5, abs=1e-14)
    assert res.value_of(Policy([1, 0])) == pytest.approx(0.5, abs=1e-14)


def test_ct_two_state_closed_form():
    q1, q2 = [0.7, 2.0], [1.3]
    c0, c1 = [0.4, 0.1], [0.9]
    mats = np.zeros((2, 2, 2))
    for a in range(2):
        mats[a, 0] = [-q1[a], q1[a]]
    mats[0, 1] = [q2[0], -q2[0]]
    feas = np.array([[True, True], [True, False]])
    cost = np.array([[c0[0], c0[1]], [c1[0], 0.0]])
    m = dense_ct(mats, cost, closed=True, feasible=feas)
    vals = []
    for a in range(2):
        d0, d1 = c0[a] - q1[a], c1[0] - q2[0]
        t, d = d0 + d1, d0 - d1
        vals.append(t / 2 + math.sqrt((d / 2) ** 2 + q1[a] * q2[0]))
    assert brute_force_lambda_star(m).lambda_star == pytest.approx(min(vals), abs=1e-12)


def test_threads_do_not_change_result(rng):
    m = examples.random_dt(rng, size=6)
    a = brute_force_lambda_star(m, threads=1)
    b = brute_force_lambda_star(m, threads=4)
    assert [(r.policy, r.value) for r in a.table] == [(r.policy, r.value) for r in b.table]


def test_value_matrix_ct_adds_cost(rng):
    m = examples.random_ct(rng, size=3, max_actions=1)
    pol = Policy.constant(3)
    assert np.allclose(policy_value_matrix(m, pol),
                       m.matrix(0).toarray() + np.diag(m.cost[:, 0]))
