"""Acceptance criteria 1-11, each at its stated tolerance.

Every test prints one ``criterion N: PASS|FAIL`` line; the lines are
collected again in the terminal summary.
"""

from __future__ import annotations

import time

import numpy as np
import pytest

from riskeig import examples
from riskeig.dirichlet import DirichletDomain
from riskeig.ladder import LadderConfig, solve_ladder
from riskeig.model import LyapunovCertDt, Policy, check_lyapunov
from riskeig.montecarlo import SimConfig, simulate
from riskeig.oracle import brute_force_lambda_star
from riskeig.pia import PiaConfig, run_pia, twisted_kernel
from riskeig.verify import verify_optimal_policy

from conftest import report_criterion

DT_SEEDS = range(100, 150)
CT_SEEDS = range(200, 250)


def _instances(kind):
    if kind == "dt":
        return [examples.random_dt(s) for s in DT_SEEDS]
    return [examples.random_ct(s) for s in CT_SEEDS]


def _solve_all(kind):
    """Oracle, ladder and PIA on every instance; returns rows and the wall time."""
    models = _instances(kind)
    t0 = time.perf_counter()
    rows = []
    for m in models:
        rows.append((m, brute_force_lambda_star(m), solve_ladder(m), run_pia(m)))
    return rows, time.perf_counter() - t0


_CACHE = {}


def solved(kind):
    if kind not in _CACHE:
        _CACHE[kind] = _solve_all(kind)
    return _CACHE[kind]


def _agreement(number, kind):
    rows, elapsed = solved(kind)
    worst_ladder = max(abs(lad.lambda_star - orc.lambda_star) for _, orc, lad, _ in rows)
    worst_pia = max(abs(tr.final_lambda - orc.lambda_star) for _, orc, _, tr in rows)
    bad_policy = sum(lad.policy not in orc.optimal_policies(1e-8)
                     or tr.final_policy not in orc.optimal_policies(1e-8)
                     for _, orc, lad, tr in rows)
    ok = worst_ladder < 1e-8 and worst_pia < 1e-8 and bad_policy == 0 and elapsed < 5.0
    report_criterion(number, ok, f"{kind.upper()} {len(rows)} instances: max |ladder-oracle| "
                     f"{worst_ladder:.2e}, max |pia-oracle| {worst_pia:.2e}, "
                     f"non-optimal policies {bad_policy}, {elapsed:.2f} s")
    return ok


def test_criterion_01_oracle_agreement_dt():
    assert _agreement(1, "dt")


def test_criterion_02_oracle_agreement_ct():
    assert _agreement(2, "ct")


def test_criterion_03_pia_monotone_and_theta():
    worst_step, theta_lo, theta_hi, worst_terminal = -np.inf, np.inf, -np.inf, -np.inf
    for kind in ("dt", "ct"):
        for _, _, _, tr in solved(kind)[0]:
            lams = [it.lambda_k for it in tr.iterates]
            worst_step = max(worst_step, max(np.diff(lams), default=-np.inf))
            worst_terminal = max(worst_terminal, tr.iterates[-1].max_theta)
            if kind == "dt":
                theta_lo = min(theta_lo, tr.theta_range[0])
                theta_hi = max(theta_hi, tr.theta_range[1])
    ok = worst_step <= 1e-12 and theta_lo >= -1e-10 and theta_hi <= 1 + 1e-10 \
        and worst_terminal <= 1e-8
    report_criterion(3, ok, f"largest lambda increase {worst_step:.2e}, DT theta range "
                     f"[{theta_lo:.3g}, {theta_hi:.3g}], terminal max theta {worst_terminal:.2e}")
    assert ok


def test_criterion_04_rungs_below_oracle():
    worst = -np.inf
    for m, orc, _, _ in solved("dt")[0]:
        rep = solve_ladder(m, LadderConfig(rung_sizes=list(range(1, m.size + 1))))
        worst = max(worst, max(r.rho - orc.lambda_star for r in rep.rungs))
    ok = worst <= 1e-8
    report_criterion(4, ok, f"max rho_n - lambda* over all rungs {worst:.2e}")
    assert ok


def test_criterion_05_nonnegative_and_shift():
    lowest, shift_err, psi_err = np.inf, 0.0, 0.0
    for kind in ("dt", "ct"):
        for m, _, lad, _ in solved(kind)[0]:
            lowest = min(lowest, lad.lambda_star)
            moved = solve_ladder(m.shifted(1.0))
            shift_err = max(shift_err, abs(moved.lambda_star - lad.lambda_star - 1.0))
            psi_err = max(psi_err, float(np.max(np.abs(moved.psi_star - lad.psi_star))))
    ok = lowest >= -1e-8 and shift_err <= 1e-9 and psi_err <= 1e-8
    report_criterion(5, ok, f"min lambda* {lowest:.3g}, shift error {shift_err:.2e}, "
                     f"psi change {psi_err:.2e}")
    assert ok


def test_criterion_06_uniqueness():
    lam_err, psi_err = 0.0, 0.0
    for m, _, lad, tr in solved("dt")[0]:
        other = solve_ladder(m, LadderConfig(rung_sizes=list(range(2, m.size + 1))))
        last = Policy(np.asarray(m.n_actions) - 1)
        tr2 = run_pia(m, PiaConfig(init_policy=last))
        ref = lad.psi_star / lad.psi_star[m.reference_state]
        watch = np.asarray(lad.watch_set)
        for lam, psi in ((other.lambda_star, other.psi_star),
                         (tr.final_lambda, tr.final_pair.psi),
                         (tr2.final_lambda, tr2.final_pair.psi)):
            lam_err = max(lam_err, abs(lam - lad.lambda_star))
            psi = psi / psi[m.reference_state]
            psi_err = max(psi_err, float(np.max(np.abs(psi[watch] - ref[watch]))))
    ok = lam_err <= 1e-7 and psi_err <= 1e-6
    report_criterion(6, ok, f"max lambda spread {lam_err:.2e}, max psi spread {psi_err:.2e}")
    assert ok


def test_criterion_07_verification_iff():
    used, mismatches, swept = 0, 0, 0
    for m, orc, lad, _ in solved("dt")[0]:
        values = sorted(row.value for row in orc.table)
        if len(values) < 2 or values[1] - values[0] < 1e-6:
            continue
        used += 1
        for row in orc.table:
            res = verify_optimal_policy(m, row.policy, lad.lambda_star, lad.psi_star)
            swept += 1
            if row.policy == orc.policy:
                mismatches += res.optimal is not True
            else:
                mismatches += not (res.optimal is False and res.gap is not None and res.gap > 0)
        if used == 20:
            break
    ok = used == 20 and mismatches == 0
    report_criterion(7, ok, f"{used} instances, {swept} policies swept, {mismatches} mismatches")
    assert ok


def _mc_instances():
    """Five DT and five CT instances: seeds 1000-1004, sizes 3-4, costs U[0, 0.5]."""
    chosen = []
    for kind, build in (("dt", examples.random_dt), ("ct", examples.random_ct)):
        for seed in range(1000, 1005):
            m = build(seed, cost_high=0.5, sizes=(3, 4))
            chosen.append((kind, seed, m, brute_force_lambda_star(m)))
    return chosen


@pytest.mark.slow
def test_criterion_08_monte_carlo():
    t0 = time.perf_counter()
    instances = _mc_instances()
    worst, lines = 20, []
    for kind, seed, m, orc in instances:
        hits = sum(simulate(m, orc.policy, SimConfig(200, 10_000, seed=s)).contains(orc.lambda_star)
                   for s in range(20))
        worst = min(worst, hits)
        lines.append(f"{kind}{seed}:{hits}")
    elapsed = time.perf_counter() - t0
    ok = worst >= 18 and elapsed < 60
    report_criterion(8, ok, f"coverage per instance (of 20) {' '.join(lines)}, {elapsed:.1f} s")
    assert ok


def test_criterion_09_queueing_ladder():
    t0 = time.perf_counter()
    model, cert = examples.build_queueing_dt({"theta": 0.5, "p": 0.5, "cost": "bounded",
                                              "truncation": 512})
    rep = solve_ladder(model, LadderConfig(cert=cert))
    lin = LyapunovCertDt(np.arange(512) + 1.0, "a", cert.K, cert.C_hat, beta=0.25)
    lyap = check_lyapunov(model, lin).passed
    elapsed = time.perf_counter() - t0
    step = abs(rep.rungs[-1].rho - rep.rungs[-2].rho)
    ok = step < 1e-6 and lyap and elapsed < 10
    report_criterion(9, ok, f"final rung step {step:.2e}, Lyapunov V=i+1 beta=0.25 "
                     f"{'passes' if lyap else 'fails'}, {elapsed:.2f} s")
    assert ok


def test_criterion_10_constant_cost():
    kappa = 0.37
    lam_err, psi_err = 0.0, 0.0
    for kind in ("dt", "ct"):
        for m in _instances(kind)[:20]:
            flat = examples.constant_cost(m, kappa)
            lad = solve_ladder(flat)
            tr = run_pia(flat)
            lam_err = max(lam_err, abs(lad.lambda_star - kappa), abs(tr.final_lambda - kappa))
            psi_err = max(psi_err, float(np.max(np.abs(lad.psi_star - 1))),
                          float(np.max(np.abs(tr.final_pair.psi - 1))))
    ok = lam_err <= 1e-9 and psi_err <= 1e-8
    report_criterion(10, ok, f"max |lambda - kappa| {lam_err:.2e}, max |psi - 1| {psi_err:.2e}")
    assert ok


def test_criterion_11_twisted_kernels():
    row_err, exact = 0.0, True
    for kind in ("dt", "ct"):
        for m, _, _, tr in solved(kind)[0]:
            pair, pol = tr.final_pair, tr.final_policy
            k = twisted_kernel(m, pair, pol).matrix(0).toarray()
            row_err = max(row_err, float(np.max(np.abs(k.sum(axis=1) - (1.0 if kind == "dt" else 0.0)))))
            pair.psi = np.full(m.size, 2.5)
            flat = twisted_kernel(m, pair, pol).matrix(0).toarray()
            exact &= bool(np.array_equal(flat, m.policy_matrix(pol, DirichletDomain.full(m).as_array())))
    ok = row_err <= 1e-12 and exact
    report_criterion(11, ok, f"max row-sum error {row_err:.2e}, constant V recovers kernel "
                     f"{'exactly' if exact else 'NOT exactly'}")
    assert ok
