"""Acceptance suite: one test per release criterion, each printing a PASS
line with its headline numbers (run with ``pytest -s`` to see them live).

Every test is deterministic: all randomness flows from pinned seeds.
"""

import time

import numpy as np
import pytest

from deepteams import (Policy, aggregate, deep_project, empirical_gradient,
                       estimate_risk_neutral, evaluate, example1, example2,
                       expand_policy, gauge_residual, gradient, learn,
                       noise_covariance, optimal_policy, policy_distance,
                       rollout, run, solve, solve_weakly_coupled, team_cost,
                       zero_policy)
from deepteams.model import closed_loop_radii
from deepteams.pg_exact import random_stable_policy
from conftest import random_field, random_team


def _flatten(blocks):
    return np.concatenate([np.asarray(b).ravel() for b in blocks])


def test_criterion_1_riccati_oracle_closed_forms():
    t0 = time.perf_counter()
    sol = solve(example2(), lam=0.0)
    assert abs(sol.P[0][0, 0] - 2.0) <= 1e-9
    assert abs(sol.gains[0][0, 0] - 0.5) <= 1e-9
    p_deep_ref = (3.0 + np.sqrt(45.0)) / 2.0
    assert abs(sol.P_deep[0, 0] - p_deep_ref) <= 1e-9
    assert abs(sol.deep_gain[0, 0] - p_deep_ref / (3.0 + p_deep_ref)) <= 1e-9
    elapsed = time.perf_counter() - t0
    assert elapsed < 1.0
    print(f"\nACCEPTANCE 1 PASS - Riccati closed forms: P_local=2, gain=0.5, "
          f"P_deep={sol.P_deep[0, 0]:.10f}, deep_gain="
          f"{sol.deep_gain[0, 0]:.10f} ({elapsed:.3f} s)")


def test_criterion_2_weakly_coupled_equivalence():
    t0 = time.perf_counter()
    worst = 0.0
    for k in range(50):
        rng = np.random.default_rng(3000 + k)
        lam = 0.0 if k % 2 == 0 else 0.04
        m = random_team(rng, S=int(rng.integers(1, 3)), weakly=True,
                        max_f=2, max_dx=3, max_du=3, lam=lam)
        full = solve(m, lam)
        dec = solve_weakly_coupled(m, lam)
        err = np.linalg.norm(full.deep_gain - dec.deep_gain)
        err = max(err, max(np.linalg.norm(a - b)
                           for a, b in zip(full.gains, dec.gains)))
        err = max(err, np.linalg.norm(full.P_deep - dec.P_deep)
                  / max(1.0, np.linalg.norm(full.P_deep)))
        worst = max(worst, err)
        assert err <= 1e-8
    elapsed = time.perf_counter() - t0
    assert elapsed < 30.0
    print(f"\nACCEPTANCE 2 PASS - 50 weakly coupled models: decomposed vs "
          f"full solve, worst gain/value deviation {worst:.2e} ({elapsed:.1f} s)")


def test_criterion_3_gradient_fidelity():
    t0 = time.perf_counter()
    worst = 0.0
    checked = 0
    for preset, maker in (("example1", example1), ("example2", example2)):
        m = maker()
        for lam in (0.0, 0.1):
            for k in range(20):
                p = random_stable_policy(m, seed=4000 + 100 * checked + k,
                                         lam=lam)
                g = _flatten(gradient(m, p, lam=lam).blocks())
                h = 1e-6
                fd = []
                blocks = p.blocks()
                for b_idx in range(len(blocks)):
                    for i in range(blocks[b_idx].shape[0]):
                        for j in range(blocks[b_idx].shape[1]):
                            vals = []
                            for sgn in (1.0, -1.0):
                                pert = [x.copy() for x in blocks]
                                pert[b_idx][i, j] += sgn * h
                                q = Policy(theta=tuple(pert[:-1]),
                                           theta_bar=pert[-1])
                                vals.append(evaluate(m, q, lam=lam).cost)
                            fd.append((vals[0] - vals[1]) / (2 * h))
                fd = np.array(fd)
                rel = np.linalg.norm(g - fd) / np.linalg.norm(fd)
                worst = max(worst, rel)
                assert rel <= 1e-4
            checked += 1
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0
    print(f"\nACCEPTANCE 3 PASS - exact vs central-difference gradients on "
          f"80 random stable policies (both presets, risk 0 and 0.1): worst "
          f"relative error {worst:.2e} ({elapsed:.1f} s)")


def test_criterion_4_model_based_global_convergence():
    t0 = time.perf_counter()
    m = example1()
    lam = 0.1
    p_star = optimal_policy(solve(m, lam))
    for algo in ("pg", "npg"):
        for k in range(10):
            p0 = random_stable_policy(m, seed=5000 + k, lam=lam)
            tr = run(m, p0, algo=algo, eta=5.0, max_iters=3000, tol=1e-11,
                     lam=lam, backtracking=True)
            gaps = [r.gap for r in tr.rows]
            assert all(b <= a + 1e-12 for a, b in zip(gaps, gaps[1:])), \
                f"{algo} run {k}: gap trace not monotone"
            err = policy_distance(tr.final_policy, p_star)
            assert err <= 1e-4, f"{algo} run {k}: gain error {err:.2e}"
    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0
    print(f"\nACCEPTANCE 4 PASS - risk-sensitive model-based PG and NPG from "
          f"10 random stable starts each reach gain error <= 1e-4 with "
          f"monotone cost gaps ({elapsed:.1f} s)")


def test_criterion_5_model_free_convergence():
    t0 = time.perf_counter()
    m = example2()
    p0 = zero_policy(m)
    p_star = optimal_policy(solve(m, 0.0))
    e0 = policy_distance(p0, p_star)
    ratios = []
    for seed in range(10):
        tr = learn(m, p0, algo="pg", eta=0.2, L=100, T=10, r=0.12,
                   iters=300, seed=seed, init_mode="uniform")
        ratios.append(tr.rows[-1].gain_error / e0)
    hits = sum(r < 0.25 for r in ratios)
    elapsed = time.perf_counter() - t0
    assert hits >= 9, f"only {hits}/10 seeds reduced the gain error enough"
    assert elapsed < 600.0
    print(f"\nACCEPTANCE 5 PASS - model-free pg on the example2 preset "
          f"(eta=0.2, T=10, L=100): {hits}/10 seeds ended below 25% of the "
          f"initial gain error; ratios "
          f"{' '.join(f'{r:.2f}' for r in ratios)} ({elapsed:.1f} s)")


def test_criterion_6_estimator_consistency():
    t0 = time.perf_counter()
    m = example2()
    p = Policy(theta=([[-0.2]],), theta_bar=[[-0.3]])

    g_exact = _flatten(gradient(m, p, lam=0.0).blocks())
    eg = empirical_gradient(m, p, L=10_000, T=1_000, r=1e-3, seed=60,
                            antithetic=True)
    g_emp = _flatten(eg.blocks())
    cos = float(g_exact @ g_emp
                / (np.linalg.norm(g_exact) * np.linalg.norm(g_emp)))
    assert cos >= 0.95

    # variance of the estimator falls like 1/L: repeat the estimate at each
    # sample count and fit the log-log slope
    Ls = [10, 100, 1000, 10_000]
    K = 60
    variances = []
    for L in Ls:
        draws = []
        for k in range(K):
            e = empirical_gradient(m, p, L=L, T=30, r=0.05,
                                   seed=7000 + 31 * k, iteration=L)
            draws.append(_flatten(e.blocks()))
        draws = np.stack(draws)
        variances.append(float(draws.var(axis=0, ddof=1).mean()))
    slope = np.polyfit(np.log10(Ls), np.log10(variances), 1)[0]
    assert -1.15 <= slope <= -0.85, f"variance slope {slope:.3f}"
    elapsed = time.perf_counter() - t0
    assert elapsed < 300.0
    print(f"\nACCEPTANCE 6 PASS - sphere-smoothing estimator: cosine with "
          f"exact gradient {cos:.3f} at L=1e4/T=1e3/r=1e-3; variance decay "
          f"slope {slope:.2f} over L={Ls} ({elapsed:.1f} s)")


def test_criterion_7_structural_identities():
    t0 = time.perf_counter()
    cases = 0
    n_models = 25
    fields_per_model = 100
    for k in range(n_models):
        rng = np.random.default_rng(8000 + k)
        m = random_team(rng)
        field_scale = max(1.0, max(float(np.max(np.abs(sub.alpha)))
                                   for sub in m.subs))
        for _ in range(fields_per_model):
            x = random_field(rng, m)
            u = [rng.standard_normal((sub.n, sub.du)) for sub in m.subs]
            xbar = deep_project(x, m)
            ubar = deep_project(u, m)
            dx = gauge_residual(x, m)
            du = gauge_residual(u, m)
            mag = max(float(np.max(np.abs(b))) for b in x)

            # linear dependence of the residual field
            for s, sub in enumerate(m.subs):
                tot = sum(sub.alpha[:, j] @ dx[s] for j in range(sub.f))
                assert np.max(np.abs(tot)) <= 1e-9 * sub.n * mag * field_scale
            cases += 1

            # residual/deep orthogonality through the local cost weights
            for s, sub in enumerate(m.subs):
                blocks = xbar[m.x_offset(s):m.x_offset(s) + sub.f * sub.dx]
                blocks = blocks.reshape(sub.f, sub.dx)
                tot = sum(float(sub.alpha[:, j] @ (dx[s] @ sub.Q @ blocks[j]))
                          for j in range(sub.f))
                assert abs(tot) <= 1e-8 * sub.n * max(1.0, mag ** 2) \
                    * max(1.0, float(np.max(np.abs(sub.Q)))) * field_scale
            cases += 1

            # cost reformulation
            direct = team_cost(m, x, u)
            Qd = aggregate(m).Q_deep
            Rd = aggregate(m).R_deep
            split = float(xbar @ Qd @ xbar + ubar @ Rd @ ubar)
            for s, sub in enumerate(m.subs):
                split += sub.mu / sub.n * float(
                    np.einsum("nd,de,ne->", dx[s], sub.Q, dx[s])
                    + np.einsum("nd,de,ne->", du[s], sub.R, du[s]))
            assert split == pytest.approx(direct, rel=1e-8, abs=1e-10)
            cases += 1

            # expansion identities: literal gains act on residual and deep
            # parts separately
            p = Policy(
                theta=tuple(rng.standard_normal((sub.du, sub.dx))
                            for sub in m.subs),
                theta_bar=rng.standard_normal((m.Du, m.Dx)))
            act = expand_policy(p, x, xbar, m)
            assert np.allclose(deep_project(act, m), p.theta_bar @ xbar,
                               rtol=1e-9, atol=1e-9 * max(1.0, mag))
            da = gauge_residual(act, m)
            for s in range(m.S):
                assert np.allclose(da[s], dx[s] @ p.theta[s].T,
                                   rtol=1e-9, atol=1e-9 * max(1.0, mag))
            cases += 1

    # simulated deep/residual dynamics stay on the decomposed trajectories
    for k in range(5):
        rng = np.random.default_rng(8500 + k)
        m = random_team(rng)
        agg = aggregate(m)
        p = optimal_policy(solve(m, 0.0))
        traj = rollout(m, p, T=20, seed=77 + k)
        for t in range(traj.horizon):
            xb = deep_project([s[t] for s in traj.states], m)
            ub = deep_project([a[t] for a in traj.actions], m)
            wb = deep_project([w[t] for w in traj.noises], m)
            nxt = deep_project([s[t + 1] for s in traj.states], m)
            assert np.allclose(agg.A_deep @ xb + agg.B_deep @ ub + wb, nxt,
                               atol=1e-9)
            cases += 1

    # sampled noise covariances match the analytic residual/deep formulas
    rng = np.random.default_rng(8600)
    m = example1()
    sub = m.subs[0]
    N = 100_000
    W = rng.standard_normal((N, sub.n)) * np.sqrt(sub.sigma_w[0, 0])
    wbar = W @ sub.alpha[:, 0] / sub.n
    resid = W - np.outer(wbar, sub.alpha[:, 0])
    for i in range(sub.n):
        prod = resid[:, i] * resid[:, i]
        se = prod.std(ddof=1) / np.sqrt(N)
        assert abs(prod.mean() - noise_covariance(m, 0, i=i)[0, 0]) < 3 * se
        cases += 1
    for (i, j) in ((0, 1), (2, 7), (5, 9)):
        prod = resid[:, i] * resid[:, j]
        se = prod.std(ddof=1) / np.sqrt(N)
        assert abs(prod.mean() - noise_covariance(m, 0, i=i, k=j)[0, 0]) < 3 * se
        cases += 1
    prod = wbar * wbar
    se = prod.std(ddof=1) / np.sqrt(N)
    assert abs(prod.mean() - noise_covariance(m, 0, j=0)[0, 0]) < 3 * se
    cases += 1

    elapsed = time.perf_counter() - t0
    assert cases >= 10_000
    assert elapsed < 120.0
    print(f"\nACCEPTANCE 7 PASS - structural identity battery: {cases} "
          f"randomized checks (dependence, orthogonality, cost split, "
          f"expansion, simulated dynamics, noise covariances) "
          f"({elapsed:.1f} s)")


def test_criterion_8_risk_neutral_limit():
    t0 = time.perf_counter()
    worst = 0.0
    for maker in (example1, example2):
        m = maker()
        s0 = solve(m, lam=0.0)
        s1 = solve(m, lam=1e-10)
        for a, b in zip(list(s0.P) + [s0.P_deep] + list(s0.gains) + [s0.deep_gain],
                        list(s1.P) + [s1.P_deep] + list(s1.gains) + [s1.deep_gain]):
            rel = np.linalg.norm(a - b) / max(1e-30, np.linalg.norm(a))
            worst = max(worst, rel)
            assert rel <= 1e-6
        p = random_stable_policy(m, seed=9001, lam=0.1)
        g0 = _flatten(gradient(m, p, lam=0.0).blocks())
        g1 = _flatten(gradient(m, p, lam=1e-10).blocks())
        rel = np.linalg.norm(g0 - g1) / np.linalg.norm(g0)
        worst = max(worst, rel)
        assert rel <= 1e-6
        e0 = evaluate(m, p, lam=0.0).cost
        e1 = evaluate(m, p, lam=1e-10).cost
        rel = abs(e0 - e1) / abs(e0)
        worst = max(worst, rel)
        assert rel <= 1e-6
    elapsed = time.perf_counter() - t0
    print(f"\nACCEPTANCE 8 PASS - risk factor 1e-10 vs 0: values, gains, "
          f"gradients, and costs agree to {worst:.2e} relative "
          f"({elapsed:.2f} s)")
