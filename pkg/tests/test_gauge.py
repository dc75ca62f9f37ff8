import numpy as np
import pytest

from deepteams import (Policy, deep_project, example1, expand_policy,
                       gauge_residual, noise_covariance, team_cost,
                       zero_policy)
from conftest import random_field, random_team
from test_model import scalar_team


class TestDeepProject:
    def test_constant_field_unit_factors(self):
        m = scalar_team(n=4, alpha=np.ones((4, 1)))
        field = [np.full((4, 1), 3.25)]
        assert deep_project(field, m) == pytest.approx([3.25])

    def test_example1_factors_projected_onto_themselves(self):
        m = example1()
        alpha = m.subs[0].alpha
        field = [alpha.copy()]  # agent i's state equals its own factor
        # (1/n) sum alpha_i^2 is exactly 1 by orthonormality
        assert deep_project(field, m) == pytest.approx([1.0])

    def test_matches_loop_oracle(self, rng):
        m = random_team(rng)
        field = random_field(rng, m)
        got = deep_project(field, m)
        expected = []
        for arr, sub in zip(field, m.subs):
            for j in range(sub.f):
                acc = np.zeros(sub.dx)
                for i in range(sub.n):
                    acc += sub.alpha[i, j] * arr[i]
                expected.append(acc / sub.n)
        assert got == pytest.approx(np.concatenate(expected), rel=1e-12)

    def test_rejects_wrong_agent_count(self, rng):
        m = random_team(rng, S=1)
        bad = [np.zeros((m.subs[0].n + 1, m.subs[0].dx))]
        with pytest.raises(ValueError, match="field block"):
            deep_project(bad, m)


class TestGaugeResidual:
    def test_field_in_feature_span_has_zero_residual(self, rng):
        m = random_team(rng)
        field = []
        for sub in m.subs:
            coeff = rng.standard_normal((sub.f, sub.dx))
            field.append(sub.alpha @ coeff)
        resid = gauge_residual(field, m)
        for r in resid:
            assert np.max(np.abs(r)) < 1e-12

    def test_two_agent_hand_case(self):
        m = scalar_team(n=2, alpha=np.ones((2, 1)))
        a, b = 1.7, -0.3
        resid = gauge_residual([np.array([[a], [b]])], m)[0]
        assert np.allclose(resid, [[(a - b) / 2], [(b - a) / 2]])

    def test_projection_of_residual_vanishes(self, rng):
        for k in range(5):
            m = random_team(np.random.default_rng(100 + k))
            field = random_field(np.random.default_rng(200 + k), m)
            resid = gauge_residual(field, m)
            scale = max(np.max(np.abs(np.concatenate([f.ravel() for f in field]))), 1.0)
            assert np.max(np.abs(deep_project(resid, m))) < 1e-9 * scale

    def test_weighted_residual_sum_vanishes(self, rng):
        m = random_team(rng)
        field = random_field(rng, m)
        resid = gauge_residual(field, m)
        for r, sub in zip(resid, m.subs):
            for j in range(sub.f):
                total = sub.alpha[:, j] @ r
                assert np.max(np.abs(total)) < 1e-9 * max(1.0, np.max(np.abs(r)))


class TestExpandPolicy:
    def test_zero_gains_give_zero_actions(self, rng):
        m = random_team(rng)
        field = random_field(rng, m)
        u = expand_policy(zero_policy(m), field, deep_project(field, m), m)
        for arr in u:
            assert np.max(np.abs(arr)) == 0.0

    def test_single_agent_local_terms_cancel(self):
        m = scalar_team(n=1)
        p = Policy(theta=([[0.7]],), theta_bar=[[-0.4]])
        x = [np.array([[2.0]])]
        u = expand_policy(p, x, deep_project(x, m), m)
        assert np.allclose(u[0], [[-0.8]])

    def test_projection_and_residual_identities(self, rng):
        for k in range(5):
            r = np.random.default_rng(300 + k)
            m = random_team(r)
            p = Policy(
                theta=tuple(r.standard_normal((sub.du, sub.dx)) for sub in m.subs),
                theta_bar=r.standard_normal((m.Du, m.Dx)))
            x = random_field(r, m)
            xbar = deep_project(x, m)
            u = expand_policy(p, x, xbar, m)
            assert deep_project(u, m) == pytest.approx(p.theta_bar @ xbar, rel=1e-9, abs=1e-12)
            du_field = gauge_residual(u, m)
            dx_field = gauge_residual(x, m)
            for s, sub in enumerate(m.subs):
                assert du_field[s] == pytest.approx(dx_field[s] @ p.theta[s].T,
                                                    rel=1e-9, abs=1e-12)


class TestNoiseCovariance:
    def test_residual_variance_uniform_factors(self):
        m = scalar_team(n=10, alpha=np.ones((10, 1)), sigma_w=0.1)
        got = noise_covariance(m, 0, i=0)
        assert np.allclose(got, [[0.09]])

    def test_residual_cross_uniform_factors(self):
        m = scalar_team(n=10, alpha=np.ones((10, 1)), sigma_w=0.1)
        got = noise_covariance(m, 0, i=0, k=3)
        assert np.allclose(got, [[-0.01]])

    def test_single_agent_residual_is_zero(self):
        m = scalar_team(n=1)
        assert np.allclose(noise_covariance(m, 0, i=0), [[0.0]], atol=1e-15)

    def test_deep_noise_variance(self):
        m = scalar_team(n=10, alpha=np.ones((10, 1)), sigma_w=0.1)
        assert np.allclose(noise_covariance(m, 0, j=0), [[0.01]])

    def test_cross_terms_vanish(self, rng):
        m = random_team(rng, S=1)
        sub = m.subs[0]
        assert np.all(noise_covariance(m, 0, i=0, j=0) == 0.0)
        if sub.f > 1:
            assert np.all(noise_covariance(m, 0, j=0, j2=1) == 0.0)

    def test_index_out_of_range(self):
        m = scalar_team(n=2, alpha=np.ones((2, 1)))
        with pytest.raises(IndexError):
            noise_covariance(m, 0, i=2)
        with pytest.raises(IndexError):
            noise_covariance(m, 0, j=1)

    def test_monte_carlo_agreement(self, rng):
        # sampled residual/deep noise second moments match the analytic
        # formulas within 3 standard errors
        alpha = np.sqrt(np.array([0.4, 0.6, 1.2, 1.4, 1.4]))[:, None]
        m = scalar_team(n=5, alpha=alpha, sigma_w=0.3)
        sub = m.subs[0]
        N = 100_000
        W = rng.standard_normal((N, 5)) * np.sqrt(0.3)
        wbar = W @ sub.alpha[:, 0] / 5.0
        resid = W - np.outer(wbar, sub.alpha[:, 0])
        for i in range(5):
            prod = resid[:, i] * resid[:, i]
            se = prod.std(ddof=1) / np.sqrt(N)
            assert abs(prod.mean() - noise_covariance(m, 0, i=i)[0, 0]) < 3 * se
        prod = resid[:, 0] * resid[:, 2]
        se = prod.std(ddof=1) / np.sqrt(N)
        assert abs(prod.mean() - noise_covariance(m, 0, i=0, k=2)[0, 0]) < 3 * se
        prod = wbar * wbar
        se = prod.std(ddof=1) / np.sqrt(N)
        assert abs(prod.mean() - noise_covariance(m, 0, j=0)[0, 0]) < 3 * se


class TestCostReformulation:
    def test_team_cost_splits_into_deep_and_residual_parts(self, rng):
        for k in range(10):
            r = np.random.default_rng(400 + k)
            m = random_team(r)
            x = random_field(r, m)
            u = [r.standard_normal((sub.n, sub.du)) for sub in m.subs]
            direct = team_cost(m, x, u)

            xbar = deep_project(x, m)
            ubar = deep_project(u, m)
            dx = gauge_residual(x, m)
            du = gauge_residual(u, m)
            Qd = m.qbar_cross.copy()
            Rd = m.rbar_cross.copy()
            for s, sub in enumerate(m.subs):
                for j in range(sub.f):
                    Qd[m.x_slice(s, j), m.x_slice(s, j)] += sub.mu * sub.Q
                    Rd[m.u_slice(s, j), m.u_slice(s, j)] += sub.mu * sub.R
            split = float(xbar @ Qd @ xbar + ubar @ Rd @ ubar)
            for s, sub in enumerate(m.subs):
                split += sub.mu / sub.n * float(
                    np.einsum("nd,de,ne->", dx[s], sub.Q, dx[s])
                    + np.einsum("nd,de,ne->", du[s], sub.R, du[s]))
            assert split == pytest.approx(direct, rel=1e-8)

    def test_orthogonal_relation_between_residual_and_deep(self, rng):
        # sum_i sum_j alpha_ij (dx_i)' Q xbar_j vanishes identically
        for k in range(10):
            r = np.random.default_rng(500 + k)
            m = random_team(r)
            x = random_field(r, m)
            xbar = deep_project(x, m)
            dx = gauge_residual(x, m)
            for s, sub in enumerate(m.subs):
                blocks = xbar[m.x_offset(s):m.x_offset(s) + sub.f * sub.dx]
                blocks = blocks.reshape(sub.f, sub.dx)
                total = 0.0
                for j in range(sub.f):
                    total += float(sub.alpha[:, j] @ (dx[s] @ sub.Q @ blocks[j]))
                scale = max(1.0, float(np.max(np.abs(x[s]))) ** 2 * np.max(np.abs(sub.Q)))
                assert abs(total) < 1e-9 * sub.n * scale
