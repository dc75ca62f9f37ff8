"""Shared generators and independent oracles for the test suite."""

import numpy as np
import pytest

from deepteams import SubPopulationSpec, TeamModel


def orthonormal_factors(rng, n, f):
    """(n, f) influence factors whose columns are orthonormal under the
    empirical inner product (1/n) a_j . a_j'."""
    M = rng.standard_normal((n, f))
    Q, _ = np.linalg.qr(M)
    return Q[:, :f] * np.sqrt(n)


def random_spd(rng, d, scale=1.0, ridge=0.3):
    M = rng.standard_normal((d, d))
    return scale * (M @ M.T / d + ridge * np.eye(d))


def scaled_stable(rng, d, radius):
    A = rng.standard_normal((d, d))
    r = max(np.abs(np.linalg.eigvals(A)))
    return A * (radius / r)


def random_team(rng, S=2, coupled=True, weakly=False, max_n=6, max_f=2,
                max_dx=2, max_du=2, lam=0.0):
    """Random valid team model; deep dynamics kept comfortably stable."""
    subs_raw = []
    for _ in range(S):
        f = int(rng.integers(1, max_f + 1))
        n = int(rng.integers(max(f, 3), max_n + 1))
        dx = int(rng.integers(1, max_dx + 1))
        du = int(rng.integers(1, max_du + 1))
        subs_raw.append((n, f, dx, du))
    Dx = sum(f * dx for (_, f, dx, _) in subs_raw)
    Du = sum(f * du for (_, f, _, du) in subs_raw)

    x_offs, u_offs = [], []
    ox = ou = 0
    for (n, f, dx, du) in subs_raw:
        x_offs.append(ox)
        u_offs.append(ou)
        ox += f * dx
        ou += f * du

    subs = []
    for s, (n, f, dx, du) in enumerate(subs_raw):
        A = scaled_stable(rng, dx, 0.7)
        B = rng.standard_normal((dx, du))
        Abar, Bbar = [], []
        for j in range(f):
            if not coupled:
                Ab = np.zeros((dx, Dx))
                Bb = np.zeros((dx, Du))
            elif weakly:
                Ab = np.zeros((dx, Dx))
                Bb = np.zeros((dx, Du))
                ox = x_offs[s] + j * dx
                ou = u_offs[s] + j * du
                Ab[:, ox:ox + dx] = 0.1 * rng.standard_normal((dx, dx))
                Bb[:, ou:ou + du] = 0.1 * rng.standard_normal((dx, du))
            else:
                Ab = 0.05 * rng.standard_normal((dx, Dx))
                Bb = 0.05 * rng.standard_normal((dx, Du))
            Abar.append(Ab)
            Bbar.append(Bb)
        subs.append(SubPopulationSpec(
            n=n, f=f, A=A, B=B,
            Q=random_spd(rng, dx, ridge=0.5), R=random_spd(rng, du, ridge=0.5),
            Abar=Abar, Bbar=Bbar,
            sigma_x=random_spd(rng, dx, scale=0.1),
            sigma_w=random_spd(rng, dx, scale=0.05),
            alpha=orthonormal_factors(rng, n, f),
            mu=float(rng.uniform(0.5, 2.0)),
        ))

    if not coupled:
        qc = np.zeros((Dx, Dx))
        rc = np.zeros((Du, Du))
    elif weakly:
        qc = np.zeros((Dx, Dx))
        rc = np.zeros((Du, Du))
        for s, (n, f, dx, du) in enumerate(subs_raw):
            for j in range(f):
                ox = x_offs[s] + j * dx
                ou = u_offs[s] + j * du
                qc[ox:ox + dx, ox:ox + dx] = random_spd(rng, dx, scale=0.5, ridge=0.1)
                rc[ou:ou + du, ou:ou + du] = random_spd(rng, du, scale=0.3, ridge=0.1)
    else:
        Mq = rng.standard_normal((Dx, Dx))
        qc = 0.3 * (Mq @ Mq.T / Dx)
        Mr = rng.standard_normal((Du, Du))
        rc = 0.3 * (Mr @ Mr.T / Du)
    return TeamModel(subs=tuple(subs), qbar_cross=qc, rbar_cross=rc, lam=lam)


def random_field(rng, m, dims=None):
    """Random agent field; dims defaults to the state dimensions."""
    out = []
    for sub in m.subs:
        d = sub.dx if dims is None else dims[m.subs.index(sub)]
        out.append(rng.standard_normal((sub.n, d)))
    return out


def scalar_riccati_oracle(A, B, Q, R, sigma_w, risk_weight, tol=1e-14):
    """Independent scalar fixed point: iterate the one-step value recursion
    from P = Q until the update stalls."""
    P = Q
    for _ in range(2_000_000):
        G = 1.0 - 2.0 * risk_weight * sigma_w * P
        assert G > 0, "oracle: risk deflation infeasible"
        Pt = P / G
        Pn = Q + A * Pt * A - (A * Pt * B) ** 2 / (R + B * Pt * B)
        if abs(Pn - P) < tol * (1.0 + abs(Pn)):
            return Pn
        P = Pn
    raise AssertionError("oracle did not converge")


@pytest.fixture
def rng():
    return np.random.default_rng(20260811)
