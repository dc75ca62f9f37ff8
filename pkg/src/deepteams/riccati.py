"""Fixed-point solvers for the decoupled Riccati equations and optimal gains.

The team optimum is characterized by S + 1 Riccati equations whose dimensions
do not depend on population sizes: one per sub-population for the residual
subsystem and one for the deep subsystem. Each has the risk-sensitive form

    P    = Q + A' Pt A - A' Pt B (R + B' Pt B)^{-1} B' Pt A,
    Pt   = P (I - 2 * rw * sigma_w P)^{-1},

where the *risk weight* ``rw`` is ``lam * mu / n`` for a residual block and
``lam`` for the deep block (whose noise covariance already carries the 1/n
population scaling). At ``lam = 0`` the deflation is skipped entirely, so the
risk-neutral path and the risk-sensitive path with ``lam = 0`` are
bit-identical.

Solver: value iteration started at ``P = Q``, iterated until the update is
below tolerance. Positive definiteness of the deflation is re-checked every
iteration because feasibility shrinks as the risk factor grows or the
population shrinks; losing it raises :class:`FeasibilityLost` rather than
returning a non-PD solution.

Gains are stored with positive sign, ``gain = (R + B' Pt B)^{-1} B' Pt A``,
and applied as ``u = -gain @ x`` in closed loop; :func:`optimal_policy`
negates them into the package's literal ``u = theta x`` convention.
"""

from dataclasses import dataclass

import numpy as np

from .errors import FeasibilityLost, NoConvergence, NotWeaklyCoupled
from .model import (AggregatedModel, DeltaBlock, Policy, TeamModel, aggregate,
                    is_weakly_coupled, spectral_radius)

DEFAULT_TOL = 1e-12
MAX_ITERS = 100_000


def _deflate(P: np.ndarray, sigma_w: np.ndarray, rw: float) -> np.ndarray:
    """Pt = P (I - 2 rw sigma_w P)^{-1}, validity checked by the caller."""
    if rw == 0.0:
        return P
    n = P.shape[0]
    G = np.eye(n) - 2.0 * rw * sigma_w @ P
    Pt = np.linalg.solve(G.T, P.T).T
    return (Pt + Pt.T) / 2.0


def _check_feasible(P: np.ndarray, sigma_sqrt: np.ndarray, rw: float, context: str):
    if rw == 0.0:
        return
    w = np.linalg.eigvalsh(2.0 * rw * sigma_sqrt @ P @ sigma_sqrt)
    if w[-1] >= 1.0:
        raise FeasibilityLost(
            f"{context}: I - 2*lam*sigma_w*P lost positive definiteness "
            f"(max eigenvalue {w[-1]:.6f} >= 1); reduce the risk factor")


def _sym_sqrt(M: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh((M + M.T) / 2.0)
    return V @ np.diag(np.sqrt(np.clip(w, 0.0, None))) @ V.T


def _riccati_step(P, A, B, Q, R, sigma_w, rw):
    Pt = _deflate(P, sigma_w, rw)
    BtP = B.T @ Pt
    gain = np.linalg.solve(R + BtP @ B, BtP @ A)
    Pn = Q + A.T @ Pt @ A - A.T @ Pt @ B @ gain
    return (Pn + Pn.T) / 2.0, Pt, gain


def _solve_one(A, B, Q, R, sigma_w, rw, tol, max_iters, context):
    sigma_sqrt = _sym_sqrt(sigma_w) if rw != 0.0 else None
    P = (Q + Q.T) / 2.0
    iters = 0
    for iters in range(1, max_iters + 1):
        if rw != 0.0:
            _check_feasible(P, sigma_sqrt, rw, context)
        Pn, _, _ = _riccati_step(P, A, B, Q, R, sigma_w, rw)
        delta = np.linalg.norm(Pn - P)
        P = Pn
        if not np.isfinite(delta) or np.linalg.norm(P) > 1e100:
            raise NoConvergence(f"{context}: value iteration diverged")
        if delta <= tol * (1.0 + np.linalg.norm(P)):
            break
    else:
        raise NoConvergence(
            f"{context}: no fixed point within {max_iters} iterations")
    if rw != 0.0:
        _check_feasible(P, sigma_sqrt, rw, context)
    Pn, Pt, gain = _riccati_step(P, A, B, Q, R, sigma_w, rw)
    residual = float(np.linalg.norm(Pn - P))
    return P, Pt, gain, iters, residual


def solve_delta_riccati(block: DeltaBlock, lam: float,
                        tol: float = DEFAULT_TOL, max_iters: int = MAX_ITERS):
    """Solve one residual-subsystem Riccati equation.

    Returns ``(P, P_tilde, gain)`` with the gain in positive-sign storage.
    """
    P, Pt, gain, _, _ = _solve_one(
        block.A, block.B, block.Q, block.R, block.sigma_w,
        lam * block.risk_scale, tol, max_iters, "residual block")
    return P, Pt, gain


def solve_deep_riccati(agg: AggregatedModel, lam: float,
                       tol: float = DEFAULT_TOL, max_iters: int = MAX_ITERS):
    """Solve the deep-subsystem Riccati equation; returns ``(P, P_tilde, gain)``."""
    P, Pt, gain, _, _ = _solve_one(
        agg.A_deep, agg.B_deep, agg.Q_deep, agg.R_deep, agg.sigma_w_deep,
        lam, tol, max_iters, "deep block")
    return P, Pt, gain


@dataclass(frozen=True)
class RiccatiSolution:
    """All S + 1 Riccati solutions plus the optimal gains (positive storage)."""

    P: tuple
    P_tilde: tuple
    P_deep: np.ndarray
    P_tilde_deep: np.ndarray
    gains: tuple
    deep_gain: np.ndarray
    iterations: int
    residual: float

    def closed_loop_radii(self, agg: AggregatedModel):
        local = [spectral_radius(b.A - b.B @ g) for b, g in zip(agg.blocks, self.gains)]
        deep = spectral_radius(agg.A_deep - agg.B_deep @ self.deep_gain)
        return local, deep


def solve(m: TeamModel, lam: float | None = None,
          tol: float = DEFAULT_TOL, max_iters: int = MAX_ITERS) -> RiccatiSolution:
    """Solve all residual blocks and the deep block of a team model."""
    if lam is None:
        lam = m.lam
    agg = aggregate(m)
    Ps, Pts, gains = [], [], []
    total_iters = 0
    max_resid = 0.0
    for s, block in enumerate(agg.blocks):
        P, Pt, g, it, res = _solve_one(
            block.A, block.B, block.Q, block.R, block.sigma_w,
            lam * block.risk_scale, tol, max_iters, f"residual block {s}")
        Ps.append(P)
        Pts.append(Pt)
        gains.append(g)
        total_iters += it
        max_resid = max(max_resid, res)
    Pd, Ptd, gd, it, res = _solve_one(
        agg.A_deep, agg.B_deep, agg.Q_deep, agg.R_deep, agg.sigma_w_deep,
        lam, tol, max_iters, "deep block")
    total_iters += it
    max_resid = max(max_resid, res)
    return RiccatiSolution(
        P=tuple(Ps), P_tilde=tuple(Pts), P_deep=Pd, P_tilde_deep=Ptd,
        gains=tuple(gains), deep_gain=gd,
        iterations=total_iters, residual=max_resid)


def solve_weakly_coupled(m: TeamModel, lam: float | None = None,
                         tol: float = DEFAULT_TOL,
                         max_iters: int = MAX_ITERS) -> RiccatiSolution:
    """Decomposed solve for feature-local coupling.

    Solves the S residual equations plus one small equation per (s, j)
    feature, each over the effective matrices ``A + Abar_block`` etc., then
    reassembles the deep solution block-diagonally. Equals :func:`solve` on
    the same model.
    """
    if lam is None:
        lam = m.lam
    if not is_weakly_coupled(m):
        raise NotWeaklyCoupled("coupling is not feature-local; use solve()")
    agg = aggregate(m)

    Ps, Pts, gains = [], [], []
    total_iters = 0
    max_resid = 0.0
    for s, block in enumerate(agg.blocks):
        P, Pt, g, it, res = _solve_one(
            block.A, block.B, block.Q, block.R, block.sigma_w,
            lam * block.risk_scale, tol, max_iters, f"residual block {s}")
        Ps.append(P)
        Pts.append(Pt)
        gains.append(g)
        total_iters += it
        max_resid = max(max_resid, res)

    Pd = np.zeros((m.Dx, m.Dx))
    Ptd = np.zeros((m.Dx, m.Dx))
    gd = np.zeros((m.Du, m.Dx))
    for s, sub in enumerate(m.subs):
        for j in range(sub.f):
            xs, us = m.x_slice(s, j), m.u_slice(s, j)
            A_eff = sub.A + sub.Abar[j][:, xs]
            B_eff = sub.B + sub.Bbar[j][:, us]
            Q_eff = sub.Q + m.qbar_cross[xs, xs] / sub.mu
            R_eff = sub.R + m.rbar_cross[us, us] / sub.mu
            P, Pt, g, it, res = _solve_one(
                A_eff, B_eff, Q_eff, R_eff, sub.sigma_w,
                lam * sub.mu / sub.n, tol, max_iters,
                f"feature block ({s}, {j})")
            Pd[xs, xs] = sub.mu * P
            Ptd[xs, xs] = sub.mu * Pt
            gd[us, xs] = g
            total_iters += it
            max_resid = max(max_resid, res)

    return RiccatiSolution(
        P=tuple(Ps), P_tilde=tuple(Pts), P_deep=Pd, P_tilde_deep=Ptd,
        gains=tuple(gains), deep_gain=gd,
        iterations=total_iters, residual=max_resid)


def optimal_policy(sol: RiccatiSolution) -> Policy:
    """Optimal gains in the package's literal convention (``u = theta x``)."""
    return Policy(theta=tuple(-g for g in sol.gains), theta_bar=-sol.deep_gain)
