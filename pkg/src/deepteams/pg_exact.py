"""Model-based policy evaluation, exact gradients, and gradient descent loops.

All quantities are expressed in the package's literal gain convention
(``u = theta x``, closed loop ``F = A + B theta``), so for each block

    P     = (Q + theta' R theta) + F' Pt F,      Pt = P G^{-1},
    G     = I - 2 rw sigma_w P,
    E     = (R + B' Pt B) theta + B' Pt A,
    Sigma = scale * sum_{t>=0} Ft^t Wt (Ft')^t,  Ft = G^{-1} F,  Wt = G^{-1} sigma_w,
    grad  = 2 E Sigma,

with risk weight ``rw = lam * mu / n`` and ``scale = mu (n - f) / n`` for a
residual block (the state-correlation sum over that sub-population's n - f
independent residual directions), and ``rw = lam``, ``scale = 1`` for the
deep block. The series includes its order-zero noise term so that at
``lam = 0`` Sigma is exactly the stationary state correlation and the
gradient matches finite differences of the cost.

Costs: risk-neutral ``J = sum_s mu (1 - f/n) tr(P_s sigma_w) + tr(P_deep
sigma_w_deep)``; for ``lam > 0`` the exact per-stage log-MGF value

    J = sum_s -((n - f) / (2 lam)) logdet(I - 2 lam (mu/n) sigma_w P_s)
        - (1 / (2 lam)) logdet(I - 2 lam sigma_w_deep P_deep),

whose ``lam -> 0`` limit is the risk-neutral formula. The gradient of this
value is what the formulas above compute, as the finite-difference tests
assert.
"""

from dataclasses import dataclass

import numpy as np

from . import riccati
from .errors import FeasibilityLost, NoConvergence, SingularCovariance, UnstablePolicy
from .model import (AggregatedModel, Policy, TeamModel, aggregate,
                    is_stable_policy, policy_axpy, policy_distance,
                    spectral_radius, zero_policy)
from .trace import RunTrace, TraceRow

P_TOL = 1e-13
SIGMA_TOL = 1e-12
MAX_FP_ITERS = 1_000_000


@dataclass(frozen=True)
class PolicyEvaluation:
    """Per-block value and state-correlation matrices plus the cost."""

    P: tuple
    P_tilde: tuple
    P_deep: np.ndarray
    P_tilde_deep: np.ndarray
    sigma: tuple
    sigma_deep: np.ndarray
    cost: float


@dataclass(frozen=True)
class GradientBundle:
    """Cost gradient with respect to every gain block; grad = 2 E Sigma."""

    grad: tuple
    grad_deep: np.ndarray
    E: tuple
    E_deep: np.ndarray

    def blocks(self) -> list:
        return list(self.grad) + [self.grad_deep]

    @property
    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(g * g) for g in self.blocks())))


def _eval_block(A, B, Q, R, sigma_w, theta, rw, context,
                tol=P_TOL, max_iters=MAX_FP_ITERS):
    """Value matrix, deflated value, tilted correlation sum for one block."""
    F = A + B @ theta
    if spectral_radius(F) >= 1.0:
        raise UnstablePolicy(f"{context}: closed-loop spectral radius >= 1")
    M = Q + theta.T @ R @ theta
    M = (M + M.T) / 2.0
    d = A.shape[0]
    eye = np.eye(d)

    if rw != 0.0:
        w, V = np.linalg.eigh((sigma_w + sigma_w.T) / 2.0)
        sig_sqrt = V @ np.diag(np.sqrt(np.clip(w, 0.0, None))) @ V.T

    P = M.copy()
    for _ in range(max_iters):
        if rw != 0.0:
            ev = np.linalg.eigvalsh(2.0 * rw * sig_sqrt @ P @ sig_sqrt)
            if ev[-1] >= 1.0:
                raise FeasibilityLost(
                    f"{context}: risk deflation lost positive definiteness "
                    f"during policy evaluation")
        if rw == 0.0:
            Pt = P
        else:
            G = eye - 2.0 * rw * sigma_w @ P
            Pt = np.linalg.solve(G.T, P.T).T
            Pt = (Pt + Pt.T) / 2.0
        Pn = M + F.T @ Pt @ F
        Pn = (Pn + Pn.T) / 2.0
        delta = np.linalg.norm(Pn - P)
        P = Pn
        if not np.isfinite(delta):
            raise FeasibilityLost(f"{context}: policy evaluation diverged")
        if delta <= tol * (1.0 + np.linalg.norm(P)):
            break
    else:
        raise NoConvergence(f"{context}: policy evaluation hit the iteration cap")

    if rw == 0.0:
        G = eye
        Pt = P
        Ft = F
        Wt = (sigma_w + sigma_w.T) / 2.0
    else:
        G = eye - 2.0 * rw * sigma_w @ P
        Pt = np.linalg.solve(G.T, P.T).T
        Pt = (Pt + Pt.T) / 2.0
        Ft = np.linalg.solve(G, F)
        Wt = np.linalg.solve(G, sigma_w)
        Wt = (Wt + Wt.T) / 2.0

    sigma = Wt.copy()
    for _ in range(max_iters):
        Sn = Wt + Ft @ sigma @ Ft.T
        Sn = (Sn + Sn.T) / 2.0
        delta = np.linalg.norm(Sn - sigma)
        sigma = Sn
        if not np.isfinite(delta):
            raise FeasibilityLost(f"{context}: state-correlation series diverged")
        if delta <= SIGMA_TOL * (1.0 + np.linalg.norm(sigma)):
            break
    else:
        raise NoConvergence(f"{context}: state-correlation series hit the cap")

    return P, Pt, sigma, G


def _logdet(M: np.ndarray) -> float:
    sign, ld = np.linalg.slogdet(M)
    if sign <= 0:
        raise FeasibilityLost("risk deflation matrix is not positive definite")
    return float(ld)


def evaluate(m: TeamModel, p: Policy, lam: float | None = None,
             agg: AggregatedModel | None = None) -> PolicyEvaluation:
    """Evaluate a stationary policy block by block.

    Uses stationary noise-driven correlations (initial states play no role
    in the infinite-horizon average). Raises :class:`UnstablePolicy` if any
    closed loop has spectral radius >= 1, :class:`FeasibilityLost` if the
    risk deflation fails for the given risk factor.
    """
    if lam is None:
        lam = m.lam
    if agg is None:
        agg = aggregate(m)

    Ps, Pts, sigmas = [], [], []
    cost = 0.0
    for s, (blk, theta) in enumerate(zip(agg.blocks, p.theta)):
        rw = lam * blk.risk_scale
        P, Pt, sig_unit, G = _eval_block(
            blk.A, blk.B, blk.Q, blk.R, blk.sigma_w, theta, rw,
            f"residual block {s}")
        scale = blk.mu * (blk.n - blk.f) / blk.n
        Ps.append(P)
        Pts.append(Pt)
        sigmas.append(scale * sig_unit)
        if lam == 0.0:
            cost += blk.mu * (1.0 - blk.f / blk.n) * float(np.trace(P @ blk.sigma_w))
        else:
            cost += -(blk.n - blk.f) / (2.0 * lam) * _logdet(G)

    Pd, Ptd, sig_deep, Gd = _eval_block(
        agg.A_deep, agg.B_deep, agg.Q_deep, agg.R_deep, agg.sigma_w_deep,
        p.theta_bar, lam, "deep block")
    if lam == 0.0:
        cost += float(np.trace(Pd @ agg.sigma_w_deep))
    else:
        cost += -1.0 / (2.0 * lam) * _logdet(Gd)

    return PolicyEvaluation(P=tuple(Ps), P_tilde=tuple(Pts), P_deep=Pd,
                            P_tilde_deep=Ptd, sigma=tuple(sigmas),
                            sigma_deep=sig_deep, cost=cost)


def gradient(m: TeamModel, p: Policy, lam: float | None = None,
             ev: PolicyEvaluation | None = None,
             agg: AggregatedModel | None = None) -> GradientBundle:
    """Exact cost gradient with respect to every gain block."""
    if lam is None:
        lam = m.lam
    if agg is None:
        agg = aggregate(m)
    if ev is None:
        ev = evaluate(m, p, lam=lam, agg=agg)

    grads, Es = [], []
    for blk, theta, Pt, sig in zip(agg.blocks, p.theta, ev.P_tilde, ev.sigma):
        E = (blk.R + blk.B.T @ Pt @ blk.B) @ theta + blk.B.T @ Pt @ blk.A
        Es.append(E)
        grads.append(2.0 * E @ sig)
    E_deep = (agg.R_deep + agg.B_deep.T @ ev.P_tilde_deep @ agg.B_deep) @ p.theta_bar \
        + agg.B_deep.T @ ev.P_tilde_deep @ agg.A_deep
    grad_deep = 2.0 * E_deep @ ev.sigma_deep
    return GradientBundle(grad=tuple(grads), grad_deep=grad_deep,
                          E=tuple(Es), E_deep=E_deep)


def pg_step(p: Policy, g: GradientBundle, eta: float) -> Policy:
    """Plain gradient step ``theta <- theta - eta * grad`` per block."""
    return policy_axpy(p, g.blocks(), -eta)


def npg_step(p: Policy, g: GradientBundle, ev: PolicyEvaluation,
             eta: float) -> Policy:
    """Natural gradient step: right-precondition each block by its state
    correlation, ``theta <- theta - eta * grad @ sigma^{-1}``.

    Since grad = 2 E sigma, the applied direction is exactly ``-2 eta E``
    independent of sigma's conditioning; sigma is still required to be
    invertible, matching the preconditioned definition.
    """
    for sig in list(ev.sigma) + [ev.sigma_deep]:
        if sig.size:
            w = np.linalg.eigvalsh(sig)
            if w[0] <= w[-1] * 1e-14 or w[-1] == 0.0:
                raise SingularCovariance(
                    "state-correlation block is numerically singular")
    direction = [2.0 * E for E in g.E] + [2.0 * g.E_deep]
    return policy_axpy(p, direction, -eta)


def run(m: TeamModel, p0: Policy, algo: str = "pg", eta: float = 0.1,
        max_iters: int = 1000, tol: float = 1e-9, lam: float | None = None,
        backtracking: bool = True, max_halvings: int = 30) -> RunTrace:
    """Iterate gradient descent (``algo="pg"``) or natural gradient descent
    (``algo="npg"``) until the gradient norm drops below ``tol``.

    With backtracking the step is halved (up to ``max_halvings`` times) until
    the cost does not increase, so the cost trace is nonincreasing; candidate
    iterates that leave the stable/feasible set count as failed trials.
    Without backtracking, an unstable iterate halts the run and the last
    stable policy is reported with status ``"unstable"``.
    """
    if algo not in ("pg", "npg"):
        raise ValueError(f"unknown algorithm {algo!r}")
    if eta <= 0:
        raise ValueError("step size must be positive")
    if lam is None:
        lam = m.lam
    agg = aggregate(m)
    sol = riccati.solve(m, lam)
    p_star = riccati.optimal_policy(sol)
    ev_star = evaluate(m, p_star, lam=lam, agg=agg)

    p = p0
    ev = evaluate(m, p, lam=lam, agg=agg)
    rows = []
    status = "max_iters"
    for k in range(max_iters + 1):
        g = gradient(m, p, lam=lam, ev=ev, agg=agg)
        rows.append(TraceRow(iteration=k, cost=ev.cost,
                             gap=ev.cost - ev_star.cost, grad_norm=g.norm,
                             gain_error=policy_distance(p, p_star)))
        if g.norm <= tol:
            status = "converged"
            break
        if k == max_iters:
            break

        stepper = (lambda q, e: pg_step(q, g, e)) if algo == "pg" \
            else (lambda q, e: npg_step(q, g, ev, e))
        if backtracking:
            eta_eff = eta
            accepted = None
            for _ in range(max_halvings + 1):
                cand = stepper(p, eta_eff)
                try:
                    cand_ev = evaluate(m, cand, lam=lam, agg=agg)
                except (UnstablePolicy, FeasibilityLost):
                    eta_eff /= 2.0
                    continue
                if cand_ev.cost <= ev.cost:
                    accepted = (cand, cand_ev)
                    break
                eta_eff /= 2.0
            if accepted is None:
                status = "stalled"
                break
            p, ev = accepted
        else:
            cand = stepper(p, eta)
            try:
                cand_ev = evaluate(m, cand, lam=lam, agg=agg)
            except (UnstablePolicy, FeasibilityLost):
                status = "unstable"
                break
            p, ev = cand, cand_ev

    return RunTrace(algo=algo, rows=rows, final_policy=p, status=status)


def random_stable_policy(m: TeamModel, seed: int, lam: float | None = None,
                         radius_cap: float = 0.95, scale: float = 1.0,
                         max_tries: int = 1000) -> Policy:
    """Draw gains until every closed loop is stable with margin and, for a
    positive risk factor, the policy evaluation is feasible."""
    if lam is None:
        lam = m.lam
    agg = aggregate(m)
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        p = Policy(
            theta=tuple(scale * rng.standard_normal((sub.du, sub.dx)) for sub in m.subs),
            theta_bar=scale * rng.standard_normal((m.Du, m.Dx)),
        )
        if not is_stable_policy(agg, p, margin=1.0 - radius_cap):
            continue
        if lam > 0.0:
            try:
                evaluate(m, p, lam=lam, agg=agg)
            except (FeasibilityLost, NoConvergence):
                continue
        return p
    raise NoConvergence(f"no stable policy found in {max_tries} draws")


__all__ = [
    "PolicyEvaluation", "GradientBundle", "evaluate", "gradient",
    "pg_step", "npg_step", "run", "random_stable_policy",
    "zero_policy", "Policy",
]
