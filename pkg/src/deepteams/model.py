"""Team model: sub-populations, influence factors, validation, aggregation.

A team consists of ``S`` sub-populations. All agents of sub-population ``s``
share the local matrices ``A, B, Q, R`` and interact with the rest of the
team only through *deep states* and *deep actions*: per-feature weighted
averages of agent states/actions, with agent ``i``'s weight on feature ``j``
given by the influence factor ``alpha[i, j]``. The influence columns are
orthonormal under the empirical inner product,
``(1/n) * sum_i alpha[i, j] * alpha[i, j'] == (j == j')``.

Deep vectors stack the per-feature averages sub-population by sub-population
and feature by feature, so the deep state has dimension
``Dx = sum_s f(s) * dx(s)`` and the deep action ``Du = sum_s f(s) * du(s)``.

Sign convention used throughout the package: policy gains are applied
literally, ``u = theta @ x``, so the closed-loop matrix is ``A + B @ theta``
and stabilizing gains are "negative". Riccati solvers store their gains with
positive-definite algebra and :func:`deepteams.riccati.optimal_policy`
negates once.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ModelDimensionError


def _as_matrix(x) -> np.ndarray:
    return np.atleast_2d(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class SubPopulationSpec:
    """One sub-population: local dynamics/cost matrices and influence factors.

    Attributes:
        n: number of agents.
        f: number of features.
        A, B: local dynamics, ``x' = A x + B u + coupling + w``.
        Q, R: local cost weights (Q symmetric PSD, R symmetric PD).
        Abar, Bbar: per-feature coupling blocks; ``Abar[j]`` maps the full
            deep state (dimension Dx of the owning team) into this
            sub-population's state space, ``Bbar[j]`` likewise for the deep
            action.
        sigma_x: initial-state covariance (Gaussian init mode).
        sigma_w: process-noise covariance.
        alpha: (n, f) influence factors with orthonormal columns under the
            empirical inner product.
        mu: relative cost weight of this sub-population.
    """

    n: int
    f: int
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    Abar: tuple
    Bbar: tuple
    sigma_x: np.ndarray
    sigma_w: np.ndarray
    alpha: np.ndarray
    mu: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "A", _as_matrix(self.A))
        object.__setattr__(self, "B", _as_matrix(self.B))
        object.__setattr__(self, "Q", _as_matrix(self.Q))
        object.__setattr__(self, "R", _as_matrix(self.R))
        object.__setattr__(self, "sigma_x", _as_matrix(self.sigma_x))
        object.__setattr__(self, "sigma_w", _as_matrix(self.sigma_w))
        object.__setattr__(self, "alpha", np.atleast_2d(np.asarray(self.alpha, dtype=float)))
        object.__setattr__(self, "Abar", tuple(_as_matrix(a) for a in self.Abar))
        object.__setattr__(self, "Bbar", tuple(_as_matrix(b) for b in self.Bbar))
        object.__setattr__(self, "mu", float(self.mu))

    @property
    def dx(self) -> int:
        return self.A.shape[0]

    @property
    def du(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class TeamModel:
    """Full problem description.

    Attributes:
        subs: ordered sub-population specs.
        qbar_cross: (Dx, Dx) symmetric deep-state cost coupling, already
            summed over sub-populations with their ``mu`` weights.
        rbar_cross: (Du, Du) deep-action analogue.
        lam: risk factor; 0 is the risk-neutral problem.
    """

    subs: tuple
    qbar_cross: np.ndarray
    rbar_cross: np.ndarray
    lam: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "subs", tuple(self.subs))
        object.__setattr__(self, "qbar_cross", _as_matrix(self.qbar_cross))
        object.__setattr__(self, "rbar_cross", _as_matrix(self.rbar_cross))
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def S(self) -> int:
        return len(self.subs)

    @property
    def Dx(self) -> int:
        return sum(sub.f * sub.dx for sub in self.subs)

    @property
    def Du(self) -> int:
        return sum(sub.f * sub.du for sub in self.subs)

    def x_offset(self, s: int) -> int:
        return sum(sub.f * sub.dx for sub in self.subs[:s])

    def u_offset(self, s: int) -> int:
        return sum(sub.f * sub.du for sub in self.subs[:s])

    def x_slice(self, s: int, j: int) -> slice:
        """Rows of the deep state holding feature ``j`` of sub-population ``s``."""
        dx = self.subs[s].dx
        start = self.x_offset(s) + j * dx
        return slice(start, start + dx)

    def u_slice(self, s: int, j: int) -> slice:
        du = self.subs[s].du
        start = self.u_offset(s) + j * du
        return slice(start, start + du)


@dataclass(frozen=True)
class Policy:
    """Per-sub-population local gains plus one deep gain.

    Gains are applied literally: local actions satisfy
    ``residual(u) = theta[s] @ residual(x)`` and the deep action is
    ``ubar = theta_bar @ xbar``. A stabilizing policy therefore makes
    ``A + B @ theta[s]`` and ``A_deep + B_deep @ theta_bar`` Schur stable.
    """

    theta: tuple
    theta_bar: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "theta", tuple(_as_matrix(t) for t in self.theta))
        object.__setattr__(self, "theta_bar", _as_matrix(self.theta_bar))

    def blocks(self) -> list:
        return list(self.theta) + [self.theta_bar]

    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(b * b) for b in self.blocks())))


def zero_policy(m: TeamModel) -> Policy:
    return Policy(
        theta=tuple(np.zeros((sub.du, sub.dx)) for sub in m.subs),
        theta_bar=np.zeros((m.Du, m.Dx)),
    )


def policy_distance(p: Policy, q: Policy) -> float:
    """Frobenius distance over all gain blocks."""
    d2 = sum(float(np.sum((a - b) ** 2)) for a, b in zip(p.blocks(), q.blocks()))
    return float(np.sqrt(d2))


def policy_axpy(p: Policy, direction: list, scale: float) -> Policy:
    """Return the policy ``p + scale * direction`` block by block."""
    blocks = direction
    return Policy(
        theta=tuple(t + scale * d for t, d in zip(p.theta, blocks[:-1])),
        theta_bar=p.theta_bar + scale * blocks[-1],
    )


@dataclass(frozen=True)
class DeltaBlock:
    """Residual subsystem of one sub-population.

    The risk deflation of this block uses the effective weight ``mu/n`` in
    front of ``sigma_w``.
    """

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    sigma_w: np.ndarray
    mu: float
    n: int
    f: int

    @property
    def risk_scale(self) -> float:
        return self.mu / self.n


@dataclass(frozen=True)
class AggregatedModel:
    """Block matrices of the deep subsystem plus per-sub-population residual blocks."""

    A_deep: np.ndarray
    B_deep: np.ndarray
    Q_deep: np.ndarray
    R_deep: np.ndarray
    sigma_w_deep: np.ndarray
    blocks: tuple
    x_offsets: tuple = field(default=())
    u_offsets: tuple = field(default=())

    @property
    def Dx(self) -> int:
        return self.A_deep.shape[0]

    @property
    def Du(self) -> int:
        return self.B_deep.shape[1]


@dataclass(frozen=True)
class ValidationReport:
    """Diagnostic outcome of :func:`validate_model`; empty issues means valid."""

    issues: tuple
    max_orthogonality_residual: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.issues


ORTHOGONALITY_TOL = 1e-9


def _sym_check(M: np.ndarray) -> bool:
    scale = max(1.0, float(np.max(np.abs(M))) if M.size else 0.0)
    return bool(np.max(np.abs(M - M.T)) <= 1e-9 * scale)


def _eig_bounds(M: np.ndarray):
    w = np.linalg.eigvalsh((M + M.T) / 2.0)
    return float(w[0]), float(w[-1])


def _is_psd(M: np.ndarray) -> bool:
    lo, hi = _eig_bounds(M)
    return lo >= -1e-9 * max(1.0, abs(hi))


def _is_pd(M: np.ndarray) -> bool:
    lo, hi = _eig_bounds(M)
    return lo > 1e-12 * max(1.0, abs(hi))


def validate_model(m: TeamModel) -> ValidationReport:
    """Check every model invariant and report all violations.

    Purely diagnostic: nothing is raised here, but downstream operations
    assume a model for which the report is empty.
    """
    issues = []
    max_resid = 0.0
    Dx, Du = m.Dx, m.Du

    for s, sub in enumerate(m.subs):
        tag = f"sub-population {s}"
        if sub.n < 1:
            issues.append(f"{tag}: agent count n={sub.n} must be positive")
        if sub.f < 1:
            issues.append(f"{tag}: feature count f={sub.f} must be positive")
        dx, du = sub.dx, sub.du
        if sub.A.shape != (dx, dx):
            issues.append(f"{tag}: A has shape {sub.A.shape}, expected ({dx}, {dx})")
        if sub.B.shape[0] != dx:
            issues.append(f"{tag}: B has shape {sub.B.shape}, expected ({dx}, {du})")
        for name, M, dim in (("Q", sub.Q, dx), ("R", sub.R, du),
                             ("sigma_x", sub.sigma_x, dx), ("sigma_w", sub.sigma_w, dx)):
            if M.shape != (dim, dim):
                issues.append(f"{tag}: {name} has shape {M.shape}, expected ({dim}, {dim})")
        if len(sub.Abar) != sub.f:
            issues.append(f"{tag}: Abar has {len(sub.Abar)} feature blocks, expected {sub.f}")
        if len(sub.Bbar) != sub.f:
            issues.append(f"{tag}: Bbar has {len(sub.Bbar)} feature blocks, expected {sub.f}")
        for j, M in enumerate(sub.Abar):
            if M.shape != (dx, Dx):
                issues.append(f"{tag}: Abar[{j}] has shape {M.shape}, expected ({dx}, {Dx})")
        for j, M in enumerate(sub.Bbar):
            if M.shape != (dx, Du):
                issues.append(f"{tag}: Bbar[{j}] has shape {M.shape}, expected ({dx}, {Du})")
        if sub.alpha.shape != (sub.n, sub.f):
            issues.append(f"{tag}: alpha has shape {sub.alpha.shape}, expected ({sub.n}, {sub.f})")
        else:
            gram = sub.alpha.T @ sub.alpha / sub.n - np.eye(sub.f)
            for j in range(sub.f):
                for jp in range(j, sub.f):
                    resid = abs(gram[j, jp])
                    max_resid = max(max_resid, resid)
                    if resid > ORTHOGONALITY_TOL:
                        issues.append(
                            f"{tag}: influence factors not orthonormal for features "
                            f"({j}, {jp}), residual {resid:.3e}"
                        )
        if sub.mu <= 0:
            issues.append(f"{tag}: mu={sub.mu} must be positive")
        if sub.Q.shape == (dx, dx):
            if not _sym_check(sub.Q):
                issues.append(f"{tag}: Q is not symmetric")
            elif not _is_psd(sub.Q):
                issues.append(f"{tag}: Q is not positive semi-definite")
        if sub.R.shape == (du, du):
            if not _sym_check(sub.R):
                issues.append(f"{tag}: R is not symmetric")
            elif not _is_pd(sub.R):
                issues.append(f"{tag}: R is not positive definite")
        for name, M in (("sigma_x", sub.sigma_x), ("sigma_w", sub.sigma_w)):
            if M.shape == (dx, dx):
                if not _sym_check(M):
                    issues.append(f"{tag}: {name} is not symmetric")
                elif not _is_pd(M):
                    issues.append(f"{tag}: {name} is not positive definite")

    if m.qbar_cross.shape != (Dx, Dx):
        issues.append(f"qbar_cross has shape {m.qbar_cross.shape}, expected ({Dx}, {Dx})")
    elif not _sym_check(m.qbar_cross):
        issues.append("qbar_cross is not symmetric")
    if m.rbar_cross.shape != (Du, Du):
        issues.append(f"rbar_cross has shape {m.rbar_cross.shape}, expected ({Du}, {Du})")
    elif not _sym_check(m.rbar_cross):
        issues.append("rbar_cross is not symmetric")
    if m.lam < 0:
        issues.append(f"risk factor {m.lam} must be nonnegative")

    # convexity of the assembled deep cost
    if not issues:
        Qd, Rd = _deep_cost_matrices(m)
        if not _is_psd(Qd):
            issues.append("assembled deep-state cost matrix is not positive semi-definite")
        if not _is_pd(Rd):
            issues.append("assembled deep-action cost matrix is not positive definite")

    return ValidationReport(issues=tuple(issues), max_orthogonality_residual=max_resid)


def _deep_cost_matrices(m: TeamModel):
    Qd = m.qbar_cross.copy()
    Rd = m.rbar_cross.copy()
    for s, sub in enumerate(m.subs):
        for j in range(sub.f):
            sl = m.x_slice(s, j)
            Qd[sl, sl] += sub.mu * sub.Q
            su = m.u_slice(s, j)
            Rd[su, su] += sub.mu * sub.R
    return Qd, Rd


def aggregate(m: TeamModel) -> AggregatedModel:
    """Assemble the deep-subsystem block matrices and the residual blocks.

    Deterministic and idempotent: the output depends only on the input
    values. Raises :class:`ModelDimensionError` naming the first offending
    block if any matrix shape is inconsistent.
    """
    Dx, Du = m.Dx, m.Du
    for s, sub in enumerate(m.subs):
        dx, du = sub.dx, sub.du
        if sub.B.shape != (dx, du):
            raise ModelDimensionError(
                f"B of sub-population {s} has shape {sub.B.shape}, expected ({dx}, {du})")
        for j, M in enumerate(sub.Abar):
            if M.shape != (dx, Dx):
                raise ModelDimensionError(
                    f"Abar[{j}] of sub-population {s} has shape {M.shape}, expected ({dx}, {Dx})")
        for j, M in enumerate(sub.Bbar):
            if M.shape != (dx, Du):
                raise ModelDimensionError(
                    f"Bbar[{j}] of sub-population {s} has shape {M.shape}, expected ({dx}, {Du})")
    if m.qbar_cross.shape != (Dx, Dx):
        raise ModelDimensionError(
            f"qbar_cross has shape {m.qbar_cross.shape}, expected ({Dx}, {Dx})")
    if m.rbar_cross.shape != (Du, Du):
        raise ModelDimensionError(
            f"rbar_cross has shape {m.rbar_cross.shape}, expected ({Du}, {Du})")

    A_deep = np.zeros((Dx, Dx))
    B_deep = np.zeros((Dx, Du))
    sigma_w_deep = np.zeros((Dx, Dx))
    for s, sub in enumerate(m.subs):
        for j in range(sub.f):
            rows = m.x_slice(s, j)
            A_deep[rows, :] = sub.Abar[j]
            A_deep[rows, m.x_slice(s, j)] += sub.A
            B_deep[rows, :] = sub.Bbar[j]
            B_deep[rows, m.u_slice(s, j)] += sub.B
            sigma_w_deep[rows, rows] = sub.sigma_w / sub.n

    Q_deep, R_deep = _deep_cost_matrices(m)
    blocks = tuple(
        DeltaBlock(A=sub.A, B=sub.B, Q=sub.Q, R=sub.R, sigma_w=sub.sigma_w,
                   mu=sub.mu, n=sub.n, f=sub.f)
        for sub in m.subs
    )
    return AggregatedModel(
        A_deep=A_deep, B_deep=B_deep, Q_deep=Q_deep, R_deep=R_deep,
        sigma_w_deep=sigma_w_deep, blocks=blocks,
        x_offsets=tuple(m.x_offset(s) for s in range(m.S)),
        u_offsets=tuple(m.u_offset(s) for s in range(m.S)),
    )


def is_weakly_coupled(m: TeamModel) -> bool:
    """True iff all coupling acts feature-by-feature.

    Requires every ``Abar[j]``/``Bbar[j]`` of sub-population ``s`` to touch
    only the (s, j) block of the deep vector, and the cross cost matrices to
    be block-diagonal in the same partition. Enables the decomposed Riccati
    solve.
    """
    Dx, Du = m.Dx, m.Du
    for s, sub in enumerate(m.subs):
        for j in range(sub.f):
            own_x = m.x_slice(s, j)
            own_u = m.u_slice(s, j)
            mask_x = np.ones(Dx, dtype=bool)
            mask_x[own_x] = False
            mask_u = np.ones(Du, dtype=bool)
            mask_u[own_u] = False
            if np.any(sub.Abar[j][:, mask_x] != 0.0):
                return False
            if np.any(sub.Bbar[j][:, mask_u] != 0.0):
                return False

    def _block_diagonal(M, slices):
        mask = np.zeros(M.shape, dtype=bool)
        for sl in slices:
            mask[sl, sl] = True
        return not np.any(M[~mask] != 0.0)

    x_slices = [m.x_slice(s, j) for s, sub in enumerate(m.subs) for j in range(sub.f)]
    u_slices = [m.u_slice(s, j) for s, sub in enumerate(m.subs) for j in range(sub.f)]
    return _block_diagonal(m.qbar_cross, x_slices) and _block_diagonal(m.rbar_cross, u_slices)


def spectral_radius(M: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(M)))) if M.size else 0.0


def closed_loop_radii(agg: AggregatedModel, p: Policy):
    """Spectral radii of the residual and deep closed loops under ``p``."""
    local = [spectral_radius(b.A + b.B @ t) for b, t in zip(agg.blocks, p.theta)]
    deep = spectral_radius(agg.A_deep + agg.B_deep @ p.theta_bar)
    return local, deep


def is_stable_policy(agg: AggregatedModel, p: Policy, margin: float = 0.0) -> bool:
    local, deep = closed_loop_radii(agg, p)
    return all(r < 1.0 - margin for r in local) and deep < 1.0 - margin
